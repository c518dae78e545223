use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[task]
seq_len = 8
num_examples = 600

[model]
hidden = 16
ffn = 32
layers = 1

[train]
epochs = 2
batch_size = 16

[compare]
seeds = [7]
"#;

fn qat8(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qat8")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn train(&self, mode: &str, out: &str, metrics: &str) -> Output {
        let (cfg, out, metrics) = (self.s("run.toml"), self.s(out), self.s(metrics));
        qat8(&["train", "--config", &cfg, "--mode", mode, "--out", &out, "--metrics", &metrics])
    }
}

fn accuracy(out: &Output) -> f64 {
    let text = stdout(out);
    let line = text.lines().find(|l| l.starts_with("accuracy")).expect("accuracy line");
    line.split_whitespace().nth(1).unwrap().trim_end_matches('%').parse().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn missing_config_exits_2() {
    let out = qat8(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_config_key_exits_2() {
    let w = Workspace::new();
    std::fs::write(w.path("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    assert_eq!(code(&qat8(&["train", "--config", &w.s("bad.toml")])), 2);
    assert_eq!(code(&qat8(&["compare", "--config", &w.s("run.toml"), "--heads", "3"])), 2);
}

#[test]
fn diverging_training_exits_3() {
    let w = Workspace::new();
    let out = qat8(&["train", "--config", &w.s("run.toml"), "--lr", "1e30", "--out-dir", &w.s("r")]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupted_artifact_exits_4() {
    let w = Workspace::new();
    std::fs::write(w.path("junk.qat"), b"QAT1\x01\x00").unwrap();
    assert_eq!(code(&qat8(&["eval", &w.s("junk.qat")])), 4);
    assert_eq!(code(&qat8(&["inspect", &w.s("junk.qat")])), 4);
    std::fs::write(w.path("junk.qat"), b"not a model").unwrap();
    assert_eq!(code(&qat8(&["quantize", &w.s("junk.qat"), "--method", "dq", "--out", &w.s("x.qat")])), 4);
}

#[test]
fn pipeline_is_deterministic_and_export_matches_training_graph() {
    let w = Workspace::new();
    for (mode, a, b) in [("fp32", "f1.qat", "f2.qat"), ("qat", "q1.qat", "q2.qat")] {
        assert_eq!(code(&w.train(mode, a, "m1.json")), 0);
        assert_eq!(code(&w.train(mode, b, "m2.json")), 0);
        assert_eq!(read(&w.path(a)), read(&w.path(b)), "{mode} artifacts differ");
        assert_eq!(read(&w.path("m1.json")), read(&w.path("m2.json")), "{mode} metrics differ");
    }
    assert_ne!(read(&w.path("f1.qat")), read(&w.path("q1.qat")));

    let export = qat8(&["quantize", &w.s("q1.qat"), "--method", "export", "--out", &w.s("frozen.qat")]);
    assert_eq!(code(&export), 0);
    assert!(stdout(&export).contains("size ratio"));

    let refused = qat8(&["quantize", &w.s("f1.qat"), "--method", "export", "--out", &w.s("nope.qat")]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("QAT"));
    assert!(!w.path("nope.qat").exists());

    assert_eq!(code(&qat8(&["quantize", &w.s("f1.qat"), "--method", "dq", "--out", &w.s("dq.qat")])), 0);

    let cfg = w.s("run.toml");
    let graph = accuracy(&qat8(&["eval", &w.s("q1.qat"), "--config", &cfg]));
    let frozen = qat8(&["eval", &w.s("frozen.qat"), "--config", &cfg]);
    let again = qat8(&["eval", &w.s("frozen.qat"), "--config", &cfg]);
    assert_eq!(stdout(&frozen), stdout(&again));
    assert!((graph - accuracy(&frozen)).abs() <= 0.1, "{graph} vs {}", accuracy(&frozen));
    assert_eq!(code(&qat8(&["eval", &w.s("dq.qat"), "--config", &cfg])), 0);

    let inspect = stdout(&qat8(&["inspect", &w.s("frozen.qat")]));
    assert!(inspect.contains("int8 (qat export)"));
    assert!(inspect.contains("act_scale"));

    let sizes = qat8(&["size-report", &w.s("f1.qat"), &w.s("frozen.qat")]);
    assert_eq!(code(&sizes), 0);
    assert!(stdout(&sizes).contains("ratio"));
}

#[test]
fn eval_rejects_a_mismatched_task() {
    let w = Workspace::new();
    assert_eq!(code(&w.train("fp32", "f.qat", "m.json")), 0);
    let out = qat8(&["eval", &w.s("f.qat"), "--config", &w.s("run.toml"), "--seq-len", "12"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_writes_a_stable_report() {
    let w = Workspace::new();
    let cfg = w.s("run.toml");
    let first = qat8(&["compare", "--config", &cfg, "--out", &w.s("a.json")]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(code(&qat8(&["compare", "--config", &cfg, "--out", &w.s("b.json")])), 0);
    assert_eq!(read(&w.path("a.json")), read(&w.path("b.json")));
    let report: serde_json::Value = serde_json::from_slice(&read(&w.path("a.json"))).unwrap();
    let methods = report["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert_eq!(m["std"].as_f64().unwrap(), 0.0);
        for key in ["method", "mean", "std", "relative_error"] {
            assert!(m.get(key).is_some());
        }
    }
    assert_eq!(report["seeds"][0]["seed"].as_u64().unwrap(), 7);
}
