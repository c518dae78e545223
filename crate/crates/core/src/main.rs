use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qat8::config::RunConfig;
use qat8::format::{self, ModelArtifact};
use qat8::harness::{frozen_accuracy, run_comparison};
use qat8::nn::{evaluate, train, TransformerEncoderModel};
use qat8::runtime::{dynamic_quantize, export};
use qat8::{Error, Result};

#[derive(Parser)]
#[command(name = "qat8", version, about = "8-bit quantization-aware training for small transformer encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an FP32 baseline or a QAT model and write a .qat artifact.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "fp32")]
        mode: Mode,
        /// Artifact path. Defaults to <out_dir>/model-<mode>.qat.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metrics path. Defaults to <out_dir>/train-<mode>.json.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Freeze a trained artifact into an Int8 model.
    Quantize {
        model: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of an artifact on the configured task.
    Eval {
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "dev")]
        split: Split,
    },
    /// Print the header and tensor directory of an artifact.
    Inspect { model: PathBuf },
    /// Baseline vs QAT vs DQ over the configured seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds, overriding compare.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Report path. Defaults to <out_dir>/compare.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Byte sizes of an FP32 artifact and a frozen artifact.
    SizeReport { fp32: PathBuf, quantized: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fp32,
    Qat,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Export,
    Dq,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Dev,
}

/// Config file plus flag overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    ema_decay: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut c.paths.out_dir, &self.out_dir);
        set(&mut c.task.seq_len, &self.seq_len);
        set(&mut c.model.hidden, &self.hidden);
        set(&mut c.model.heads, &self.heads);
        set(&mut c.model.ffn, &self.ffn);
        set(&mut c.model.layers, &self.layers);
        set(&mut c.quant.bits, &self.bits);
        set(&mut c.quant.ema_decay, &self.ema_decay);
        set(&mut c.train.epochs, &self.epochs);
        set(&mut c.train.batch_size, &self.batch_size);
        set(&mut c.train.lr, &self.lr);
        set(&mut c.train.seed, &self.seed);
        c.validate()?;
        Ok(c)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Export(_) => 2,
        Error::Numeric(_) => 3,
        Error::Format { .. } => 4,
        _ => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metrics serialize");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    mode: &'a str,
    config: &'a RunConfig,
    report: qat8::nn::TrainReport,
    artifact_bytes: usize,
}

fn cmd_train(run: &RunArgs, mode: Mode, out: Option<PathBuf>, metrics: Option<PathBuf>) -> Result<()> {
    let cfg = run.resolve()?;
    let name = match mode {
        Mode::Fp32 => "fp32",
        Mode::Qat => "qat",
    };
    let out = out.unwrap_or_else(|| cfg.paths.out_dir.join(format!("model-{name}.qat")));
    let metrics = metrics.unwrap_or_else(|| cfg.paths.out_dir.join(format!("train-{name}.json")));
    let data = cfg.task.generate()?;
    let mut model = TransformerEncoderModel::new(cfg.model_config(), cfg.quant_params()?, cfg.quant.ema_decay, cfg.train.seed)?;
    model.set_quant_enabled(matches!(mode, Mode::Qat));
    let report = train(&mut model, &data.train, &cfg.train_config())?;
    ensure_dir(&out)?;
    ensure_dir(&metrics)?;
    let bytes = format::save(&out, &ModelArtifact::Float(model))?;
    for e in &report.epochs {
        println!("epoch {:>3}  loss {:.4}  train acc {:.2}%", e.epoch, e.mean_loss, 100.0 * e.train_accuracy);
    }
    println!("wrote {} ({bytes} bytes)", out.display());
    write_json(&metrics, &TrainMetrics { mode: name, config: &cfg, report, artifact_bytes: bytes })
}

fn cmd_quantize(input: &Path, method: Method, out: &Path) -> Result<()> {
    let in_bytes = std::fs::metadata(input)?.len() as usize;
    let model = match format::load(input)? {
        ModelArtifact::Float(m) => m,
        ModelArtifact::Frozen(_) => {
            return Err(Error::InvalidArgument(format!("{} is already frozen", input.display())))
        }
    };
    let frozen = match method {
        Method::Export if !model.quant_enabled() => {
            return Err(Error::Export(
                "export needs a QAT-trained model with activation statistics; use `--method dq` for an FP32 model".into(),
            ))
        }
        Method::Export => export(&model)?,
        Method::Dq => dynamic_quantize(&model)?,
    };
    ensure_dir(out)?;
    let out_bytes = format::save(out, &ModelArtifact::Frozen(frozen))?;
    println!("wrote {} ({out_bytes} bytes)", out.display());
    println!("size ratio {:.4} ({out_bytes} / {in_bytes})", out_bytes as f64 / in_bytes as f64);
    Ok(())
}

fn cmd_eval(path: &Path, run: &RunArgs, split: Split) -> Result<()> {
    let cfg = run.resolve()?;
    let artifact = format::load(path)?;
    let mc = artifact.config();
    if mc.vocab_size != cfg.task.vocab_size || mc.seq_len != cfg.task.seq_len || mc.num_classes != cfg.task.num_classes {
        return Err(Error::Config(format!(
            "artifact expects vocab {} / seq_len {} / {} classes, task has {} / {} / {}",
            mc.vocab_size, mc.seq_len, mc.num_classes, cfg.task.vocab_size, cfg.task.seq_len, cfg.task.num_classes
        )));
    }
    let data = cfg.task.generate()?;
    let set = match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
    };
    let acc = match artifact {
        ModelArtifact::Float(mut m) => evaluate(&mut m, set, cfg.train.batch_size)?,
        ModelArtifact::Frozen(m) => frozen_accuracy(&m, set)?,
    };
    println!("accuracy {:.4}% ({} examples)", 100.0 * acc, set.len());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let summary = format::inspect(&bytes)?;
    let kind = format::deserialize(&bytes)?.kind_name();
    let c = summary.config;
    println!("kind      {kind}");
    println!("bits      {}", summary.bits);
    if summary.kind == 0 {
        println!("ema decay {}", summary.ema_decay);
    }
    println!(
        "model     vocab {} seq_len {} hidden {} heads {} ffn {} layers {} classes {}",
        c.vocab_size, c.seq_len, c.hidden, c.heads, c.ffn, c.layers, c.num_classes
    );
    println!("bytes     {} header + {} payload", summary.header_bytes, summary.payload_bytes);
    println!("tensors   {}", summary.entries.len());
    for e in &summary.entries {
        let shape = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        if e.scale != 0.0 {
            println!("  {:<20} {:<4} {:<8} {:>8} B  scale {}", e.name, e.dtype.name(), shape, e.nbytes, e.scale);
        } else {
            println!("  {:<20} {:<4} {:<8} {:>8} B", e.name, e.dtype.name(), shape, e.nbytes);
        }
    }
    Ok(())
}

fn cmd_compare(run: &RunArgs, seeds: Option<Vec<u64>>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = run.resolve()?;
    if let Some(s) = seeds {
        cfg.compare.seeds = s;
        cfg.validate()?;
    }
    let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("compare.json"));
    let report = run_comparison(&cfg.comparison())?;
    print!("{}", report.to_table());
    ensure_dir(&out)?;
    let mut text = report.to_json();
    text.push('\n');
    std::fs::write(&out, text)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_size_report(fp32: &Path, quantized: &Path) -> Result<()> {
    let a = std::fs::read(fp32)?;
    let b = std::fs::read(quantized)?;
    let sa = format::inspect(&a)?;
    let sb = format::inspect(&b)?;
    if sa.config != sb.config {
        return Err(Error::InvalidArgument("artifacts describe different architectures".into()));
    }
    println!("{:<10} {:>10} {:>10} {:>10}", "artifact", "header", "payload", "total");
    println!("{:<10} {:>10} {:>10} {:>10}", "fp32", sa.header_bytes, sa.payload_bytes, a.len());
    println!("{:<10} {:>10} {:>10} {:>10}", "quantized", sb.header_bytes, sb.payload_bytes, b.len());
    println!("ratio {:.4}", b.len() as f64 / a.len() as f64);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, mode, out, metrics } => cmd_train(&run, mode, out, metrics),
        Command::Quantize { model, method, out } => cmd_quantize(&model, method, &out),
        Command::Eval { model, run, split } => cmd_eval(&model, &run, split),
        Command::Inspect { model } => cmd_inspect(&model),
        Command::Compare { run, seeds, out } => cmd_compare(&run, seeds, out),
        Command::SizeReport { fp32, quantized } => cmd_size_report(&fp32, &quantized),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
