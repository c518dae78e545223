//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qat8::nn::ops::{
    attention_core, attention_core_backward, gelu_backward, gelu_forward, layer_norm_backward,
    layer_norm_forward, softmax_backward, softmax_forward, AttentionShape,
};
use qat8::nn::{
    cross_entropy, EncoderBlock, LayerNorm, ModelConfig, MultiHeadAttention, QuantizedEmbedding,
    QuantizedLinear, TransformerEncoderModel,
};
use qat8::quant::{EmaTracker, QuantParams};
use qat8::quant::quantize;
use qat8::runtime::{
    export, fake_quant_linear_infer, int8_linear_infer, ActivationScale, FrozenBias, QuantizedLinearFrozen,
};
use qat8::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], range: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-range..range)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

const FIRST_STEPS: [f64; 4] = [5e-2, 1e-2, 2e-3, 4e-4];
const SHRINK: f64 = 1.4;
const TABLE: usize = 8;
const CONSISTENT: f64 = 1e-4;

/// Ridders' extrapolation of central differences from one starting step:
/// shrinks the step geometrically, extrapolates each column of the Neville
/// table and keeps the estimate whose neighbours agree best. Stops once
/// higher orders diverge, where f32 rounding noise takes over from
/// truncation. Returns the estimate and its error estimate.
fn ridders(central: &mut impl FnMut(f64) -> f64, first: f64) -> (f64, f64) {
    let c2 = SHRINK * SHRINK;
    let mut a = [[0.0f64; TABLE]; TABLE];
    let mut h = first;
    a[0][0] = central(h);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..TABLE {
        h /= SHRINK;
        a[0][i] = central(h);
        let mut fac = c2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= c2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

/// Steep regions (layer norm over a nearly constant row) need tiny steps
/// while flat ones need wide steps to stay above rounding noise. Starting
/// steps are tried from widest down; the first self-consistent estimate is
/// taken, else the one with the smallest error estimate.
fn derivative(mut central: impl FnMut(f64) -> f64) -> f64 {
    let mut best = (0.0, f64::INFINITY);
    for &h in &FIRST_STEPS {
        let (d, err) = ridders(&mut central, h);
        if err <= CONSISTENT * d.abs().max(1.0) {
            return d;
        }
        if err < best.1 {
            best = (d, err);
        }
    }
    best.0
}

/// Numerical gradient of `loss` with respect to each tensor in `inputs`,
/// perturbing one element at a time.
fn numeric_grads(inputs: &[Tensor], loss: &dyn Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0f32; inputs[t].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            let central = |h: f64| {
                let (up, down) = (orig + h as f32, orig - h as f32);
                work[t].data_mut()[i] = up;
                let plus = loss(&work);
                work[t].data_mut()[i] = down;
                let minus = loss(&work);
                work[t].data_mut()[i] = orig;
                (plus - minus) / (up as f64 - down as f64)
            };
            *gi = derivative(central) as f32;
        }
        out.push(Tensor::new(inputs[t].shape().to_vec(), g).unwrap());
    }
    out
}

/// Gradient norms below this are compared in absolute terms, since f32
/// central differences carry noise of order 1e-5.
pub const NORM_FLOOR: f64 = 1e-2;

/// Norm-wise relative error `|a - n| / max(|a|, |n|, NORM_FLOOR)`.
pub fn rel_err(a: &Tensor, n: &Tensor) -> f64 {
    let diff = a.data().iter().zip(n.data()).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(n, n).sqrt()).max(NORM_FLOOR);
    diff / scale
}

fn concat(ts: &[Tensor]) -> Tensor {
    let data: Vec<f32> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![data.len()], data).unwrap()
}

/// Relative error of the whole gradient of one case: every input and
/// parameter gradient concatenated into a single vector.
fn worst(analytic: &[Tensor], inputs: &[Tensor], loss: &dyn Fn(&[Tensor]) -> f64) -> f64 {
    let numeric = numeric_grads(inputs, loss);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert_eq!(a.shape(), n.shape());
    }
    rel_err(&concat(analytic), &concat(&numeric))
}

fn dims(rng: &mut ChaCha8Rng, lo: usize) -> usize {
    rng.gen_range(lo..=8)
}

fn linear_from(w: &Tensor, b: &Tensor) -> QuantizedLinear {
    QuantizedLinear::new(w.clone(), b.clone(), QuantParams::default(), EmaTracker::new(0.9).unwrap()).unwrap()
}

fn grad_linear(rng: &mut ChaCha8Rng) -> f64 {
    let (n, i, o) = (dims(rng, 1), dims(rng, 1), dims(rng, 1));
    let inputs = vec![rand_tensor(rng, &[n, i], 1.0), rand_tensor(rng, &[o, i], 1.0), rand_tensor(rng, &[o], 1.0)];
    let up = rand_tensor(rng, &[n, o], 1.0);
    let loss = |t: &[Tensor]| dot(&linear_from(&t[1], &t[2]).forward(&t[0], false).unwrap(), &up);
    let mut l = linear_from(&inputs[1], &inputs[2]);
    l.forward(&inputs[0], true).unwrap();
    let dx = l.backward(&up).unwrap();
    worst(&[dx, l.weight.grad.clone(), l.bias.grad.clone()], &inputs, &loss)
}

/// Layer norm over two features is a sign function of their difference, so
/// every case that normalizes uses at least three.
fn grad_layer_norm(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d) = (dims(rng, 1), dims(rng, 3));
    let mut gain = rand_tensor(rng, &[d], 0.5);
    gain.data_mut().iter_mut().for_each(|g| *g += 1.0);
    let inputs = vec![rand_tensor(rng, &[n, d], 2.0), gain, rand_tensor(rng, &[d], 0.5)];
    let up = rand_tensor(rng, &[n, d], 1.0);
    let loss = |t: &[Tensor]| dot(&layer_norm_forward(&t[0], &t[1], &t[2]).unwrap().0, &up);
    let (_, cache) = layer_norm_forward(&inputs[0], &inputs[1], &inputs[2]).unwrap();
    let (mut gg, mut gb) = (Tensor::zeros(&[d]), Tensor::zeros(&[d]));
    let dx = layer_norm_backward(&up, &cache, &inputs[1], &mut gg, &mut gb).unwrap();
    worst(&[dx, gg, gb], &inputs, &loss)
}

fn grad_gelu(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d) = (dims(rng, 1), dims(rng, 1));
    let inputs = vec![rand_tensor(rng, &[n, d], 3.0)];
    let up = rand_tensor(rng, &[n, d], 1.0);
    let loss = |t: &[Tensor]| dot(&gelu_forward(&t[0]), &up);
    let dx = gelu_backward(&up, &inputs[0]).unwrap();
    worst(&[dx], &inputs, &loss)
}

fn grad_softmax(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d) = (dims(rng, 1), dims(rng, 2));
    let inputs = vec![rand_tensor(rng, &[n, d], 3.0)];
    let up = rand_tensor(rng, &[n, d], 1.0);
    let loss = |t: &[Tensor]| dot(&softmax_forward(&t[0]), &up);
    let dx = softmax_backward(&up, &softmax_forward(&inputs[0])).unwrap();
    worst(&[dx], &inputs, &loss)
}

fn grad_attention_core(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=2);
    let hidden = heads * rng.gen_range(1..=4);
    let (batch, seq) = (rng.gen_range(1..=2), rng.gen_range(1..=4));
    let rows = batch * seq;
    let shape = AttentionShape::new(rows, hidden, seq, heads).unwrap();
    let inputs: Vec<Tensor> = (0..3).map(|_| rand_tensor(rng, &[rows, hidden], 1.5)).collect();
    let up = rand_tensor(rng, &[rows, hidden], 1.0);
    let loss = |t: &[Tensor]| dot(&attention_core(&t[0], &t[1], &t[2], shape).unwrap().0, &up);
    let (_, probs) = attention_core(&inputs[0], &inputs[1], &inputs[2], shape).unwrap();
    let (dq, dk, dv) = attention_core_backward(&up, &inputs[0], &inputs[1], &inputs[2], &probs, shape).unwrap();
    worst(&[dq, dk, dv], &inputs, &loss)
}

fn attention_from(t: &[Tensor], heads: usize) -> MultiHeadAttention {
    MultiHeadAttention::new(
        linear_from(&t[1], &t[2]),
        linear_from(&t[3], &t[4]),
        linear_from(&t[5], &t[6]),
        linear_from(&t[7], &t[8]),
        heads,
    )
    .unwrap()
}

fn grad_multi_head_attention(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=2);
    let hidden = heads * rng.gen_range(1..=4);
    let (batch, seq) = (rng.gen_range(1..=2), rng.gen_range(1..=4));
    let rows = batch * seq;
    let mut inputs = vec![rand_tensor(rng, &[rows, hidden], 1.0)];
    for _ in 0..4 {
        inputs.push(rand_tensor(rng, &[hidden, hidden], 0.8));
        inputs.push(rand_tensor(rng, &[hidden], 0.3));
    }
    let up = rand_tensor(rng, &[rows, hidden], 1.0);
    let loss = |t: &[Tensor]| dot(&attention_from(t, heads).forward(&t[0], seq, false).unwrap(), &up);
    let mut a = attention_from(&inputs, heads);
    a.forward(&inputs[0], seq, true).unwrap();
    let mut analytic = vec![a.backward(&up).unwrap()];
    for l in [&a.query, &a.key, &a.value, &a.output] {
        analytic.push(l.weight.grad.clone());
        analytic.push(l.bias.grad.clone());
    }
    worst(&analytic, &inputs, &loss)
}

fn block_from(t: &[Tensor], heads: usize) -> EncoderBlock {
    EncoderBlock::new(
        attention_from(t, heads),
        LayerNorm::from_params(t[9].clone(), t[10].clone()),
        linear_from(&t[11], &t[12]),
        linear_from(&t[13], &t[14]),
        LayerNorm::from_params(t[15].clone(), t[16].clone()),
    )
}

fn grad_encoder_block(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=2);
    let hidden = heads * rng.gen_range(if heads == 1 { 3 } else { 2 }..=4);
    let ffn = dims(rng, 1);
    let (batch, seq) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
    let rows = batch * seq;
    let mut inputs = vec![rand_tensor(rng, &[rows, hidden], 1.0)];
    for _ in 0..4 {
        inputs.push(rand_tensor(rng, &[hidden, hidden], 0.8));
        inputs.push(rand_tensor(rng, &[hidden], 0.3));
    }
    let ln = |rng: &mut ChaCha8Rng| {
        let mut g = rand_tensor(rng, &[hidden], 0.3);
        g.data_mut().iter_mut().for_each(|v| *v += 1.0);
        [g, rand_tensor(rng, &[hidden], 0.3)]
    };
    inputs.extend(ln(rng));
    inputs.push(rand_tensor(rng, &[ffn, hidden], 0.8));
    inputs.push(rand_tensor(rng, &[ffn], 0.3));
    inputs.push(rand_tensor(rng, &[hidden, ffn], 0.8));
    inputs.push(rand_tensor(rng, &[hidden], 0.3));
    inputs.extend(ln(rng));
    let up = rand_tensor(rng, &[rows, hidden], 1.0);
    let loss = |t: &[Tensor]| dot(&block_from(t, heads).forward(&t[0], seq, false).unwrap(), &up);
    let mut b = block_from(&inputs, heads);
    b.forward(&inputs[0], seq, true).unwrap();
    let mut analytic = vec![b.backward(&up).unwrap()];
    for l in [&b.attention.query, &b.attention.key, &b.attention.value, &b.attention.output] {
        analytic.push(l.weight.grad.clone());
        analytic.push(l.bias.grad.clone());
    }
    analytic.push(b.norm1.gain.grad.clone());
    analytic.push(b.norm1.bias.grad.clone());
    for l in [&b.ffn_in, &b.ffn_out] {
        analytic.push(l.weight.grad.clone());
        analytic.push(l.bias.grad.clone());
    }
    analytic.push(b.norm2.gain.grad.clone());
    analytic.push(b.norm2.bias.grad.clone());
    worst(&analytic, &inputs, &loss)
}

fn grad_embedding(rng: &mut ChaCha8Rng) -> f64 {
    let (vocab, dim, n) = (dims(rng, 1), dims(rng, 1), dims(rng, 1));
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let inputs = vec![rand_tensor(rng, &[vocab, dim], 1.0)];
    let up = rand_tensor(rng, &[n, dim], 1.0);
    let make = |t: &Tensor| QuantizedEmbedding::new(t.clone(), QuantParams::default()).unwrap();
    let loss = |t: &[Tensor]| dot(&make(&t[0]).forward(&ids, false).unwrap(), &up);
    let mut e = make(&inputs[0]);
    e.forward(&ids, true).unwrap();
    e.backward(&up).unwrap();
    worst(&[e.table.grad.clone()], &inputs, &loss)
}

fn grad_cross_entropy(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c) = (dims(rng, 1), dims(rng, 2));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let inputs = vec![rand_tensor(rng, &[n, c], 3.0)];
    let loss = |t: &[Tensor]| cross_entropy(&t[0], &labels).unwrap().0;
    let (_, grad) = cross_entropy(&inputs[0], &labels).unwrap();
    worst(&[grad], &inputs, &loss)
}

fn grad_model(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=2);
    let cfg = ModelConfig {
        vocab_size: rng.gen_range(3..=8),
        seq_len: rng.gen_range(2..=4),
        hidden: heads * rng.gen_range(if heads == 1 { 3 } else { 2 }..=4),
        heads,
        ffn: dims(rng, 2),
        layers: rng.gen_range(1..=2),
        num_classes: rng.gen_range(2..=3),
    };
    let batch = rng.gen_range(1..=3);
    let tokens: Vec<usize> = (0..batch * cfg.seq_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
    let mut model = TransformerEncoderModel::new(cfg, QuantParams::default(), 0.9, rng.gen()).unwrap();
    let inputs: Vec<Tensor> = model.params_mut().iter().map(|p| p.value.clone()).collect();
    let base = model.clone();
    let loss = |t: &[Tensor]| {
        let mut m = base.clone();
        for (p, v) in m.params_mut().into_iter().zip(t) {
            p.value = v.clone();
        }
        cross_entropy(&m.forward(&tokens, false).unwrap(), &labels).unwrap().0
    };
    model.zero_grad();
    let logits = model.forward(&tokens, true).unwrap();
    let (_, g) = cross_entropy(&logits, &labels).unwrap();
    model.backward(&g).unwrap();
    let analytic: Vec<Tensor> = model.params_mut().iter().map(|p| p.grad.clone()).collect();
    worst(&analytic, &inputs, &loss)
}

pub type GradCheck = fn(&mut ChaCha8Rng) -> f64;

/// Every differentiable component, with quantization disabled.
pub const GRADIENT_CHECKS: &[(&str, GradCheck)] = &[
    ("linear", grad_linear),
    ("layer_norm", grad_layer_norm),
    ("gelu", grad_gelu),
    ("softmax", grad_softmax),
    ("attention_core", grad_attention_core),
    ("multi_head_attention", grad_multi_head_attention),
    ("encoder_block", grad_encoder_block),
    ("embedding", grad_embedding),
    ("cross_entropy", grad_cross_entropy),
    ("full_model", grad_model),
];

/// Worst relative error of `check` over `cases` random cases.
pub fn run_gradient_check(check: GradCheck, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases).map(|_| check(&mut r)).fold(0.0, f64::max)
}

/// Random FC layer with quantization on and an initialized tracker.
pub fn random_qat_linear(rng: &mut ChaCha8Rng) -> QuantizedLinear {
    let (i, o) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
    let range = rng.gen_range(0.01..2.0);
    let w = rand_tensor(rng, &[o, i], range);
    let b = rand_tensor(rng, &[o], 0.5);
    let tracker = EmaTracker::from_state(0.9, rng.gen_range(0.05..3.0), true).unwrap();
    let mut l = QuantizedLinear::new(w, b, QuantParams::default(), tracker).unwrap();
    l.set_quant_enabled(true);
    l
}

/// Worst per-element gaps over `cases` random frozen FC layers: the integer
/// path against the FP32 fake-quant forward with the same frozen scales, and
/// against an f64 evaluation of the same quantized operands.
pub fn fc_equivalence(cases: usize, seed: u64) -> (f32, f64) {
    let mut r = rng(seed);
    let (mut vs_fake, mut vs_exact) = (0.0f32, 0.0f64);
    for _ in 0..cases {
        let l = random_qat_linear(&mut r);
        let rows = r.gen_range(1..=8);
        let range = r.gen_range(0.05..3.0);
        let x = rand_tensor(&mut r, &[rows, l.in_dim()], range);
        let frozen = QuantizedLinearFrozen::export(&l).unwrap();
        let int = int8_linear_infer(&frozen, &x).unwrap();
        let fake = fake_quant_linear_infer(&frozen, &x).unwrap();
        let sx = match frozen.input_scale {
            ActivationScale::Static(s) => s,
            ActivationScale::Dynamic => unreachable!(),
        };
        let (sw, (bq, bs)) = match &frozen.bias {
            FrozenBias::Int32 { values, scale } => (frozen.weight.scale(), (values.data().to_vec(), *scale)),
            FrozenBias::Float(_) => unreachable!(),
        };
        let xq = quantize(&x, sx, 127).unwrap();
        let wq = frozen.weight.values();
        for i in 0..rows {
            for o in 0..l.out_dim() {
                let dot: f64 = xq.row(i).iter().zip(wq.row(o)).map(|(&a, &b)| (a as f64 / sx as f64) * (b as f64 / sw as f64)).sum();
                let exact = dot + bq[o] as f64 / bs as f64;
                let got = int.data()[i * l.out_dim() + o];
                vs_exact = vs_exact.max((got as f64 - exact).abs());
                vs_fake = vs_fake.max((got - fake.data()[i * l.out_dim() + o]).abs());
            }
        }
    }
    (vs_fake, vs_exact)
}

/// A QAT model whose trackers have seen one batch of random sequences.
pub fn calibrated_model(cfg: ModelConfig, seed: u64) -> TransformerEncoderModel {
    let mut m = TransformerEncoderModel::new(cfg, QuantParams::default(), 0.9, seed).unwrap();
    m.set_quant_enabled(true);
    let mut r = rng(seed ^ 0x5eed);
    let tokens: Vec<usize> = (0..64 * cfg.seq_len).map(|_| r.gen_range(0..cfg.vocab_size)).collect();
    m.forward(&tokens, true).unwrap();
    m.clear_cache();
    m
}

pub struct ModelAgreement {
    /// Integer logits against the fake-quant simulation of the frozen model.
    pub max_logit_gap: f32,
    pub median_logit_gap: f32,
    /// Share of inputs whose logits all agree within `1e-3`.
    pub within_tolerance: f64,
    pub argmax_agreement: f64,
    /// Integer predictions against the eval-mode QAT training graph.
    pub training_graph_agreement: f64,
}

pub fn random_sequences(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..cfg.seq_len).map(|_| r.gen_range(0..cfg.vocab_size)).collect()).collect()
}

/// Compares the exported integer model with its FP32 fake-quant simulation
/// and with the training graph it came from.
pub fn model_equivalence(model: &TransformerEncoderModel, inputs: usize, seed: u64) -> ModelAgreement {
    let frozen = export(model).unwrap();
    let mut m = model.clone();
    let seqs = random_sequences(model.config(), inputs, seed);
    let (mut gaps, mut agree, mut agree_graph) = (Vec::with_capacity(inputs), 0usize, 0usize);
    for chunk in seqs.chunks(256) {
        let graph = m.forward(&chunk.concat(), false).unwrap();
        let int = frozen.forward_batch(chunk).unwrap();
        for (i, (row, seq)) in int.iter().zip(chunk).enumerate() {
            let sim = frozen.simulate(seq).unwrap();
            gaps.push(sim.iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max));
            agree += usize::from(argmax(&sim) == argmax(row));
            agree_graph += usize::from(argmax(graph.row(i)) == argmax(row));
        }
    }
    let within = gaps.iter().filter(|&&g| g <= 1e-3).count();
    gaps.sort_by(f32::total_cmp);
    ModelAgreement {
        max_logit_gap: gaps[gaps.len() - 1],
        median_logit_gap: gaps[gaps.len() / 2],
        within_tolerance: within as f64 / inputs as f64,
        argmax_agreement: agree as f64 / inputs as f64,
        training_graph_agreement: agree_graph as f64 / inputs as f64,
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Outcome of one randomized quantization property.
pub struct PropertyRun {
    pub name: &'static str,
    pub tensors: usize,
    pub violations: usize,
}

/// f32 slack on the half-step bound: the product `x * scale` and the final
/// division each round once.
pub fn round_trip_bound(x: f32, scale: f32) -> f32 {
    let eps = f32::EPSILON;
    0.5 / scale * (1.0 + 4.0 * eps) + 4.0 * eps * x.abs()
}

fn random_scale(r: &mut ChaCha8Rng) -> f32 {
    10f32.powf(r.gen_range(-2.0..3.0))
}

fn random_quant_input(r: &mut ChaCha8Rng, limit: f32) -> Tensor {
    let n = r.gen_range(1..=16);
    let data = (0..n)
        .map(|_| match r.gen_range(0..8) {
            0 => 0.0,
            1 => limit * if r.gen() { 1.0 } else { -1.0 },
            _ => r.gen_range(-limit..=limit),
        })
        .collect();
    Tensor::new(vec![n], data).unwrap()
}

/// Symmetry, saturation, idempotence and the half-step round-trip bound,
/// each over `tensors` random tensors with random scales.
pub fn quant_properties(tensors: usize, seed: u64) -> Vec<PropertyRun> {
    use qat8::quant::fake_quantize;
    const M: i64 = 127;
    let mut r = rng(seed);
    let mut runs = Vec::new();

    let mut violations = 0;
    for _ in 0..tensors {
        let s = random_scale(&mut r);
        let x = random_quant_input(&mut r, 2.0 * M as f32 / s);
        let neg = x.map(|v| -v);
        let (a, b) = (quantize(&x, s, M).unwrap(), quantize(&neg, s, M).unwrap());
        violations += usize::from(a.data().iter().zip(b.data()).any(|(&p, &q)| p != -q));
    }
    runs.push(PropertyRun { name: "symmetry", tensors, violations });

    let mut violations = 0;
    for _ in 0..tensors {
        let s = random_scale(&mut r);
        let x = random_quant_input(&mut r, 4.0 * M as f32 / s);
        let q = quantize(&x, s, M).unwrap();
        let bad = x.data().iter().zip(q.data()).any(|(&v, &q)| {
            let q = q as i64;
            let scaled = (v * s).round();
            q.abs() > M || (scaled >= M as f32 && q != M) || (scaled <= -(M as f32) && q != -M)
        });
        violations += usize::from(bad);
    }
    runs.push(PropertyRun { name: "saturation", tensors, violations });

    let mut violations = 0;
    for _ in 0..tensors {
        let s = random_scale(&mut r);
        let x = random_quant_input(&mut r, 2.0 * M as f32 / s);
        let once = fake_quantize(&x, s, M).unwrap();
        let twice = fake_quantize(&once, s, M).unwrap();
        violations += usize::from(once.data().iter().zip(twice.data()).any(|(a, b)| a.to_bits() != b.to_bits()));
    }
    runs.push(PropertyRun { name: "idempotence", tensors, violations });

    let mut violations = 0;
    for _ in 0..tensors {
        let s = random_scale(&mut r);
        let x = random_quant_input(&mut r, M as f32 / s);
        let fq = fake_quantize(&x, s, M).unwrap();
        let bad = x
            .data()
            .iter()
            .zip(fq.data())
            .any(|(&v, &f)| v.abs() <= M as f32 / s && (f - v).abs() > round_trip_bound(v, s));
        violations += usize::from(bad);
    }
    runs.push(PropertyRun { name: "round_trip_half_step", tensors, violations });
    runs
}
