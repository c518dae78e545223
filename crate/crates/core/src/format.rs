//! `.qat` model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   magic        b"QAT1"
//! 4   version      u8 (= 1)
//! 5   kind         u8: 0 FP32 training graph, 1 frozen static (QAT export), 2 frozen dynamic (DQ)
//! 6   flags        u8: bit 0 = fake quantization enabled (kind 0 only)
//! 7   reserved     u8 (= 0)
//! 8   config       u32 x 7: vocab_size, seq_len, hidden, heads, ffn, layers, num_classes
//! 36  bits         u32
//! 40  ema_decay    f32
//! 44  count        u32 number of tensors
//! 48  directory    `count` entries, sorted by name:
//!                    name_len u16, name (UTF-8), dtype u8 (0 f32, 1 i8, 2 i32),
//!                    ndim u8, dims u32 x ndim, scale f32 (0 when unused),
//!                    offset u64 (from payload start), nbytes u64
//! ..  payload_len  u64
//! ..  payload      raw tensor bytes
//! ```
//!
//! FC layers are listed in forward order (`l0.attn.q`, `l0.attn.k`,
//! `l0.attn.v`, `l0.attn.o`, `l0.ffn.in`, `l0.ffn.out`, `l1...`, `head`).
//! FP32 artifacts keep the activation trackers in `ema` (f32, `[n, 2]`:
//! running max, initialized flag); static frozen artifacts keep the
//! activation scales in `act_scale` (f32, `[n]`). See docs/FORMAT.md.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, ModelConfig, QuantizedLinear, TransformerEncoderModel};
use crate::quant::{EmaTracker, QuantParams, QuantizedTensor};
use crate::runtime::{
    ActivationScale, FrozenBias, FrozenBlock, FrozenKind, FrozenLayerNorm, QuantizedLinearFrozen,
    QuantizedModelFrozen,
};
use crate::tensor::{IntTensor32, IntTensor8, Tensor};

pub const MAGIC: &[u8; 4] = b"QAT1";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "qat";

const KIND_FLOAT: u8 = 0;
const KIND_STATIC: u8 = 1;
const KIND_DYNAMIC: u8 = 2;

/// A model as stored on disk.
#[derive(Debug, Clone)]
pub enum ModelArtifact {
    Float(TransformerEncoderModel),
    Frozen(QuantizedModelFrozen),
}

impl ModelArtifact {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelArtifact::Float(m) if m.quant_enabled() => "fp32 (qat training graph)",
            ModelArtifact::Float(_) => "fp32",
            ModelArtifact::Frozen(m) if m.kind == FrozenKind::Static => "int8 (qat export)",
            ModelArtifact::Frozen(_) => "int8 (dynamic)",
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            ModelArtifact::Float(m) => m.config(),
            ModelArtifact::Frozen(m) => &m.config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I32 => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            2 => Some(DType::I32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::F32 | DType::I32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I8 => "i8",
            DType::I32 => "i32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TensorData {
    F32(Tensor),
    I8(IntTensor8),
    I32(IntTensor32),
}

impl TensorData {
    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::I8(t) => t.shape(),
            TensorData::I32(t) => t.shape(),
        }
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            TensorData::I8(t) => out.extend(t.data().iter().map(|&v| v as u8)),
            TensorData::I32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    data: TensorData,
    scale: f32,
}

/// One directory record, as reported by [`inspect`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactSummary {
    pub kind: u8,
    pub quant_enabled: bool,
    pub config: ModelConfig,
    pub bits: u32,
    pub ema_decay: f32,
    pub header_bytes: usize,
    pub payload_bytes: usize,
    pub entries: Vec<DirectoryEntry>,
}

type Entries = BTreeMap<String, Entry>;

fn put_f32(map: &mut Entries, name: String, t: &Tensor) {
    map.insert(name, Entry { data: TensorData::F32(t.clone()), scale: 0.0 });
}

fn put_ln(map: &mut Entries, name: &str, gain: &Tensor, bias: &Tensor) {
    put_f32(map, format!("{name}.gain"), gain);
    put_f32(map, format!("{name}.bias"), bias);
}

fn put_quantized(map: &mut Entries, name: String, q: &QuantizedTensor) {
    map.insert(name, Entry { data: TensorData::I8(q.values().clone()), scale: q.scale() });
}

fn float_entries(m: &TransformerEncoderModel) -> Entries {
    let mut map = Entries::new();
    put_f32(&mut map, "emb.tok".into(), &m.token_embedding.table.value);
    put_f32(&mut map, "emb.pos".into(), &m.position_embedding.table.value);
    for (name, ln) in m.layer_norms() {
        put_ln(&mut map, &name, &ln.gain.value, &ln.bias.value);
    }
    let mut ema = Vec::new();
    for (name, l) in m.linears() {
        put_f32(&mut map, format!("{name}.weight"), &l.weight.value);
        put_f32(&mut map, format!("{name}.bias"), &l.bias.value);
        let t = l.tracker();
        ema.extend([t.running_max(), if t.is_initialized() { 1.0 } else { 0.0 }]);
    }
    put_f32(&mut map, "ema".into(), &Tensor::from_parts(vec![ema.len() / 2, 2], ema));
    map
}

fn frozen_linear_entries(map: &mut Entries, name: &str, l: &QuantizedLinearFrozen) {
    put_quantized(map, format!("{name}.weight"), &l.weight);
    match &l.bias {
        FrozenBias::Int32 { values, scale } => {
            map.insert(
                format!("{name}.bias"),
                Entry { data: TensorData::I32(values.clone()), scale: *scale },
            );
        }
        FrozenBias::Float(b) => put_f32(map, format!("{name}.bias"), b),
    }
}

fn frozen_linear_names(layers: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..layers {
        for n in ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.in", "ffn.out"] {
            names.push(format!("l{i}.{n}"));
        }
    }
    names.push("head".into());
    names
}

fn frozen_entries(m: &QuantizedModelFrozen) -> Entries {
    let mut map = Entries::new();
    put_quantized(&mut map, "emb.tok".into(), &m.token_embedding);
    put_quantized(&mut map, "emb.pos".into(), &m.position_embedding);
    put_ln(&mut map, "emb.ln", &m.embedding_norm.gain, &m.embedding_norm.bias);
    for (i, b) in m.blocks.iter().enumerate() {
        put_ln(&mut map, &format!("l{i}.ln1"), &b.norm1.gain, &b.norm1.bias);
        put_ln(&mut map, &format!("l{i}.ln2"), &b.norm2.gain, &b.norm2.bias);
    }
    let mut scales = Vec::new();
    for (name, l) in frozen_linear_names(m.config.layers).iter().zip(m.linears()) {
        frozen_linear_entries(&mut map, name, l);
        if let ActivationScale::Static(s) = l.input_scale {
            scales.push(s);
        }
    }
    if m.kind == FrozenKind::Static {
        put_f32(&mut map, "act_scale".into(), &Tensor::from_parts(vec![scales.len()], scales));
    }
    map
}

/// Deterministic byte encoding of `artifact`.
pub fn serialize(artifact: &ModelArtifact) -> Vec<u8> {
    let (kind, flags, config, quant, decay, entries) = match artifact {
        ModelArtifact::Float(m) => (
            KIND_FLOAT,
            u8::from(m.quant_enabled()),
            *m.config(),
            m.quant_params(),
            m.ema_decay(),
            float_entries(m),
        ),
        ModelArtifact::Frozen(m) => (
            if m.kind == FrozenKind::Static { KIND_STATIC } else { KIND_DYNAMIC },
            0,
            m.config,
            m.quant,
            0.0,
            frozen_entries(m),
        ),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, kind, flags, 0]);
    for v in [
        config.vocab_size,
        config.seq_len,
        config.hidden,
        config.heads,
        config.ffn,
        config.layers,
        config.num_classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&quant.bits().to_le_bytes());
    out.extend_from_slice(&decay.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut payload = Vec::new();
    for (name, e) in &entries {
        let start = payload.len() as u64;
        e.data.write_bytes(&mut payload);
        let shape = e.data.shape();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(e.data.dtype().code());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&e.scale.to_le_bytes());
        out.extend_from_slice(&start.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64 - start).to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Trainable scalars implied by `c`; a lower bound on what the payload holds.
fn parameter_count(c: &ModelConfig) -> u128 {
    let [v, s, h, f, l, k] = [c.vocab_size, c.seq_len, c.hidden, c.ffn, c.layers, c.num_classes].map(|x| x as u128);
    let block = 4 * (h * h + h) + (f * h + f) + (h * f + h) + 4 * h;
    (v + s) * h + 2 * h + l * block + k * h + k
}

struct Parsed {
    summary: ArtifactSummary,
    entries: BTreeMap<String, (Entry, usize)>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic; not a .qat artifact"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let kind = r.u8("kind")?;
    if kind > KIND_DYNAMIC {
        return Err(Error::format(5, format!("unknown artifact kind {kind}")));
    }
    let flags = r.u8("flags")?;
    if flags > 1 || (flags != 0 && kind != KIND_FLOAT) {
        return Err(Error::format(6, format!("invalid flags {flags:#x}")));
    }
    r.u8("reserved")?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        seq_len: dims[1],
        hidden: dims[2],
        heads: dims[3],
        ffn: dims[4],
        layers: dims[5],
        num_classes: dims[6],
    };
    config.validate().map_err(|e| Error::format(8, e.to_string()))?;
    let min_bytes = parameter_count(&config).saturating_mul(if kind == KIND_FLOAT { 4 } else { 1 });
    if min_bytes > bytes.len() as u128 {
        return Err(Error::format(8, format!("config implies at least {min_bytes} payload bytes, file has {}", bytes.len())));
    }
    let bits = r.u32("bits")?;
    let ema_decay = r.f32("ema_decay")?;
    let count = r.u32("tensor count")? as usize;

    let mut dir = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let code_at = r.pos;
        let dtype = DType::from_code(r.u8("dtype")?)
            .ok_or_else(|| Error::format(code_at, format!("unknown dtype for {name}")))?;
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        let scale = r.f32("scale")?;
        let offset = r.u64("offset")?;
        let nbytes = r.u64("nbytes")?;
        let expected = shape
            .iter()
            .try_fold(dtype.width() as u64, |acc, &d| acc.checked_mul(d as u64));
        if ndim == 0 || expected.is_none_or(|n| n == 0 || n != nbytes) {
            return Err(Error::format(at, format!("entry {name}: shape {shape:?} does not match {nbytes} bytes")));
        }
        dir.push((at, DirectoryEntry { name, dtype, shape, scale, offset, nbytes }));
    }
    let payload_len = r.u64("payload length")? as usize;
    let payload_start = r.pos;
    let payload = r.take(payload_len, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut by_offset: Vec<&(usize, DirectoryEntry)> = dir.iter().collect();
    by_offset.sort_by_key(|(_, e)| e.offset);
    let mut end = 0u64;
    for (at, e) in &by_offset {
        if e.offset < end {
            return Err(Error::format(*at, format!("entry {} overlaps the previous tensor", e.name)));
        }
        end = e.offset.checked_add(e.nbytes).filter(|&x| x <= payload_len as u64).ok_or_else(|| {
            Error::format(*at, format!("entry {} runs past the payload", e.name))
        })?;
    }
    let total: u64 = dir.iter().map(|(_, e)| e.nbytes).sum();
    if total != payload_len as u64 {
        return Err(Error::format(payload_start, format!("payload is {payload_len} bytes, directory covers {total}")));
    }

    let mut entries = BTreeMap::new();
    for (at, e) in &dir {
        let raw = &payload[e.offset as usize..(e.offset + e.nbytes) as usize];
        let data = match e.dtype {
            DType::F32 => {
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                TensorData::F32(Tensor::new(e.shape.clone(), v).map_err(|err| Error::format(*at, format!("{}: {err}", e.name)))?)
            }
            DType::I8 => TensorData::I8(IntTensor8::new(e.shape.clone(), raw.iter().map(|&b| b as i8).collect())?),
            DType::I32 => TensorData::I32(IntTensor32::new(
                e.shape.clone(),
                raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
            )?),
        };
        if entries.insert(e.name.clone(), (Entry { data, scale: e.scale }, *at)).is_some() {
            return Err(Error::format(*at, format!("duplicate tensor {}", e.name)));
        }
    }
    let header_bytes = payload_start;
    Ok(Parsed {
        summary: ArtifactSummary {
            kind,
            quant_enabled: flags & 1 == 1,
            config,
            bits,
            ema_decay,
            header_bytes,
            payload_bytes: payload_len,
            entries: dir.into_iter().map(|(_, e)| e).collect(),
        },
        entries,
    })
}

/// Header and directory of an artifact without building the model.
pub fn inspect(bytes: &[u8]) -> Result<ArtifactSummary> {
    Ok(parse(bytes)?.summary)
}

struct Take {
    entries: BTreeMap<String, (Entry, usize)>,
    header_end: usize,
}

impl Take {
    fn entry(&mut self, name: &str) -> Result<(Entry, usize)> {
        self.entries
            .remove(name)
            .ok_or_else(|| Error::format(self.header_end, format!("missing tensor {name}")))
    }

    fn f32(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        match self.entry(name)? {
            (Entry { data: TensorData::F32(t), .. }, at) => {
                if t.shape() != shape {
                    return Err(Error::format(at, format!("{name}: expected shape {shape:?}, got {:?}", t.shape())));
                }
                Ok(t)
            }
            (_, at) => Err(Error::format(at, format!("{name}: expected f32"))),
        }
    }

    fn quantized(&mut self, name: &str, shape: &[usize]) -> Result<QuantizedTensor> {
        match self.entry(name)? {
            (Entry { data: TensorData::I8(t), scale }, at) => {
                if t.shape() != shape {
                    return Err(Error::format(at, format!("{name}: expected shape {shape:?}, got {:?}", t.shape())));
                }
                QuantizedTensor::new(t, scale).map_err(|e| Error::format(at, format!("{name}: {e}")))
            }
            (_, at) => Err(Error::format(at, format!("{name}: expected i8"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((name, (_, at))) = self.entries.into_iter().next() {
            return Err(Error::format(at, format!("unexpected tensor {name}")));
        }
        Ok(())
    }
}

fn load_float(summary: &ArtifactSummary, take: &mut Take) -> Result<TransformerEncoderModel> {
    let quant = QuantParams::new(summary.bits).map_err(|e| Error::format(36, e.to_string()))?;
    let mut m = TransformerEncoderModel::new(summary.config, quant, summary.ema_decay, 0)
        .map_err(|e| Error::format(40, e.to_string()))?;
    let c = summary.config;
    m.token_embedding.table.value = take.f32("emb.tok", &[c.vocab_size, c.hidden])?;
    m.position_embedding.table.value = take.f32("emb.pos", &[c.seq_len, c.hidden])?;
    for (name, ln) in m.layer_norms_mut() {
        load_ln(take, &name, ln, c.hidden)?;
    }
    let decay = summary.ema_decay;
    let n = m.linears().len();
    let ema = take.f32("ema", &[n, 2])?;
    for (i, (name, l)) in m.linears_mut().into_iter().enumerate() {
        load_linear(take, &name, l, decay, ema.row(i))?;
    }
    m.set_quant_enabled(summary.quant_enabled);
    Ok(m)
}

fn load_ln(take: &mut Take, name: &str, ln: &mut LayerNorm, d: usize) -> Result<()> {
    ln.gain.value = take.f32(&format!("{name}.gain"), &[d])?;
    ln.bias.value = take.f32(&format!("{name}.bias"), &[d])?;
    Ok(())
}

fn load_linear(take: &mut Take, name: &str, l: &mut QuantizedLinear, decay: f32, state: &[f32]) -> Result<()> {
    let (o, i) = (l.out_dim(), l.in_dim());
    l.weight.value = take.f32(&format!("{name}.weight"), &[o, i])?;
    l.bias.value = take.f32(&format!("{name}.bias"), &[o])?;
    let key = format!("ema[{name}]");
    let (running, init) = (state[0], state[1]);
    if init != 0.0 && init != 1.0 {
        return Err(Error::format(take.header_end, format!("{key}: bad initialized flag {init}")));
    }
    l.set_tracker(
        EmaTracker::from_state(decay, running, init == 1.0)
            .map_err(|e| Error::format(take.header_end, format!("{key}: {e}")))?,
    );
    Ok(())
}

fn load_frozen_linear(
    take: &mut Take,
    name: &str,
    input_scale: Option<f32>,
    o: usize,
    i: usize,
    max_q: i64,
) -> Result<QuantizedLinearFrozen> {
    let weight = take.quantized(&format!("{name}.weight"), &[o, i])?;
    let bias_name = format!("{name}.bias");
    let (bias, input_scale) = match input_scale {
        Some(s) => {
            let bias = match take.entry(&bias_name)? {
                (Entry { data: TensorData::I32(values), scale }, at) => {
                    if values.shape() != [o] || !(scale > 0.0 && scale.is_finite()) {
                        return Err(Error::format(at, format!("{bias_name}: bad shape or scale")));
                    }
                    FrozenBias::Int32 { values, scale }
                }
                (_, at) => return Err(Error::format(at, format!("{bias_name}: expected i32"))),
            };
            if !(s > 0.0) {
                return Err(Error::format(take.header_end, format!("act_scale[{name}] must be positive")));
            }
            (bias, ActivationScale::Static(s))
        }
        None => (FrozenBias::Float(take.f32(&bias_name, &[o])?), ActivationScale::Dynamic),
    };
    Ok(QuantizedLinearFrozen { weight, bias, input_scale, max_q })
}

fn load_frozen(summary: &ArtifactSummary, take: &mut Take) -> Result<QuantizedModelFrozen> {
    let quant = QuantParams::new(summary.bits).map_err(|e| Error::format(36, e.to_string()))?;
    if quant.bits() > 8 {
        return Err(Error::format(36, "frozen artifacts hold at most 8-bit values"));
    }
    let kind = if summary.kind == KIND_STATIC { FrozenKind::Static } else { FrozenKind::Dynamic };
    let c = summary.config;
    let (d, m) = (c.hidden, quant.max_q());
    let ln = |take: &mut Take, name: &str| -> Result<FrozenLayerNorm> {
        Ok(FrozenLayerNorm {
            gain: take.f32(&format!("{name}.gain"), &[d])?,
            bias: take.f32(&format!("{name}.bias"), &[d])?,
        })
    };
    let names = frozen_linear_names(c.layers);
    let scales = match kind {
        FrozenKind::Static => Some(take.f32("act_scale", &[names.len()])?),
        FrozenKind::Dynamic => None,
    };
    let mut next = 0usize;
    let mut lin = |take: &mut Take, o: usize, i: usize| {
        let s = scales.as_ref().map(|t| t.data()[next]);
        let l = load_frozen_linear(take, &names[next], s, o, i, m);
        next += 1;
        l
    };
    let token_embedding = take.quantized("emb.tok", &[c.vocab_size, d])?;
    let position_embedding = take.quantized("emb.pos", &[c.seq_len, d])?;
    let embedding_norm = ln(take, "emb.ln")?;
    let mut blocks = Vec::with_capacity(c.layers);
    for i in 0..c.layers {
        blocks.push(FrozenBlock {
            query: lin(take, d, d)?,
            key: lin(take, d, d)?,
            value: lin(take, d, d)?,
            output: lin(take, d, d)?,
            ffn_in: lin(take, c.ffn, d)?,
            ffn_out: lin(take, d, c.ffn)?,
            norm1: ln(take, &format!("l{i}.ln1"))?,
            norm2: ln(take, &format!("l{i}.ln2"))?,
        });
    }
    let classifier = lin(take, c.num_classes, d)?;
    Ok(QuantizedModelFrozen {
        config: c,
        quant,
        kind,
        token_embedding,
        position_embedding,
        embedding_norm,
        blocks,
        classifier,
    })
}

/// Parses bytes produced by [`serialize`]. Any inconsistency is a format
/// error carrying the byte position where it was detected.
pub fn deserialize(bytes: &[u8]) -> Result<ModelArtifact> {
    let Parsed { summary, entries } = parse(bytes)?;
    let mut take = Take { entries, header_end: summary.header_bytes };
    let artifact = if summary.kind == KIND_FLOAT {
        ModelArtifact::Float(load_float(&summary, &mut take)?)
    } else {
        ModelArtifact::Frozen(load_frozen(&summary, &mut take)?)
    };
    take.finish()?;
    Ok(artifact)
}

pub fn save(path: &Path, artifact: &ModelArtifact) -> Result<usize> {
    let bytes = serialize(artifact);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len())
}

pub fn load(path: &Path) -> Result<ModelArtifact> {
    deserialize(&std::fs::read(path)?)
}
