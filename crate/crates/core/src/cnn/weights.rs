//! `NNW1` weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NNW1" | u32 layer count | per layer: u16 name len, UTF-8 name, u8 rank,
//! rank x u32 dims, row-major f32 data | u32 CRC32 of everything before it
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NNW1";

const ENCODER_CHANNELS: [usize; 6] = [3, 8, 16, 32, 64, 128];
const DETAIL_WIDTH: usize = 32;
const DETAIL_BLOCKS: usize = 3;

/// Which network(s) a weight store holds. A fusion store carries the encoder
/// layers followed by the detail layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Encoder,
    Detail,
    Fusion,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Encoder => "encoder",
            Architecture::Detail => "detail",
            Architecture::Fusion => "fusion",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [Self::Encoder, Self::Detail, Self::Fusion]
            .into_iter()
            .find(|a| a.id() == id)
    }

    /// Canonical `(name, shape)` table.
    pub fn layout(self) -> Vec<(String, Vec<usize>)> {
        match self {
            Architecture::Encoder => encoder_layout(),
            Architecture::Detail => detail_layout(),
            Architecture::Fusion => {
                let mut v = encoder_layout();
                v.extend(detail_layout());
                v
            }
        }
    }
}

fn encoder_layout() -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    for i in 0..5 {
        let (cin, cout) = (ENCODER_CHANNELS[i], ENCODER_CHANNELS[i + 1]);
        v.push((format!("enc.conv{}.weight", i + 1), vec![cout, cin, 3, 3]));
        v.push((format!("enc.conv{}.bias", i + 1), vec![cout]));
    }
    v.push(("enc.fc.weight".into(), vec![6, 128]));
    v.push(("enc.fc.bias".into(), vec![6]));
    v
}

fn push_conv_bn(v: &mut Vec<(String, Vec<usize>)>, conv: &str, bn: &str, cin: usize, cout: usize) {
    v.push((format!("{conv}.weight"), vec![cout, cin, 3, 3]));
    v.push((format!("{conv}.bias"), vec![cout]));
    for p in ["gamma", "beta", "mean", "var"] {
        v.push((format!("{bn}.{p}"), vec![cout]));
    }
}

fn detail_layout() -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    push_conv_bn(&mut v, "det.conv_in", "det.bn_in", 3, DETAIL_WIDTH);
    for b in 1..=DETAIL_BLOCKS {
        for j in 1..=2 {
            push_conv_bn(
                &mut v,
                &format!("det.block{b}.conv{j}"),
                &format!("det.block{b}.bn{j}"),
                DETAIL_WIDTH,
                DETAIL_WIDTH,
            );
        }
    }
    v.push(("det.conv_out.weight".into(), vec![3, DETAIL_WIDTH, 3, 3]));
    v.push(("det.conv_out.bias".into(), vec![3]));
    v
}

/// Named tensors matching one [`Architecture`] exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    arch: Architecture,
    tensors: Vec<(String, Tensor)>,
}

impl WeightStore {
    /// Validates the tensors against the architecture's layout. Order must
    /// match the canonical table.
    pub fn new(arch: Architecture, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = arch.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Weights(format!(
                "{} architecture expects {} tensors, got {}",
                arch.id(),
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name {
                return Err(Error::Weights(format!("expected tensor `{name}`, found `{got_name}`")));
            }
            if shape[..] != *t.shape() {
                return Err(Error::Weights(format!(
                    "tensor `{name}` has shape {:?}, architecture requires {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { arch, tensors })
    }

    /// Infers the architecture from the names, then validates.
    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let arch = match tensors.first().map(|(n, _)| n.as_str()) {
            Some(n) if n.starts_with("enc.") => {
                if tensors.len() > encoder_layout().len() {
                    Architecture::Fusion
                } else {
                    Architecture::Encoder
                }
            }
            Some(n) if n.starts_with("det.") => Architecture::Detail,
            Some(n) => return Err(Error::Weights(format!("unrecognized first tensor `{n}`"))),
            None => return Err(Error::Weights("empty weight store".into())),
        };
        Self::new(arch, tensors)
    }

    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .collect();
        Self { arch, tensors }
    }

    /// Seeded initialization: uniform He-style conv/linear weights, small
    /// biases, unit batch-norm statistics. The detail output layer is scaled
    /// down so the residual stays modest.
    pub fn seeded(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<f32> = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let mut bound = (6.0 / fan_in as f32).sqrt();
                    if name.starts_with("det.conv_out") {
                        bound *= 0.1;
                    }
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                } else if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".mean") {
                    (0..n).map(|_| rng.random_range(-0.05f32..0.05)).collect()
                } else {
                    // gamma, var
                    (0..n).map(|_| rng.random_range(0.9f32..1.1)).collect()
                };
                (name, Tensor { shape, data })
            })
            .collect();
        Self { arch, tensors }
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Weights(format!("missing tensor `{name}`")))
    }

    pub fn has_encoder(&self) -> bool {
        matches!(self.arch, Architecture::Encoder | Architecture::Fusion)
    }

    pub fn has_detail(&self) -> bool {
        matches!(self.arch, Architecture::Detail | Architecture::Fusion)
    }

    /// Sub-store holding only the tensors of `arch` (which must be contained
    /// in this store).
    pub fn subset(&self, arch: Architecture) -> Result<WeightStore> {
        let names: Vec<String> = arch.layout().into_iter().map(|(n, _)| n).collect();
        let tensors = names
            .into_iter()
            .map(|n| self.get(&n).map(|t| (n.clone(), t.clone())))
            .collect::<Result<Vec<_>>>()?;
        WeightStore::new(arch, tensors)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Weights(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
}

pub fn load_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Weights("bad magic, expected NNW1".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Weights("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Weights(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let count = r.u32("layer count")? as usize;
    // every layer needs at least 3 header bytes
    if count > body.len() / 3 {
        return Err(Error::Weights(format!("layer count {count} exceeds file size")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Weights("layer name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Weights(format!("tensor `{name}` too large")))?;
        let raw = r.take(n, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Weights(format!("tensor `{name}`: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Weights(format!("{} trailing bytes before checksum", body.len() - r.pos)));
    }
    WeightStore::from_tensors(tensors)
}

pub fn save_weights(ws: &WeightStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(ws.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ws.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}
