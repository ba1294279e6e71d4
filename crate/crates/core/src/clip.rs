//! Embedding-space losses for prompt/image pairing, enhancement guidance and
//! prompt refinement, plus the deterministic stand-in image encoder and the
//! `EMB1` embedding table format.
//!
//! All similarities are bare dot products between unit vectors, softmaxed over
//! a positive and a negative prompt. There is no temperature.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::image::Image;

/// Unit-norm embedding tolerance.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Scales `values` to unit length. Fails on empty, zero or non-finite input.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Embedding("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Embedding("non-finite component".into()));
        }
        let norm = l2(&values);
        if norm == 0.0 {
            return Err(Error::Embedding("zero vector has no direction".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Accepts `values` only if already unit length within [`UNIT_TOLERANCE`].
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2(&values);
        if values.is_empty() || !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Embedding(format!("norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self, other)?;
        Ok(dot(&self.values, &other.values))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("embedding dims {} vs {}", a.dim(), b.dim())))
    }
}

/// Positive (normal-light) and negative (low-light) prompt embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPair {
    pub pos: Embedding,
    pub neg: Embedding,
}

impl PromptPair {
    pub fn new(pos: Embedding, neg: Embedding) -> Result<Self> {
        check_dims(&pos, &neg)?;
        Ok(Self { pos, neg })
    }

    pub fn dim(&self) -> usize {
        self.pos.dim()
    }

    pub fn swapped(&self) -> PromptPair {
        PromptPair {
            pos: self.neg.clone(),
            neg: self.pos.clone(),
        }
    }
}

/// Ranking margins of the cue refinement loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    /// Required gap between the normal-light and low-light references.
    pub p0: f64,
    /// Reference-vs-enhanced gap.
    pub p1: f64,
    /// Gap between consecutive enhancement strengths.
    pub p2: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            p0: 0.9,
            p1: 0.2,
            p2: 0.3,
        }
    }
}

impl Margins {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        for (name, v) in [("p0", p0), ("p1", p1), ("p2", p2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("margin {name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { p0, p1, p2 })
    }
}

/// Binary label of an image in the pairing loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// `x = 0`
    LowLight,
    /// `x = 1`
    NormalLight,
}

/// `exp(a) / (exp(a) + exp(b))`.
#[inline]
pub fn softmax2(a: f64, b: f64) -> f64 {
    let ea = a.exp();
    ea / (ea + b.exp())
}

pub fn similarity_g(e_img: &Embedding, pair: &PromptPair) -> Result<f64> {
    Ok(softmax2(e_img.dot(&pair.pos)?, e_img.dot(&pair.neg)?))
}

/// `-ln g` for normal-light images, `-ln(1 - g)` for low-light ones.
pub fn loss_li(e_img: &Embedding, label: Label, pair: &PromptPair) -> Result<f64> {
    check_dims(e_img, &pair.pos)?;
    check_dims(e_img, &pair.neg)?;
    Ok(li_raw(e_img.values(), label, pair.pos.values(), pair.neg.values()).0)
}

/// Loss and `d/d pos`, `d/d neg` scale factors: the gradients are
/// `coef * e_img` and `-coef * e_img`.
#[inline]
fn li_raw(e: &[f64], label: Label, pos: &[f64], neg: &[f64]) -> (f64, f64) {
    let (a, b) = (dot(e, pos), dot(e, neg));
    match label {
        Label::NormalLight => {
            let g = softmax2(a, b);
            (-g.ln(), -(1.0 - g))
        }
        Label::LowLight => {
            let not_g = softmax2(b, a);
            (-not_g.ln(), 1.0 - not_g)
        }
    }
}

/// Mean pairing loss over labelled image embeddings, with its gradient with
/// respect to the raw (not renormalized) prompt vectors.
pub fn mean_loss_li_grad(samples: &[(&[f64], Label)], pos: &[f64], neg: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = samples.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gp = vec![0.0; pos.len()];
    let mut gn = vec![0.0; neg.len()];
    for (e, label) in samples {
        let (l, coef) = li_raw(e, *label, pos, neg);
        loss += l;
        for (i, v) in e.iter().enumerate() {
            gp[i] += coef * v / n;
            gn[i] -= coef * v / n;
        }
    }
    (loss / n, gp, gn)
}

/// `-ln( exp(e.t_tt) / (exp(e.pos) + exp(e.neg)) )`, evaluated as written.
pub fn loss_ehc(e_enhanced: &Embedding, t_tt: &Embedding, pair: &PromptPair) -> Result<f64> {
    let num = e_enhanced.dot(t_tt)?;
    let a = e_enhanced.dot(&pair.pos)?;
    let b = e_enhanced.dot(&pair.neg)?;
    let m = a.max(b);
    Ok(-(num - m) + ((a - m).exp() + (b - m).exp()).ln())
}

/// Correlation of an image with the refined prompt, softmaxed against the
/// negative prompt.
pub fn correlation_r(e_img: &Embedding, t_tt: &Embedding, t_neg: &Embedding) -> Result<f64> {
    Ok(softmax2(e_img.dot(t_tt)?, e_img.dot(t_neg)?))
}

/// Which reading of the second ranking term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CwMode {
    /// `S1 = p1 - (r_T - r_F)`.
    #[default]
    Literal,
    /// `S1 = p1 - (r_T - r_en)`.
    TextConsistent,
}

/// Correlations of the seven images entering the refinement loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlations {
    pub r_t: f64,
    pub r_f: f64,
    pub r_en: f64,
    pub r_en3: f64,
    pub r_en2: f64,
    pub r_en1: f64,
    pub r_en0: f64,
}

impl Correlations {
    pub fn to_array(&self) -> [f64; 7] {
        [self.r_t, self.r_f, self.r_en, self.r_en3, self.r_en2, self.r_en1, self.r_en0]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            r_t: a[0],
            r_f: a[1],
            r_en: a[2],
            r_en3: a[3],
            r_en2: a[4],
            r_en1: a[5],
            r_en0: a[6],
        }
    }

    /// The six hinge arguments `S_0..S_5`.
    pub fn hinge_terms(&self, m: &Margins, mode: CwMode) -> [f64; 6] {
        let s1 = match mode {
            CwMode::Literal => m.p1 - (self.r_t - self.r_f),
            CwMode::TextConsistent => m.p1 - (self.r_t - self.r_en),
        };
        [
            m.p0 - (self.r_t - self.r_f),
            s1,
            m.p2 - (self.r_en - self.r_en3),
            m.p2 - (self.r_en3 - self.r_en2),
            m.p2 - (self.r_en2 - self.r_en1),
            m.p2 - (self.r_en1 - self.r_en0),
        ]
    }
}

/// Sum of `max(0, S_i)` over the six ranking terms.
pub fn loss_cw(r: &Correlations, m: &Margins, mode: CwMode) -> Result<f64> {
    if let Some(v) = r.to_array().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("correlation {v} outside [0, 1]")));
    }
    Ok(cw_loss_and_partials(r, m, mode).0)
}

/// Loss plus `d loss / d r` in [`Correlations::to_array`] order. The hinge
/// derivative at exactly zero is taken as zero.
pub fn cw_loss_and_partials(r: &Correlations, m: &Margins, mode: CwMode) -> (f64, [f64; 7]) {
    let s = r.hinge_terms(m, mode);
    // dS_i / dr_j; each S_i = margin - (r_a - r_b)
    let s1_pair = match mode {
        CwMode::Literal => (0, 1),
        CwMode::TextConsistent => (0, 2),
    };
    let pairs = [(0, 1), s1_pair, (2, 3), (3, 4), (4, 5), (5, 6)];
    let mut loss = 0.0;
    let mut d = [0.0; 7];
    for (si, (a, b)) in s.iter().zip(pairs) {
        if *si > 0.0 {
            loss += si;
            d[a] -= 1.0;
            d[b] += 1.0;
        }
    }
    (loss, d)
}

/// Fixed image embeddings for refining the positive prompt.
#[derive(Debug, Clone)]
pub struct RefinementSet {
    pub t_neg: Embedding,
    /// Normal-light reference image.
    pub e_t: Embedding,
    /// Low-light reference image.
    pub e_f: Embedding,
    /// Enhanced images from strongest to weakest: `I_en, I_en3, I_en2, I_en1, I_en0`.
    pub series: [Embedding; 5],
    pub margins: Margins,
    pub mode: CwMode,
}

impl RefinementSet {
    pub fn dim(&self) -> usize {
        self.t_neg.dim()
    }

    pub fn check(&self) -> Result<()> {
        for e in [&self.e_t, &self.e_f].into_iter().chain(&self.series) {
            check_dims(e, &self.t_neg)?;
        }
        Ok(())
    }

    fn images(&self) -> [&Embedding; 7] {
        [
            &self.e_t,
            &self.e_f,
            &self.series[0],
            &self.series[1],
            &self.series[2],
            &self.series[3],
            &self.series[4],
        ]
    }

    pub fn correlations(&self, t_tt: &[f64]) -> Correlations {
        let imgs = self.images();
        Correlations::from_array(std::array::from_fn(|i| {
            let e = imgs[i].values();
            softmax2(dot(e, t_tt), dot(e, self.t_neg.values()))
        }))
    }

    /// `loss_cw` as a function of a raw prompt vector and its gradient.
    pub fn loss_and_grad(&self, t_tt: &[f64]) -> (f64, Vec<f64>) {
        let imgs = self.images();
        let r = self.correlations(t_tt);
        let (loss, dr) = cw_loss_and_partials(&r, &self.margins, self.mode);
        let ra = r.to_array();
        let mut grad = vec![0.0; t_tt.len()];
        for k in 0..7 {
            if dr[k] == 0.0 {
                continue;
            }
            // d r / d t = r (1 - r) e
            let coef = dr[k] * ra[k] * (1.0 - ra[k]);
            for (g, v) in grad.iter_mut().zip(imgs[k].values()) {
                *g += coef * v;
            }
        }
        (loss, grad)
    }
}

// ---------------------------------------------------------------------------
// Providers

/// Source of image and prompt embeddings.
pub trait EmbeddingProvider {
    fn encode_image(&self, img: &Image) -> Result<Embedding>;
    fn lookup(&self, name: &str) -> Option<Embedding>;
}

/// Pooling grid of the stand-in encoder.
pub const TEST_ENCODER_GRID: usize = 8;
pub const TEST_ENCODER_DIM: usize = TEST_ENCODER_GRID * TEST_ENCODER_GRID * 3;

fn bin(i: usize, n: usize) -> (usize, usize) {
    let g = TEST_ENCODER_GRID;
    let lo = (i * n / g).min(n - 1);
    let hi = ((i + 1) * n / g).max(lo + 1).min(n);
    (lo, hi)
}

/// Average-pools to `8 x 8 x 3`, subtracts the global mean and normalizes.
/// A flat image maps to the first basis vector.
pub fn test_encoder(img: &Image) -> Embedding {
    let (h, w) = (img.height(), img.width());
    let g = TEST_ENCODER_GRID;
    let mut v = Vec::with_capacity(TEST_ENCODER_DIM);
    for gy in 0..g {
        let (y0, y1) = bin(gy, h);
        for gx in 0..g {
            let (x0, x1) = bin(gx, w);
            let mut acc = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = img.pixel(y, x);
                    for c in 0..3 {
                        acc[c] += px[c];
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            v.extend(acc.map(|a| a / n));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in &mut v {
        *x -= mean;
    }
    // a flat image leaves only rounding residue
    if l2(&v) < 1e-9 {
        return Embedding::basis(TEST_ENCODER_DIM, 0);
    }
    Embedding::normalized(v).unwrap_or_else(|_| Embedding::basis(TEST_ENCODER_DIM, 0))
}

/// Deterministic provider: images through [`test_encoder`], prompts from a table.
#[derive(Debug, Clone, Default)]
pub struct TestEncoder {
    pub prompts: EmbeddingTable,
}

impl EmbeddingProvider for TestEncoder {
    fn encode_image(&self, img: &Image) -> Result<Embedding> {
        Ok(test_encoder(img))
    }

    fn lookup(&self, name: &str) -> Option<Embedding> {
        self.prompts.get(name).cloned()
    }
}

// ---------------------------------------------------------------------------
// EMB1

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
/// Rows whose stored norm is off by more than this are renormalized with a warning.
pub const NORM_WARN: f64 = 1e-4;
/// Rows whose stored norm is off by more than this are rejected.
pub const NORM_REJECT: f64 = 1e-2;

/// Ordered table of named embeddings sharing one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    entries: Vec<(String, Embedding)>,
    /// Names of rows renormalized on load.
    pub warnings: Vec<String>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, e: Embedding) -> Result<()> {
        let name = name.into();
        if let Some((_, first)) = self.entries.first() {
            check_dims(first, &e)?;
        }
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = e;
        } else {
            self.entries.push((name, e));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Embedding> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn require(&self, name: &str) -> Result<&Embedding> {
        self.get(name)
            .ok_or_else(|| Error::Embedding(format!("no embedding named `{name}`")))
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|(_, e)| e.dim())
    }
}

fn read<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Embedding(format!("truncated while reading {what} at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn load_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
        return Err(Error::Embedding("bad magic, expected EMB1".into()));
    }
    let mut pos = 4;
    let count = u32::from_le_bytes(read(bytes, &mut pos, 4, "count")?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(read(bytes, &mut pos, 4, "dim")?.try_into().unwrap()) as usize;
    if dim == 0 && count > 0 {
        return Err(Error::Embedding("zero embedding dimension".into()));
    }
    let mut table = EmbeddingTable::new();
    let mut seen = HashSet::new();
    for row in 0..count {
        let name_len = u16::from_le_bytes(read(bytes, &mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(read(bytes, &mut pos, name_len, "name")?)
            .map_err(|_| Error::Embedding(format!("row {row}: name is not UTF-8")))?
            .to_owned();
        let raw = read(bytes, &mut pos, dim * 4, "values")
            .map_err(|_| Error::Embedding(format!("row {row} (`{name}`): fewer than {dim} values")))?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let norm = l2(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_REJECT {
            return Err(Error::Embedding(format!("row `{name}` has norm {norm}")));
        }
        if (norm - 1.0).abs() > NORM_WARN {
            log::warn!("embedding `{name}` has norm {norm}, renormalizing");
            table.warnings.push(name.clone());
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Embedding(format!("duplicate name `{name}`")));
        }
        table.entries.push((name, Embedding::normalized(values)?));
    }
    if pos != bytes.len() {
        return Err(Error::Embedding(format!(
            "{} trailing bytes: row sizes disagree with header dim {dim}",
            bytes.len() - pos
        )));
    }
    Ok(table)
}

pub fn save_embeddings(table: &EmbeddingTable) -> Vec<u8> {
    let dim = table.dim().unwrap_or(0);
    let mut out = Vec::new();
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (name, e) in &table.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for &v in e.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}
