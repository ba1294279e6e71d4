//! Forward-only tensor math for the hyperparameter encoder and the detail
//! network.

mod nets;
mod weights;

pub use nets::{
    encoder_forward, enhance, enhance_with, DetailInput, DetailNet, EncoderNet, Enhanced, FusionModel,
    ENCODER_MIN_SIDE,
};
pub use weights::{load_weights, save_weights, Architecture, WeightStore};

use crate::error::{Error, Result};

/// Batch-norm epsilon.
pub const BN_EPS: f32 = 1e-5;

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape("tensor", "shape product overflows"))?;
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("tensor", "non-finite value"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(what, format!("expected rank 3, got shape {:?}", self.shape))),
        }
    }
}

/// Stride-1 cross-correlation with zero padding `k / 2`, so spatial size is
/// preserved. `x: [C, H, W]`, `weight: [O, C, k, k]`, `bias: [O]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = x.dims3("conv2d input")?;
    let (c_out, wc, kh, kw) = match weight.shape[..] {
        [o, c, kh, kw] => (o, c, kh, kw),
        _ => return Err(Error::shape("conv2d weight", format!("expected rank 4, got {:?}", weight.shape))),
    };
    if wc != c_in {
        return Err(Error::shape(
            "conv2d weight",
            format!("input channels: weight has {wc}, input has {c_in}"),
        ));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape("conv2d weight", format!("kernel {kh}x{kw} must be square and odd")));
    }
    if bias.shape != [c_out] {
        return Err(Error::shape(
            "conv2d bias",
            format!("output channels: expected [{c_out}], got {:?}", bias.shape),
        ));
    }
    let k = kh;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![0.0f32; c_out * plane];
    for o in 0..c_out {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias.data[o]);
        for c in 0..c_in {
            let src = &x.data[c * plane..(c + 1) * plane];
            let wbase = (o * c_in + c) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                // output rows whose input row y + dy is inside the image
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).clamp(0, h as isize) as usize;
                for kx in 0..k {
                    let wt = weight.data[wbase + ky * k + kx];
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

pub fn pooled_extent(n: usize, kernel: usize, stride: usize) -> usize {
    (n - kernel) / stride + 1
}

/// Window max over `kernel x kernel` windows with no padding.
pub fn max_pool(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("max_pool input")?;
    if h < kernel || w < kernel {
        return Err(Error::shape(
            "max_pool input",
            format!("{h}x{w} smaller than {kernel}x{kernel} kernel"),
        ));
    }
    let (oh, ow) = (pooled_extent(h, kernel, stride), pooled_extent(w, kernel, stride));
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = &x.data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..kernel {
                    let row = &src[(oy * stride + ky) * w..];
                    for kx in 0..kernel {
                        m = m.max(row[ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// `[C, H, W] -> [C]`.
pub fn global_max_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("global_max_pool input")?;
    let plane = h * w;
    let data = (0..c)
        .map(|ch| {
            x.data[ch * plane..(ch + 1) * plane]
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    Tensor::new(vec![c], data)
}

/// `weight: [O, I]`, `bias: [O]`, `x: [I]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (o, i) = match weight.shape[..] {
        [o, i] => (o, i),
        _ => return Err(Error::shape("linear weight", format!("expected rank 2, got {:?}", weight.shape))),
    };
    if x.shape != [i] {
        return Err(Error::shape("linear input", format!("expected [{i}], got {:?}", x.shape)));
    }
    if bias.shape != [o] {
        return Err(Error::shape("linear bias", format!("expected [{o}], got {:?}", bias.shape)));
    }
    let data = (0..o)
        .map(|r| {
            weight.data[r * i..(r + 1) * i]
                .iter()
                .zip(&x.data)
                .fold(bias.data[r], |acc, (w, v)| acc + w * v)
        })
        .collect();
    Tensor::new(vec![o], data)
}

/// Inference-mode batch norm over the channel axis of a `[C, H, W]` tensor.
pub fn batch_norm(x: &mut Tensor, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) -> Result<()> {
    let (c, h, w) = x.dims3("batch_norm input")?;
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != c) {
        return Err(Error::shape("batch_norm", format!("parameters must have {c} channels")));
    }
    let plane = h * w;
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
        for v in &mut x.data[ch * plane..(ch + 1) * plane] {
            *v = gamma[ch] * (*v - mean[ch]) * inv + beta[ch];
        }
    }
    Ok(())
}

pub fn relu(x: &mut Tensor) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}
