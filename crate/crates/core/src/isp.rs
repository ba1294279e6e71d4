//! The four differentiable enhancement filters (white balance, gamma,
//! contrast, sharpening), their composition, and the analytic Jacobian of
//! the composed pipeline with respect to the six hyperparameters.
//!
//! Every stage clamps its output to `[0, 1]`. A sample that lands on or
//! beyond a clamp boundary carries a zero derivative.

use std::fmt;
use std::str::FromStr;

use crate::blur::{convolve_reflect, sharpen_kernel};
use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image, Plane, LUMA_WEIGHTS};

/// Luminance below which the contrast curve uses its analytic limit `En -> 0`.
pub const CONTRAST_LUM_FLOOR: f64 = 1e-6;

/// One of the six filter hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hyper {
    WhiteRed,
    WhiteGreen,
    WhiteBlue,
    Gamma,
    Alpha,
    Lambda,
}

impl Hyper {
    pub const ALL: [Hyper; 6] = [
        Hyper::WhiteRed,
        Hyper::WhiteGreen,
        Hyper::WhiteBlue,
        Hyper::Gamma,
        Hyper::Alpha,
        Hyper::Lambda,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Hyper::WhiteRed => "w_r",
            Hyper::WhiteGreen => "w_g",
            Hyper::WhiteBlue => "w_b",
            Hyper::Gamma => "gamma",
            Hyper::Alpha => "alpha",
            Hyper::Lambda => "lambda",
        }
    }

    /// Inclusive valid range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Hyper::WhiteRed | Hyper::WhiteGreen | Hyper::WhiteBlue => (0.5, 2.0),
            Hyper::Gamma => (0.3, 3.0),
            Hyper::Alpha => (0.0, 1.0),
            Hyper::Lambda => (0.0, 5.0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

fn check_range(h: Hyper, value: f64) -> Result<()> {
    let (lo, hi) = h.range();
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(Error::ParamRange {
            name: h.key(),
            value,
            lo,
            hi,
        })
    }
}

/// Filter hyperparameters, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IspParams {
    pub w_r: f64,
    pub w_g: f64,
    pub w_b: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for IspParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl IspParams {
    pub const fn identity() -> Self {
        Self {
            w_r: 1.0,
            w_g: 1.0,
            w_b: 1.0,
            gamma: 1.0,
            alpha: 0.0,
            lambda: 0.0,
        }
    }

    pub fn new(w_r: f64, w_g: f64, w_b: f64, gamma: f64, alpha: f64, lambda: f64) -> Result<Self> {
        Self::from_array([w_r, w_g, w_b, gamma, alpha, lambda])
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        let p = Self::from_array_unchecked(v);
        p.validate()?;
        Ok(p)
    }

    fn from_array_unchecked(v: [f64; 6]) -> Self {
        Self {
            w_r: v[0],
            w_g: v[1],
            w_b: v[2],
            gamma: v[3],
            alpha: v[4],
            lambda: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.w_r, self.w_g, self.w_b, self.gamma, self.alpha, self.lambda]
    }

    pub fn get(&self, h: Hyper) -> f64 {
        self.to_array()[h.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for (h, v) in Hyper::ALL.iter().zip(self.to_array()) {
            check_range(*h, v)?;
        }
        Ok(())
    }

    /// Clamps every component into its range. Non-finite values go to the
    /// identity value.
    pub fn project(v: [f64; 6]) -> Self {
        let ident = Self::identity().to_array();
        let mut out = [0.0; 6];
        for (i, h) in Hyper::ALL.iter().enumerate() {
            let (lo, hi) = h.range();
            out[i] = if v[i].is_finite() { v[i].clamp(lo, hi) } else { ident[i] };
        }
        Self::from_array_unchecked(out)
    }

    /// Componentwise `identity + t * (self - identity)`.
    pub fn interpolate_from_identity(&self, t: f64) -> Self {
        let id = Self::identity().to_array();
        let me = self.to_array();
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = id[i] + t * (me[i] - id[i]);
        }
        Self::project(out)
    }
}

impl fmt::Display for IspParams {
    /// Six `key=value` lines in pipeline order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (h, v) in Hyper::ALL.iter().zip(self.to_array()) {
            writeln!(f, "{}={:?}", h.key(), v)?;
        }
        Ok(())
    }
}

impl FromStr for IspParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut values: [Option<f64>; 6] = [None; 6];
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ParamFile(format!("line {}: expected key=value", lineno + 1)))?;
            let h = Hyper::ALL
                .iter()
                .find(|h| h.key() == key.trim())
                .ok_or_else(|| Error::ParamFile(format!("line {}: unknown key `{}`", lineno + 1, key.trim())))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::ParamFile(format!("line {}: bad number `{}`", lineno + 1, value.trim())))?;
            if values[h.index()].replace(v).is_some() {
                return Err(Error::ParamFile(format!("duplicate key `{}`", h.key())));
            }
        }
        let mut out = [0.0; 6];
        for (i, h) in Hyper::ALL.iter().enumerate() {
            out[i] = values[i].ok_or_else(|| Error::ParamFile(format!("missing key `{}`", h.key())))?;
        }
        IspParams::from_array(out)
    }
}

// ---------------------------------------------------------------------------
// Filters

pub fn white_balance(img: &Image, w_r: f64, w_g: f64, w_b: f64) -> Result<Image> {
    check_range(Hyper::WhiteRed, w_r)?;
    check_range(Hyper::WhiteGreen, w_g)?;
    check_range(Hyper::WhiteBlue, w_b)?;
    let gains = [w_r, w_g, w_b];
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| clamp_unit(gains[c] * px[c])))
        .collect();
    Ok(Image::from_clamped(img.height(), img.width(), data))
}

#[inline]
fn power(v: f64, gamma: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v.powf(gamma)
    }
}

pub fn gamma_correct(img: &Image, gamma: f64) -> Result<Image> {
    check_range(Hyper::Gamma, gamma)?;
    let data = img.data().iter().map(|&v| clamp_unit(power(v, gamma))).collect();
    Ok(Image::from_clamped(img.height(), img.width(), data))
}

#[inline]
fn luma(px: &[f64]) -> f64 {
    LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]
}

/// `EnL(L) / L` and its derivative with respect to `L`.
#[inline]
fn curve_ratio(lum: f64) -> (f64, f64) {
    let pl = std::f64::consts::PI * lum;
    let enl = 0.5 * (1.0 - pl.cos());
    let denl = 0.5 * std::f64::consts::PI * pl.sin();
    (enl / lum, (denl * lum - enl) / (lum * lum))
}

pub fn contrast(img: &Image, alpha: f64) -> Result<Image> {
    check_range(Hyper::Alpha, alpha)?;
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let lum = luma(px);
        let scale = if lum < CONTRAST_LUM_FLOOR { 0.0 } else { curve_ratio(lum).0 };
        for &v in px {
            data.push(clamp_unit(alpha * (v * scale) + (1.0 - alpha) * v));
        }
    }
    Ok(Image::from_clamped(img.height(), img.width(), data))
}

/// Splits an interleaved raster into three planes.
fn planes_of(h: usize, w: usize, data: &[f64]) -> [Plane; 3] {
    let mut planes = [Plane::zeros(h, w), Plane::zeros(h, w), Plane::zeros(h, w)];
    for (i, px) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planes[c].data[i] = px[c];
        }
    }
    planes
}

fn blur_interleaved(h: usize, w: usize, data: &[f64]) -> Vec<f64> {
    let blurred = planes_of(h, w, data).map(|p| convolve_reflect(&p, sharpen_kernel()));
    let mut out = vec![0.0; data.len()];
    for (i, px) in out.chunks_exact_mut(3).enumerate() {
        for c in 0..3 {
            px[c] = blurred[c].data[i];
        }
    }
    out
}

/// 5x5 Gaussian (sigma = 1) of each channel, reflected borders.
pub fn gaussian_blur(img: &Image) -> Vec<f64> {
    blur_interleaved(img.height(), img.width(), img.data())
}

pub fn sharpen(img: &Image, lambda: f64) -> Result<Image> {
    check_range(Hyper::Lambda, lambda)?;
    let blurred = gaussian_blur(img);
    let data = img
        .data()
        .iter()
        .zip(&blurred)
        .map(|(&v, &g)| clamp_unit(v + lambda * (v - g)))
        .collect();
    Ok(Image::from_clamped(img.height(), img.width(), data))
}

/// White balance, gamma, contrast, then sharpening.
pub fn apply_pipeline(img: &Image, p: &IspParams) -> Result<Image> {
    p.validate()?;
    let x = white_balance(img, p.w_r, p.w_g, p.w_b)?;
    let x = gamma_correct(&x, p.gamma)?;
    let x = contrast(&x, p.alpha)?;
    sharpen(&x, p.lambda)
}

// ---------------------------------------------------------------------------
// Jacobian

/// Derivatives of every output sample with respect to each hyperparameter.
#[derive(Debug, Clone)]
pub struct FilterJacobian {
    pub height: usize,
    pub width: usize,
    /// Pipeline output at the evaluation point.
    pub output: Image,
    partials: [Vec<f64>; 6],
}

impl FilterJacobian {
    /// Interleaved `H x W x 3` raster of `d output / d h`.
    pub fn partial(&self, h: Hyper) -> &[f64] {
        &self.partials[h.index()]
    }
}

#[inline]
fn interior(raw: f64) -> bool {
    raw > 0.0 && raw < 1.0
}

/// Forward-mode propagation of the six tangent rasters through the pipeline.
pub fn pipeline_jacobian(img: &Image, p: &IspParams) -> Result<FilterJacobian> {
    p.validate()?;
    let (h, w) = (img.height(), img.width());
    let n = img.data().len();
    let mut tan: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);

    // white balance
    let gains = [p.w_r, p.w_g, p.w_b];
    let mut x = Vec::with_capacity(n);
    for (i, &v) in img.data().iter().enumerate() {
        let c = i % 3;
        let raw = gains[c] * v;
        if interior(raw) {
            tan[c][i] = v;
        }
        x.push(clamp_unit(raw));
    }

    // gamma
    for i in 0..n {
        let v = x[i];
        if v > 0.0 {
            let out = v.powf(p.gamma);
            let slope = p.gamma * v.powf(p.gamma - 1.0);
            for t in tan.iter_mut().take(3) {
                t[i] *= slope;
            }
            tan[Hyper::Gamma.index()][i] = out * v.ln();
            x[i] = clamp_unit(out);
        } else {
            for t in tan.iter_mut() {
                t[i] = 0.0;
            }
            x[i] = 0.0;
        }
    }

    // contrast
    let alpha = p.alpha;
    for px in 0..h * w {
        let base = px * 3;
        let v = [x[base], x[base + 1], x[base + 2]];
        let lum = luma(&v);
        let (scale, dscale) = if lum < CONTRAST_LUM_FLOOR { (0.0, 0.0) } else { curve_ratio(lum) };
        let mut raw = [0.0; 3];
        for c in 0..3 {
            raw[c] = alpha * (v[c] * scale) + (1.0 - alpha) * v[c];
        }
        for (k, t) in tan.iter_mut().enumerate() {
            let dv = [t[base], t[base + 1], t[base + 2]];
            let dlum = LUMA_WEIGHTS[0] * dv[0] + LUMA_WEIGHTS[1] * dv[1] + LUMA_WEIGHTS[2] * dv[2];
            for c in 0..3 {
                let den = scale * dv[c] + v[c] * dscale * dlum;
                let mut d = alpha * den + (1.0 - alpha) * dv[c];
                if k == Hyper::Alpha.index() {
                    d += v[c] * scale - v[c];
                }
                t[base + c] = if interior(raw[c]) { d } else { 0.0 };
            }
        }
        for c in 0..3 {
            x[base + c] = clamp_unit(raw[c]);
        }
    }

    // sharpen
    let lambda = p.lambda;
    let blurred = blur_interleaved(h, w, &x);
    let raw: Vec<f64> = x.iter().zip(&blurred).map(|(&v, &g)| v + lambda * (v - g)).collect();
    for (k, t) in tan.iter_mut().enumerate() {
        let bt = blur_interleaved(h, w, t);
        for i in 0..n {
            let mut d = t[i] + lambda * (t[i] - bt[i]);
            if k == Hyper::Lambda.index() {
                d += x[i] - blurred[i];
            }
            t[i] = if interior(raw[i]) { d } else { 0.0 };
        }
    }
    let output = Image::from_clamped(h, w, raw);

    Ok(FilterJacobian {
        height: h,
        width: w,
        output,
        partials: tan,
    })
}
