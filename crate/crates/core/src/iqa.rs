//! Full-reference quality metrics: PSNR, SSIM and pixel-domain multi-scale
//! VIF. SSIM and VIF operate on the luminance plane.

use std::fmt;

use crate::blur::{gaussian_taps, separable_same, separable_valid};
use crate::error::{Error, Result};
use crate::image::{luminance, Image, Plane};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const VIF_SCALES: usize = 4;
pub const VIF_WINDOW: usize = 9;
pub const VIF_SIGMA: f64 = VIF_WINDOW as f64 / 5.0;
/// Visual noise variance, `2 / 255^2` on the unit intensity scale.
pub const VIF_NOISE_VAR: f64 = 2.0 / (255.0 * 255.0);
pub const VIF_EPS: f64 = 1e-10;
pub const VIF_MIN_SIDE: usize = 32;

/// Identifies the VIF flavour in reports.
pub const VIF_VARIANT: &str = "vif-pixel-ms4";

pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    x.check_same_dims(y)?;
    let n = x.data().len().max(1) as f64;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    let m = mse(x, y)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn check_min_side(x: &Image, min: usize, what: &str) -> Result<()> {
    if x.height() < min || x.width() < min {
        return Err(Error::Undersized(format!(
            "{what} needs at least {min}x{min}, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Mean SSIM over every fully contained 11x11 Gaussian window.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    x.check_same_dims(y)?;
    check_min_side(x, SSIM_WINDOW, "ssim")?;
    Ok(ssim_planes(&luminance(x), &luminance(y)))
}

pub fn ssim_planes(a: &Plane, b: &Plane) -> f64 {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let f = |p: &Plane| separable_valid(p, &taps);
    let mu_a = f(a);
    let mu_b = f(b);
    let aa = f(&a.zip_map(a, |p, q| p * q));
    let bb = f(&b.zip_map(b, |p, q| p * q));
    let ab = f(&a.zip_map(b, |p, q| p * q));
    let n = mu_a.data.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = aa.data[i] - ma * ma;
        let var_b = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    total / n as f64
}

/// Ratio of the information the distorted image carries about the reference
/// to the information the reference itself carries, summed over four scales.
pub fn vif(x_ref: &Image, y_dist: &Image) -> Result<f64> {
    x_ref.check_same_dims(y_dist)?;
    check_min_side(x_ref, VIF_MIN_SIDE, "vif")?;
    Ok(vif_planes(&luminance(x_ref), &luminance(y_dist)))
}

pub fn vif_planes(reference: &Plane, distorted: &Plane) -> f64 {
    let taps = gaussian_taps(VIF_WINDOW, VIF_SIGMA);
    let f = |p: &Plane| separable_same(p, &taps);
    let mut a = reference.clone();
    let mut b = distorted.clone();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 0..VIF_SCALES {
        if scale > 0 {
            a = f(&a).decimate();
            b = f(&b).decimate();
        }
        let mu_a = f(&a);
        let mu_b = f(&b);
        let aa = f(&a.zip_map(&a, |p, q| p * q));
        let bb = f(&b.zip_map(&b, |p, q| p * q));
        let ab = f(&a.zip_map(&b, |p, q| p * q));
        for i in 0..mu_a.data.len() {
            let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
            let mut var_a = (aa.data[i] - ma * ma).max(0.0);
            let var_b = (bb.data[i] - mb * mb).max(0.0);
            let cov = ab.data[i] - ma * mb;

            let mut gain = cov / (var_a + VIF_EPS);
            let mut sv = var_b - gain * cov;
            if var_a < VIF_EPS {
                gain = 0.0;
                sv = var_b;
                var_a = 0.0;
            }
            if var_b < VIF_EPS {
                gain = 0.0;
                sv = 0.0;
            }
            if gain < 0.0 {
                sv = var_b;
                gain = 0.0;
            }
            let sv = sv.max(VIF_EPS);
            num += (1.0 + gain * gain * var_a / (sv + VIF_NOISE_VAR)).log2();
            den += (1.0 + var_a / VIF_NOISE_VAR).log2();
        }
    }
    if den == 0.0 {
        // flat reference: no information to preserve
        return 1.0;
    }
    num / den
}

/// The three full-reference scores for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqaReport {
    pub psnr: f64,
    pub ssim: f64,
    pub vif: f64,
}

impl IqaReport {
    pub fn compute(x: &Image, y: &Image) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, y)?,
            ssim: ssim(x, y)?,
            vif: vif(x, y)?,
        })
    }

    pub const CSV_HEADER: &'static str = "name,psnr,ssim,vif";

    pub fn csv_row(&self, name: &str) -> String {
        format!("{},{:.4},{:.6},{:.6}", csv_field(name), self.psnr, self.ssim, self.vif)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl fmt::Display for IqaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "psnr={:.4} ssim={:.6} vif={:.6} vif_variant={VIF_VARIANT}",
            self.psnr, self.ssim, self.vif
        )
    }
}
