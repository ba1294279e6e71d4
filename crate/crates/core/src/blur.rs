//! Gaussian kernels and convolution on [`Plane`]s.
//!
//! Borders use half-sample symmetric reflection (`d c b a | a b c d`). With a
//! symmetric kernel normalized to 1 this keeps the plane mean unchanged.

use crate::image::Plane;

/// Square, normalized Gaussian kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Kernel2d {
    pub fn gaussian(size: usize, sigma: f64) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let r = (size / 2) as isize;
        let denom = 2.0 * sigma * sigma;
        let mut weights = Vec::with_capacity(size * size);
        for y in -r..=r {
            for x in -r..=r {
                weights.push((-((x * x + y * y) as f64) / denom).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { size, weights }
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }
}

/// The 5x5, sigma = 1 kernel used by the sharpening filter.
pub fn sharpen_kernel() -> &'static Kernel2d {
    use std::sync::OnceLock;
    static K: OnceLock<Kernel2d> = OnceLock::new();
    K.get_or_init(|| Kernel2d::gaussian(5, 1.0))
}

/// Maps any integer coordinate into `0..n` by symmetric reflection.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

fn index_table(n: usize, r: usize) -> Vec<usize> {
    (0..n + 2 * r)
        .map(|i| reflect_index(i as isize - r as isize, n))
        .collect()
}

/// Same-size 2-D correlation with reflected borders.
///
/// Each output sample accumulates `weight * sample` over the window in
/// row-major kernel order.
pub fn convolve_reflect(src: &Plane, kernel: &Kernel2d) -> Plane {
    let (h, w) = (src.height, src.width);
    let r = kernel.radius();
    let k = kernel.size;
    let rows = index_table(h, r);
    let cols = index_table(w, r);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..k {
                let row = &src.data[rows[y + ky] * w..][..w];
                let kw = &kernel.weights[ky * k..][..k];
                for (kx, &wt) in kw.iter().enumerate() {
                    acc += wt * row[cols[x + kx]];
                }
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable Gaussian filter with reflected borders; output has the input size.
pub fn separable_same(src: &Plane, taps: &[f64]) -> Plane {
    let (h, w) = (src.height, src.width);
    let r = taps.len() / 2;
    let cols = index_table(w, r);
    let rows = index_table(h, r);
    let mut tmp = Plane::zeros(h, w);
    for y in 0..h {
        let row = &src.data[y * w..][..w];
        for x in 0..w {
            tmp.data[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * row[cols[x + i]])
                .sum();
        }
    }
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp.data[rows[y + i] * w + x])
                .sum();
        }
    }
    out
}

/// Separable Gaussian filter evaluated only where the window fits entirely.
/// Output is `(h - size + 1) x (w - size + 1)`.
pub fn separable_valid(src: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (h, w) = (src.height, src.width);
    assert!(h >= k && w >= k, "plane smaller than window");
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = Plane::zeros(h, ow);
    for y in 0..h {
        let row = &src.data[y * w..][..w];
        for x in 0..ow {
            tmp.data[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = Plane::zeros(oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            out.data[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp.data[(y + i) * ow + x])
                .sum();
        }
    }
    out
}
