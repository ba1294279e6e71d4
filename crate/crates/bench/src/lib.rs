//! Shared fixtures for the criterion benches.

use minelight_core::Image;

/// Deterministic low-exposure test image.
pub fn dim_scene(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let v = 0.12 + 0.08 * (0.21 * xf).sin() * (0.13 * yf).cos() + 0.05 * ((xf + yf) * 0.7).sin();
        [v, 0.9 * v, 0.8 * v]
    })
    .expect("samples in range")
}
