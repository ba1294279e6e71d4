//! Seeded fixtures and straight-line reference implementations shared by the
//! integration suites. The references deliberately avoid the library's index
//! tables and separable passes.

#![allow(dead_code)]

use minelight_core::cnn::Architecture;
use minelight_core::{Image, IspParams, Tensor, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples in `[lo, hi)`.
pub fn random_image(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    let mut r = rng(seed);
    Image::new(h, w, (0..h * w * 3).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Smooth dim scene with a little texture, every sample in `[0.02, 0.3]`.
pub fn low_exposure_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = rng(seed);
    let (fx, fy, ph): (f64, f64, f64) = (r.random_range(0.05..0.2), r.random_range(0.05..0.2), r.random_range(0.0..6.0));
    Image::from_fn(h, w, |y, x| {
        let base = 0.12 + 0.06 * (fx * x as f64 + ph).sin() * (fy * y as f64).cos();
        let noise = r.random_range(-0.04..0.04);
        let v = (base + noise).clamp(0.02, 0.3);
        [v, (0.9 * v).max(0.02), (0.75 * v).max(0.02)]
    })
    .unwrap()
}

/// Parameters well inside every range.
pub fn interior_params(r: &mut ChaCha8Rng) -> IspParams {
    IspParams::new(
        r.random_range(0.8..1.3),
        r.random_range(0.8..1.3),
        r.random_range(0.8..1.3),
        r.random_range(0.5..1.5),
        r.random_range(0.2..0.8),
        r.random_range(0.3..2.0),
    )
    .unwrap()
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// Reference convolution and blur

/// Zero-padded same-size cross-correlation, one output element at a time.
pub fn naive_conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Vec<f32> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let pad = (k / 2) as isize;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; c_out * h * w];
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let v = xd[c * h * w + sy as usize * w + sx as usize];
                            acc += wd[((o * c_in + c) * k + ky) * k + kx] * v;
                        }
                    }
                }
                out[o * h * w + y * w + xx] = acc;
            }
        }
    }
    out
}

/// Folds an out-of-range coordinate back by mirroring about the edges,
/// repeating the edge sample.
pub fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let r = (size / 2) as isize;
    let mut k = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as isize - r, j as isize - r);
            *v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= total;
        }
    }
    k
}

/// 5x5 sigma=1 Gaussian of each channel of an interleaved raster.
pub fn naive_blur(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let k = gaussian_kernel(5, 1.0);
    let mut out = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ky, row) in k.iter().enumerate() {
                    for (kx, wt) in row.iter().enumerate() {
                        let sy = mirror(y as isize + ky as isize - 2, h);
                        let sx = mirror(x as isize + kx as isize - 2, w);
                        acc += wt * img.pixel(sy, sx)[c];
                    }
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Reference networks

fn to_chw(img: &Image) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(y, x);
            for c in 0..3 {
                data[c * h * w + y * w + x] = px[c] as f32;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).unwrap()
}

fn naive_pool(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    let mut out = vec![f32::NEG_INFINITY; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let v = x[ch * h * w + (2 * oy + dy) * w + 2 * ox + dx];
                        let o = &mut out[ch * oh * ow + oy * ow + ox];
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

fn get<'a>(ws: &'a WeightStore, name: &str) -> &'a Tensor {
    ws.get(name).unwrap()
}

/// Encoder head outputs before squashing.
pub fn naive_encoder_raw(img: &Image, ws: &WeightStore) -> Vec<f32> {
    let (mut h, mut w) = (img.height(), img.width());
    let mut x = to_chw(img);
    for i in 1..=5 {
        let wt = get(ws, &format!("enc.conv{i}.weight"));
        let c = wt.shape()[0];
        let mut y = naive_conv2d(&x, wt, get(ws, &format!("enc.conv{i}.bias")));
        for v in &mut y {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let (p, oh, ow) = naive_pool(&y, c, h, w);
        h = oh;
        w = ow;
        x = Tensor::new(vec![c, h, w], p).unwrap();
    }
    let c = x.shape()[0];
    let pooled: Vec<f32> = (0..c)
        .map(|ch| x.data()[ch * h * w..(ch + 1) * h * w].iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let fw = get(ws, "enc.fc.weight");
    let fb = get(ws, "enc.fc.bias");
    (0..6)
        .map(|o| {
            let mut acc = fb.data()[o];
            for i in 0..c {
                acc += fw.data()[o * c + i] * pooled[i];
            }
            acc
        })
        .collect()
}

fn naive_conv_bn_relu(x: &Tensor, ws: &WeightStore, conv: &str, bn: &str) -> Tensor {
    let wt = get(ws, &format!("{conv}.weight"));
    let (c, h, w) = (wt.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = naive_conv2d(x, wt, get(ws, &format!("{conv}.bias")));
    let p = |s: &str| get(ws, &format!("{bn}.{s}")).data().to_vec();
    let (g, b, m, v) = (p("gamma"), p("beta"), p("mean"), p("var"));
    for ch in 0..c {
        for i in 0..h * w {
            let z = &mut y[ch * h * w + i];
            *z = (g[ch] * (*z - m[ch]) / (v[ch] + 1e-5).sqrt() + b[ch]).max(0.0);
        }
    }
    Tensor::new(vec![c, h, w], y).unwrap()
}

/// Detail residual, interleaved.
pub fn naive_detail(img: &Image, ws: &WeightStore) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut cur = naive_conv_bn_relu(&to_chw(img), ws, "det.conv_in", "det.bn_in");
    for b in 1..=3 {
        let y = naive_conv_bn_relu(&cur, ws, &format!("det.block{b}.conv1"), &format!("det.block{b}.bn1"));
        let y = naive_conv_bn_relu(&y, ws, &format!("det.block{b}.conv2"), &format!("det.block{b}.bn2"));
        let sum: Vec<f32> = cur.data().iter().zip(y.data()).map(|(a, b)| a + b).collect();
        cur = Tensor::new(cur.shape().to_vec(), sum).unwrap();
    }
    let out = naive_conv2d(&cur, get(ws, "det.conv_out.weight"), get(ws, "det.conv_out.bias"));
    let mut res = vec![0.0; h * w * 3];
    for i in 0..h * w {
        for c in 0..3 {
            res[i * 3 + c] = f64::from(out[c * h * w + i].tanh());
        }
    }
    res
}

pub fn seeded_fusion(seed: u64) -> WeightStore {
    WeightStore::seeded(Architecture::Fusion, seed)
}

// ---------------------------------------------------------------------------
// Finite-difference checks

use minelight_core::clip::{mean_loss_li_grad, CwMode, Label, Margins, RefinementSet};
use minelight_core::isp::{apply_pipeline, pipeline_jacobian};
use minelight_core::optimize::random_embedding;
use minelight_core::{Embedding, Hyper};

pub const FD_STEP: f64 = 1e-4;

/// Worst per-sample relative error between analytic and central-difference
/// pipeline partials. A sample is skipped when its forward and backward
/// one-sided slopes disagree, which means a clamp switched inside the
/// stencil and the central difference straddles a kink.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub skipped: usize,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn jacobian_fd(img: &Image, p: &IspParams) -> FdReport {
    let jac = pipeline_jacobian(img, p).unwrap();
    let base = apply_pipeline(img, p).unwrap();
    let mut rep = FdReport {
        max_rel_err: 0.0,
        skipped: 0,
        checked: 0,
    };
    for h in Hyper::ALL {
        let shifted = |d: f64| {
            let mut v = p.to_array();
            v[h.index()] += d;
            apply_pipeline(img, &IspParams::from_array(v).unwrap()).unwrap()
        };
        let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
        for i in 0..base.data().len() {
            let fwd = (plus.data()[i] - base.data()[i]) / FD_STEP;
            let bwd = (base.data()[i] - minus.data()[i]) / FD_STEP;
            if (fwd - bwd).abs() > 1e-2 * (1.0 + fwd.abs().max(bwd.abs())) {
                rep.skipped += 1;
                continue;
            }
            let central = (plus.data()[i] - minus.data()[i]) / (2.0 * FD_STEP);
            rep.max_rel_err = rep.max_rel_err.max(relative_error(jac.partial(h)[i], central));
            rep.checked += 1;
        }
    }
    rep
}

/// Interior parameters for the gradient checks. Gains stay modest so most
/// samples are not saturated.
pub fn gradient_params(r: &mut ChaCha8Rng) -> IspParams {
    IspParams::new(
        r.random_range(0.8..1.2),
        r.random_range(0.8..1.2),
        r.random_range(0.8..1.2),
        r.random_range(0.6..1.6),
        r.random_range(0.1..0.9),
        r.random_range(0.1..1.5),
    )
    .unwrap()
}

fn fd_vector(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn max_vec_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Gradient error of the mean pairing loss in both prompts.
pub fn loss_li_fd(seed: u64, dim: usize) -> f64 {
    let normals: Vec<Embedding> = (0..4).map(|i| random_embedding(dim, seed * 100 + i)).collect();
    let lows: Vec<Embedding> = (0..4).map(|i| random_embedding(dim, seed * 100 + 50 + i)).collect();
    let samples: Vec<(&[f64], Label)> = normals
        .iter()
        .map(|e| (e.values(), Label::NormalLight))
        .chain(lows.iter().map(|e| (e.values(), Label::LowLight)))
        .collect();
    let pos = random_embedding(dim, seed * 100 + 98).values().to_vec();
    let neg = random_embedding(dim, seed * 100 + 99).values().to_vec();
    let (_, gp, gn) = mean_loss_li_grad(&samples, &pos, &neg);
    let fp = fd_vector(|x| mean_loss_li_grad(&samples, x, &neg).0, &pos, 1e-6);
    let fneg = fd_vector(|x| mean_loss_li_grad(&samples, &pos, x).0, &neg, 1e-6);
    max_vec_rel_err(&gp, &fp).max(max_vec_rel_err(&gn, &fneg))
}

/// Gradient error of the ranking loss in the positive prompt at a seeded
/// point. Returns `None` if a hinge sits within the stencil of its kink.
pub fn loss_cw_fd(seed: u64, dim: usize, mode: CwMode) -> Option<f64> {
    let e = |k: u64| random_embedding(dim, seed * 1000 + k);
    let set = RefinementSet {
        t_neg: e(1),
        e_t: e(2),
        e_f: e(3),
        series: [e(4), e(5), e(6), e(7), e(8)],
        margins: Margins::default(),
        mode,
    };
    let t = e(9).values().to_vec();
    let h = 1e-6;
    let r = set.correlations(&t).to_array();
    // each hinge argument moves by at most |dr/dt| * h <= h / 4 per unit step
    let terms = set.correlations(&t).hinge_terms(&set.margins, mode);
    if terms.iter().any(|s| s.abs() < 10.0 * h) || r.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (_, g) = set.loss_and_grad(&t);
    let numeric = fd_vector(|x| set.loss_and_grad(x).0, &t, h);
    Some(max_vec_rel_err(&g, &numeric))
}

// ---------------------------------------------------------------------------
// Metric fixtures

use rand_distr::{Distribution, Normal};

/// Smooth textured reference with no clipped samples.
pub fn textured(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let v = 0.5
            + 0.22 * (0.31 * xf + 0.17 * yf).sin()
            + 0.12 * (0.73 * xf - 0.41 * yf).cos() * (0.05 * xf * yf / 7.0).sin()
            + 0.08 * (1.9 * xf + 2.3 * yf).sin();
        let v = v.clamp(0.0, 1.0);
        [v, 0.9 * v + 0.05, 0.8 * v + 0.1]
    })
    .unwrap()
}

/// Additive Gaussian noise of standard deviation `sigma`, clamped. The same
/// seed yields the same unit noise field, scaled by `sigma`.
pub fn with_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut r = rng(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let data = img.data().iter().map(|v| v + sigma * n.sample(&mut r)).collect();
    Image::from_clamped(img.height(), img.width(), data)
}

// ---------------------------------------------------------------------------
// Service fuzzing

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::time::Duration;

use minelight_core::image::save_ppm;
use minelight_core::service::{read_response, request, Response};

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub frames: usize,
    pub images: usize,
    pub errors: usize,
    /// Frames whose reply was missing or malformed.
    pub failures: usize,
}

fn connect(addr: SocketAddr) -> TcpStream {
    let s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
    s
}

fn valid_frame_reply(reply: std::io::Result<Response>, tally: &mut FuzzTally) {
    match reply {
        Ok(Response::Image(bytes)) if minelight_core::load_ppm(&bytes).is_ok() => tally.images += 1,
        Ok(Response::Error(msg)) if !msg.is_empty() => tally.errors += 1,
        _ => tally.failures += 1,
    }
}

/// Sends `count` seeded random frames to a server whose payload cap is
/// `cap`. Mixes raw noise, mutated PPMs, empty frames, oversize lengths and
/// truncated bodies. The server must answer every complete frame and stay
/// up afterwards.
pub fn fuzz_service(addr: SocketAddr, cap: usize, count: usize, seed: u64) -> FuzzTally {
    let mut r = rng(seed);
    let mut tally = FuzzTally::default();
    let valid = save_ppm(&low_exposure_image(seed, 64, 64));
    assert!(valid.len() <= cap);
    let mut conn = connect(addr);
    for i in 0..count {
        tally.frames += 1;
        match r.random_range(0..100) {
            // raw bytes
            0..40 => {
                let n = r.random_range(1..=cap.min(2048));
                let payload: Vec<u8> = (0..n).map(|_| r.random()).collect();
                valid_frame_reply(request(&mut conn, &payload), &mut tally);
            }
            // corrupted header or body of a real image
            40..75 => {
                let mut payload = if r.random_bool(0.8) {
                    save_ppm(&random_image(seed + i as u64, r.random_range(1..6), r.random_range(1..6), 0.0, 1.0))
                } else {
                    valid.clone()
                };
                for _ in 0..r.random_range(1..4) {
                    let at = r.random_range(0..payload.len());
                    payload[at] = r.random();
                }
                if r.random_bool(0.3) {
                    let keep = r.random_range(1..=payload.len());
                    payload.truncate(keep);
                }
                valid_frame_reply(request(&mut conn, &payload), &mut tally);
            }
            // declared empty
            75..85 => {
                conn.write_all(&[0, 0, 0, 0]).unwrap();
                valid_frame_reply(read_response(&mut conn), &mut tally);
            }
            // over the cap: error frame, then the server hangs up
            85..93 => {
                let len = r.random_range(cap as u32 + 1..=u32::MAX);
                conn.write_all(&len.to_be_bytes()).unwrap();
                valid_frame_reply(read_response(&mut conn), &mut tally);
                let mut rest = Vec::new();
                if conn.read_to_end(&mut rest).map_or(true, |_| !rest.is_empty()) {
                    tally.failures += 1;
                }
                conn = connect(addr);
            }
            // body shorter than declared, then half-close: no reply owed
            _ => {
                let len = r.random_range(2..cap as u32);
                let sent = r.random_range(0..len as usize);
                let mut frame = len.to_be_bytes().to_vec();
                frame.extend((0..sent).map(|_| r.random::<u8>()));
                conn.write_all(&frame).unwrap();
                conn.shutdown(Shutdown::Write).unwrap();
                let mut rest = Vec::new();
                if conn.read_to_end(&mut rest).is_err() || !rest.is_empty() {
                    tally.failures += 1;
                } else {
                    tally.errors += 1;
                }
                conn = connect(addr);
            }
        }
    }
    // still serving
    valid_frame_reply(request(&mut connect(addr), &valid), &mut tally);
    tally
}

/// Mean luminance of input and enhanced output for seeded fusion weights.
pub fn smoke_enhance(weight_seed: u64, image_seed: u64) -> (Image, Image) {
    let model = minelight_core::FusionModel::from_fusion(&seeded_fusion(weight_seed)).unwrap();
    let img = low_exposure_image(image_seed, 64, 64);
    let out = model.enhance(&img).unwrap().image;
    (img, out)
}

pub fn mean_luminance(img: &Image) -> f64 {
    minelight_core::image::luminance(img).mean()
}
