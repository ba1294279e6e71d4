//! Edge-vs-cloud transmission model and the enhancement throughput bench.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::cnn::FusionModel;
use crate::error::{Error, Result};
use crate::image::Image;

/// Affine delay model: propagation + serialization + processing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub propagation_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
    pub per_image_bytes: f64,
    pub per_image_proc_ms: f64,
}

const CLOUD_CONFIG: &str = include_str!("../../../configs/cloud.latency");
const EDGE_CONFIG: &str = include_str!("../../../configs/edge.latency");

impl LatencyModel {
    pub fn new(
        propagation_ms: f64,
        bandwidth_bytes_per_ms: f64,
        per_image_bytes: f64,
        per_image_proc_ms: f64,
    ) -> Result<Self> {
        let m = Self {
            propagation_ms,
            bandwidth_bytes_per_ms,
            per_image_bytes,
            per_image_proc_ms,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("propagation_ms", self.propagation_ms),
            ("bandwidth_bytes_per_ms", self.bandwidth_bytes_per_ms),
            ("per_image_bytes", self.per_image_bytes),
            ("per_image_proc_ms", self.per_image_proc_ms),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.bandwidth_bytes_per_ms <= 0.0 {
            return Err(Error::InvalidInput("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Shipped calibration for the centralized cloud path.
    pub fn cloud() -> Self {
        CLOUD_CONFIG.parse().expect("shipped cloud config parses")
    }

    /// Shipped calibration for the edge path.
    pub fn edge() -> Self {
        EDGE_CONFIG.parse().expect("shipped edge config parses")
    }

    /// Marginal milliseconds per additional image.
    pub fn per_image_ms(&self) -> f64 {
        self.per_image_bytes / self.bandwidth_bytes_per_ms + self.per_image_proc_ms
    }
}

impl FromStr for LatencyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const KEYS: [&str; 4] = [
            "propagation_ms",
            "bandwidth_bytes_per_ms",
            "per_image_bytes",
            "per_image_proc_ms",
        ];
        let mut vals = [None; 4];
        for line in s.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("latency config: expected key=value, got `{line}`")))?;
            let idx = KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| Error::InvalidInput(format!("latency config: unknown key `{}`", k.trim())))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("latency config: bad number for `{}`", KEYS[idx])))?;
            vals[idx] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::InvalidInput(format!("latency config: missing `{}`", KEYS[i])));
        LatencyModel::new(get(0)?, get(1)?, get(2)?, get(3)?)
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "propagation_ms={:?}", self.propagation_ms)?;
        writeln!(f, "bandwidth_bytes_per_ms={:?}", self.bandwidth_bytes_per_ms)?;
        writeln!(f, "per_image_bytes={:?}", self.per_image_bytes)?;
        writeln!(f, "per_image_proc_ms={:?}", self.per_image_proc_ms)
    }
}

/// Total milliseconds to move and process `n_images`.
pub fn simulate_latency(model: &LatencyModel, n_images: usize) -> f64 {
    let n = n_images as f64;
    model.propagation_ms + n * model.per_image_bytes / model.bandwidth_bytes_per_ms + n * model.per_image_proc_ms
}

/// `(image_count, total_ms)` for `0, step, 2*step, ..` up to `max_images`.
pub fn latency_curve(model: &LatencyModel, max_images: usize, step: usize) -> Vec<(usize, f64)> {
    (0..=max_images)
        .step_by(step.max(1))
        .map(|n| (n, simulate_latency(model, n)))
        .collect()
}

pub fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("images,total_ms\n");
    for (n, ms) in curve {
        s.push_str(&format!("{n},{ms:.4}\n"));
    }
    s
}

/// Frames per second when each of `n_frames` frames costs `compute_s` of
/// enhancement and the batch also pays the link's transmission delay.
pub fn simulated_fps(model: &LatencyModel, compute_s: f64, n_frames: usize) -> f64 {
    let n = n_frames.max(1);
    n as f64 / (n as f64 * compute_s + simulate_latency(model, n) / 1000.0)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub frames: usize,
    pub seconds: f64,
    /// Measured local throughput.
    pub fps: f64,
    /// CRC32 of each output raster, per repetition.
    pub output_hashes: Vec<Vec<u32>>,
    pub edge_fps: f64,
    pub cloud_fps: f64,
    pub edge_curve: Vec<(usize, f64)>,
    pub cloud_curve: Vec<(usize, f64)>,
}

impl BenchReport {
    /// Whether every repetition produced the same outputs.
    pub fn deterministic(&self) -> bool {
        self.output_hashes.windows(2).all(|w| w[0] == w[1])
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames={} seconds={:.4} fps={:.3}", self.frames, self.seconds, self.fps)?;
        writeln!(f, "simulated_edge_fps={:.3} simulated_cloud_fps={:.3}", self.edge_fps, self.cloud_fps)?;
        writeln!(f, "deterministic={}", self.deterministic())?;
        writeln!(f, "images,edge_ms,cloud_ms")?;
        for ((n, e), (_, c)) in self.edge_curve.iter().zip(&self.cloud_curve) {
            writeln!(f, "{n},{e:.4},{c:.4}")?;
        }
        Ok(())
    }
}

fn raster_hash(img: &Image) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in img.data() {
        h.update(&v.to_bits().to_le_bytes());
    }
    h.finalize()
}

/// Times `repetitions` passes of `enhance` over `images` after one warm-up
/// pass, then projects the measured per-frame cost onto both links.
pub fn bench_pipeline(
    model: &FusionModel,
    images: &[Image],
    repetitions: usize,
    edge: &LatencyModel,
    cloud: &LatencyModel,
) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one image".into()));
    }
    let repetitions = repetitions.max(1);
    for img in images {
        model.enhance(img)?;
    }
    let mut hashes = Vec::with_capacity(repetitions);
    let start = Instant::now();
    for _ in 0..repetitions {
        let mut rep = Vec::with_capacity(images.len());
        for img in images {
            rep.push(raster_hash(&model.enhance(img)?.image));
        }
        hashes.push(rep);
    }
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    let frames = images.len() * repetitions;
    let per_frame = seconds / frames as f64;
    Ok(BenchReport {
        frames,
        seconds,
        fps: frames as f64 / seconds,
        output_hashes: hashes,
        edge_fps: simulated_fps(edge, per_frame, images.len()),
        cloud_fps: simulated_fps(cloud, per_frame, images.len()),
        edge_curve: latency_curve(edge, 40, 5),
        cloud_curve: latency_curve(cloud, 40, 5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_images_is_propagation_only() {
        let m = LatencyModel::new(12.5, 100.0, 1000.0, 3.0).unwrap();
        assert_eq!(simulate_latency(&m, 0), 12.5);
        assert_eq!(simulate_latency(&m, 2), 12.5 + 20.0 + 6.0);
    }

    #[test]
    fn shipped_configs_hit_calibration_points() {
        let cloud = simulate_latency(&LatencyModel::cloud(), 40);
        let edge = simulate_latency(&LatencyModel::edge(), 40);
        assert!((cloud - 248.4).abs() <= 0.01 * 248.4, "{cloud}");
        assert!((edge - 9.7).abs() <= 0.01 * 9.7, "{edge}");
    }

    #[test]
    fn config_round_trip_and_errors() {
        let m = LatencyModel::cloud();
        assert_eq!(m.to_string().parse::<LatencyModel>().unwrap(), m);
        assert!("propagation_ms=1".parse::<LatencyModel>().is_err());
        let zero_bw = "propagation_ms=1\nbandwidth_bytes_per_ms=0\nper_image_bytes=1\nper_image_proc_ms=0";
        assert!(zero_bw.parse::<LatencyModel>().is_err());
        assert!("nonsense".parse::<LatencyModel>().is_err());
    }

    #[test]
    fn curve_is_non_decreasing() {
        let c = latency_curve(&LatencyModel::cloud(), 40, 5);
        assert_eq!(c.len(), 9);
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(curve_csv(&c).starts_with("images,total_ms\n0,30.0000\n"));
    }

    #[test]
    fn heavier_payload_lowers_cloud_fps() {
        let base = LatencyModel::cloud();
        let heavy = LatencyModel {
            per_image_bytes: 2.0 * base.per_image_bytes,
            ..base
        };
        assert!(simulated_fps(&heavy, 0.05, 10) < simulated_fps(&base, 0.05, 10));
    }
}
