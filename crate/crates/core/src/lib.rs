//! Low-light enhancement engine built around a parametric filter pipeline
//! whose hyperparameters come from a small CNN encoder, refined by a residual
//! detail network.
//!
//! Modules:
//! - [`image`]: RGB rasters and PPM I/O
//! - [`isp`]: the four differentiable filters and their Jacobian
//! - [`cnn`]: tensor ops, weight files, encoder/detail networks
//! - [`clip`]: embedding-space losses and the embedding table format
//! - [`iqa`]: PSNR, SSIM, VIF
//! - [`optimize`]: projected gradient descent for prompts and filter params
//! - [`edge`]: latency model and throughput bench
//! - [`service`]: framed TCP enhancement service

pub mod blur;
pub mod clip;
pub mod cnn;
pub mod edge;
pub mod error;
pub mod image;
pub mod iqa;
pub mod isp;
pub mod optimize;
pub mod service;

pub use clip::{Embedding, EmbeddingProvider, EmbeddingTable, Margins, PromptPair};
pub use cnn::{FusionModel, Tensor, WeightStore};
pub use edge::{BenchReport, LatencyModel};
pub use error::{Error, Result};
pub use image::{load_ppm, save_ppm, Image, Plane};
pub use iqa::IqaReport;
pub use isp::{FilterJacobian, Hyper, IspParams};
pub use optimize::{IterateSeries, OptimizerConfig, Trace};
