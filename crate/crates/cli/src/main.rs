//! `minelight`: command-line front end for the enhancement engine.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 when a command
//! fails at run time.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use minelight_core::clip::{load_embeddings, save_embeddings, test_encoder, CwMode, RefinementSet};
use minelight_core::cnn::{load_weights, save_weights, Architecture, DetailInput};
use minelight_core::edge::{bench_pipeline, curve_csv, latency_curve};
use minelight_core::optimize::{fit_isp_params, generate_iterates, random_embedding, refine_prompt};
use minelight_core::service::{Server, ServiceConfig, DEFAULT_MAX_PAYLOAD};
use minelight_core::{
    load_ppm, save_ppm, EmbeddingTable, FusionModel, Image, IqaReport, IspParams, LatencyModel, Margins,
    OptimizerConfig, WeightStore,
};

#[derive(Parser)]
#[command(name = "minelight", version, about = "Low-light image enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one PPM image.
    Enhance {
        input: PathBuf,
        /// Fusion weights, or encoder weights when --detail-weights is given.
        weights: PathBuf,
        output: PathBuf,
        #[arg(long)]
        detail_weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Wiring::Original)]
        detail_input: Wiring,
    },
    /// Score B against reference A; prints a CSV header and one row.
    Metrics {
        reference: PathBuf,
        distorted: PathBuf,
        /// Row label; defaults to the distorted file's stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        no_header: bool,
    },
    /// Fit filter parameters mapping IN onto REF by pixel MSE.
    FitIsp {
        input: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        params_out: PathBuf,
        #[arg(long)]
        trace_out: PathBuf,
        #[arg(long, default_value_t = OptimizerConfig::isp().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = OptimizerConfig::isp().max_iters)]
        iters: usize,
        #[arg(long, default_value_t = OptimizerConfig::isp().tolerance)]
        tolerance: f64,
    },
    /// Refine a positive prompt under the ranking loss.
    RefinePrompt {
        embeddings: PathBuf,
        #[arg(long)]
        t_tt: String,
        #[arg(long)]
        t_neg: String,
        /// Normal-light reference image embedding.
        #[arg(long)]
        normal: String,
        /// Low-light reference image embedding.
        #[arg(long)]
        low: String,
        /// Five enhanced-image embeddings, strongest first.
        #[arg(long, num_args = 5, required = true)]
        series: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Name for the refined row; defaults to replacing --t-tt.
        #[arg(long)]
        save_as: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Literal)]
        mode: Mode,
        #[arg(long, default_value_t = Margins::default().p0)]
        p0: f64,
        #[arg(long, default_value_t = Margins::default().p1)]
        p1: f64,
        #[arg(long, default_value_t = Margins::default().p2)]
        p2: f64,
        #[arg(long, default_value_t = OptimizerConfig::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = OptimizerConfig::default().max_iters)]
        iters: usize,
    },
    /// Write the four weaker iterates and the final image for PARAMS.
    Iterate {
        input: PathBuf,
        params: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time enhancement and project throughput onto the edge and cloud links.
    Bench {
        /// Fusion weights; seeded random weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input images; synthetic dim scenes when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        images: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        edge_config: Option<PathBuf>,
        #[arg(long)]
        cloud_config: Option<PathBuf>,
    },
    /// Print the latency curve of a link as CSV.
    Simulate {
        /// key=value latency config.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 40)]
        max_images: usize,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        step: u64,
    },
    /// Serve enhancement over length-prefixed TCP frames.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
        weights: PathBuf,
        #[arg(long)]
        detail_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_PAYLOAD)]
        max_payload: usize,
    },
    /// Write a seeded random weight file.
    InitWeights {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an EMB1 table with the deterministic test encoder.
    Embed {
        images: Vec<PathBuf>,
        /// Add a seeded random unit prompt under this name (repeatable).
        #[arg(long = "random-prompt")]
        prompts: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Wiring {
    Original,
    Enhanced,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Literal,
    TextConsistent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Edge,
    Cloud,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Encoder,
    Detail,
    Fusion,
}

fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_ppm(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_weights(path: &Path) -> Result<WeightStore> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_weights(&bytes).with_context(|| format!("loading weights from {}", path.display()))
}

fn load_model(weights: &Path, detail: Option<&Path>) -> Result<FusionModel> {
    let main = read_weights(weights)?;
    let model = match detail {
        Some(d) => FusionModel::new(&main, &read_weights(d)?)?,
        None if main.arch() == Architecture::Fusion => FusionModel::from_fusion(&main)?,
        None => bail!(
            "{} holds {} weights; pass --detail-weights or use a fusion file",
            weights.display(),
            main.arch().id()
        ),
    };
    Ok(model)
}

fn read_latency(path: &Path) -> Result<LatencyModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse().with_context(|| format!("parsing {}", path.display()))
}

/// Dim gradient scene used when `bench` is given no inputs.
fn synthetic_scene(size: usize, k: usize) -> Image {
    let phase = k as f64 * 0.7;
    Image::from_fn(size, size, |y, x| {
        let (xf, yf) = (x as f64 / size as f64, y as f64 / size as f64);
        let v = 0.05 + 0.1 * xf + 0.05 * (12.0 * yf + phase).sin().abs();
        [v, 0.9 * v, 0.8 * v]
    })
    .expect("synthetic samples are in range")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Enhance {
            input,
            weights,
            output,
            detail_weights,
            detail_input,
        } => {
            let mut model = load_model(&weights, detail_weights.as_deref())?;
            model.detail_input = match detail_input {
                Wiring::Original => DetailInput::Original,
                Wiring::Enhanced => DetailInput::Enhanced,
            };
            let out = model.enhance(&read_image(&input)?)?;
            log::info!("predicted parameters: {:?}", out.params);
            write(&output, save_ppm(&out.image))?;
        }
        Command::Metrics {
            reference,
            distorted,
            name,
            no_header,
        } => {
            let report = IqaReport::compute(&read_image(&reference)?, &read_image(&distorted)?)?;
            let name = name.unwrap_or_else(|| {
                distorted
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            if !no_header {
                println!("{}", IqaReport::CSV_HEADER);
            }
            println!("{}", report.csv_row(&name));
        }
        Command::FitIsp {
            input,
            reference,
            params_out,
            trace_out,
            lr,
            iters,
            tolerance,
        } => {
            let cfg = OptimizerConfig {
                learning_rate: lr,
                max_iters: iters,
                tolerance,
                ..OptimizerConfig::isp()
            };
            let fit = fit_isp_params(&read_image(&input)?, &read_image(&reference)?, &cfg)?;
            let text = format!("# fitted against a reference by the pixel-MSE surrogate objective\n{}", fit.params);
            write(&params_out, text)?;
            write(&trace_out, fit.trace.to_csv())?;
            println!(
                "objective=mse-surrogate mse={:e} iterations={}",
                fit.mse,
                fit.trace.iterations()
            );
        }
        Command::RefinePrompt {
            embeddings,
            t_tt,
            t_neg,
            normal,
            low,
            series,
            output,
            trace,
            save_as,
            mode,
            p0,
            p1,
            p2,
            lr,
            iters,
        } => {
            let bytes = fs::read(&embeddings).with_context(|| format!("reading {}", embeddings.display()))?;
            let mut table = load_embeddings(&bytes)?;
            let get = |n: &str| table.require(n).cloned();
            let set = RefinementSet {
                t_neg: get(&t_neg)?,
                e_t: get(&normal)?,
                e_f: get(&low)?,
                series: [get(&series[0])?, get(&series[1])?, get(&series[2])?, get(&series[3])?, get(&series[4])?],
                margins: Margins::new(p0, p1, p2)?,
                mode: match mode {
                    Mode::Literal => CwMode::Literal,
                    Mode::TextConsistent => CwMode::TextConsistent,
                },
            };
            let cfg = OptimizerConfig {
                learning_rate: lr,
                max_iters: iters,
                ..OptimizerConfig::default()
            };
            let out = refine_prompt(&get(&t_tt)?, &set, &cfg)?;
            table.insert(save_as.unwrap_or(t_tt), out.t_tt)?;
            write(&output, save_embeddings(&table))?;
            write(&trace, out.trace.to_csv())?;
            println!("loss_cw {:e} -> {:e}", out.trace.initial(), out.loss);
        }
        Command::Iterate { input, params, out_dir } => {
            let text = fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let p: IspParams = text.parse()?;
            let series = generate_iterates(&read_image(&input)?, &p)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for (k, img) in series.images.iter().enumerate() {
                write(&out_dir.join(format!("en{k}.ppm")), save_ppm(img))?;
            }
            write(&out_dir.join("en.ppm"), save_ppm(&series.final_image))?;
        }
        Command::Bench {
            weights,
            seed,
            inputs,
            images,
            size,
            reps,
            edge_config,
            cloud_config,
        } => {
            let model = match weights {
                Some(w) => load_model(&w, None)?,
                None => FusionModel::from_fusion(&WeightStore::seeded(Architecture::Fusion, seed))?,
            };
            let imgs = if inputs.is_empty() {
                (0..images.max(1)).map(|k| synthetic_scene(size, k)).collect()
            } else {
                inputs.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?
            };
            let edge = edge_config.map_or_else(|| Ok(LatencyModel::edge()), |p| read_latency(&p))?;
            let cloud = cloud_config.map_or_else(|| Ok(LatencyModel::cloud()), |p| read_latency(&p))?;
            print!("{}", bench_pipeline(&model, &imgs, reps, &edge, &cloud)?);
        }
        Command::Simulate {
            config,
            preset,
            max_images,
            step,
        } => {
            let model = match (config, preset) {
                (Some(path), _) => read_latency(&path)?,
                (None, Some(Preset::Edge)) => LatencyModel::edge(),
                (None, Some(Preset::Cloud)) => LatencyModel::cloud(),
                (None, None) => unreachable!("clap requires one of --config and --preset"),
            };
            print!("{}", curve_csv(&latency_curve(&model, max_images, step as usize)));
        }
        Command::Serve {
            bind,
            weights,
            detail_weights,
            workers,
            max_payload,
        } => {
            let model = load_model(&weights, detail_weights.as_deref())?;
            let cfg = ServiceConfig {
                max_payload,
                workers,
                ..ServiceConfig::default()
            };
            let server = Server::bind(bind, model, cfg).with_context(|| format!("binding {bind}"))?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run()?;
        }
        Command::InitWeights { arch, seed, out } => {
            let arch = match arch {
                Arch::Encoder => Architecture::Encoder,
                Arch::Detail => Architecture::Detail,
                Arch::Fusion => Architecture::Fusion,
            };
            write(&out, save_weights(&WeightStore::seeded(arch, seed)))?;
        }
        Command::Embed {
            images,
            prompts,
            seed,
            out,
        } => {
            if images.is_empty() && prompts.is_empty() {
                bail!("nothing to embed");
            }
            let mut table = EmbeddingTable::new();
            for path in &images {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                table.insert(name, test_encoder(&read_image(path)?))?;
            }
            let dim = table.dim().unwrap_or(minelight_core::clip::TEST_ENCODER_DIM);
            for (i, name) in prompts.iter().enumerate() {
                table.insert(name.clone(), random_embedding(dim, seed.wrapping_add(i as u64)))?;
            }
            write(&out, save_embeddings(&table))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
