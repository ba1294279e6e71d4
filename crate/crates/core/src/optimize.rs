//! Projected gradient descent for the three fitting stages: prompt-pair
//! separation, per-image filter parameters, and positive-prompt refinement
//! under the ranking loss.
//!
//! Every run is deterministic and returns the best iterate it saw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{l2, mean_loss_li_grad, Embedding, Label, PromptPair, RefinementSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::isp::{apply_pipeline, pipeline_jacobian, Hyper, IspParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once one step improves the loss by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 500,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Defaults for [`fit_isp_params`], whose steps are diagonally
    /// preconditioned and so take a step size near 1.
    pub fn isp() -> Self {
        Self {
            learning_rate: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss per iterate (index 0 is the starting point) and the running best.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub losses: Vec<f64>,
    pub best: Vec<f64>,
}

impl Trace {
    fn push(&mut self, loss: f64) {
        let best = self.best.last().map_or(loss, |b| b.min(loss));
        self.losses.push(loss);
        self.best.push(best);
    }

    pub fn iterations(&self) -> usize {
        self.losses.len().saturating_sub(1)
    }

    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_best(&self) -> f64 {
        *self.best.last().expect("trace is never empty")
    }

    /// `iter,loss` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:e}\n"));
        }
        s
    }
}

/// Renormalizes `v`, keeping `fallback` if `v` collapsed to zero.
fn renormalize(v: Vec<f64>, fallback: &[f64]) -> Vec<f64> {
    let n = l2(&v);
    if n > 0.0 && n.is_finite() {
        v.into_iter().map(|x| x / n).collect()
    } else {
        fallback.to_vec()
    }
}

fn step(x: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    x.iter().zip(grad).map(|(a, g)| a - lr * g).collect()
}

/// Random unit vector drawn from a seeded generator.
pub fn random_embedding(dim: usize, seed: u64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

pub fn random_prompt_pair(dim: usize, seed: u64) -> PromptPair {
    let pos = random_embedding(dim, seed);
    let neg = random_embedding(dim, seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    PromptPair { pos, neg }
}

#[derive(Debug, Clone)]
pub struct PromptPairFit {
    pub pair: PromptPair,
    pub loss: f64,
    pub trace: Trace,
}

/// Fits the two prompts so normal-light embeddings score high `g` and
/// low-light ones low `g`, minimizing the mean pairing loss.
pub fn optimize_prompt_pair(
    low: &[Embedding],
    normal: &[Embedding],
    init: &PromptPair,
    cfg: &OptimizerConfig,
) -> Result<PromptPairFit> {
    cfg.validate()?;
    if low.is_empty() || normal.is_empty() {
        return Err(Error::InvalidInput("prompt fitting needs low and normal examples".into()));
    }
    let dim = init.dim();
    if let Some(e) = low.iter().chain(normal).find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch(format!("embedding dim {} vs prompt dim {dim}", e.dim())));
    }
    if init.neg.dim() != dim {
        return Err(Error::DimensionMismatch("prompt pair dims differ".into()));
    }
    let samples: Vec<(&[f64], Label)> = normal
        .iter()
        .map(|e| (e.values(), Label::NormalLight))
        .chain(low.iter().map(|e| (e.values(), Label::LowLight)))
        .collect();

    let mut pos = init.pos.values().to_vec();
    let mut neg = init.neg.values().to_vec();
    let (mut loss, mut gp, mut gn) = mean_loss_li_grad(&samples, &pos, &neg);
    let mut trace = Trace::default();
    trace.push(loss);
    let mut best = (loss, pos.clone(), neg.clone());
    for _ in 0..cfg.max_iters {
        pos = renormalize(step(&pos, &gp, cfg.learning_rate), &pos);
        neg = renormalize(step(&neg, &gn, cfg.learning_rate), &neg);
        let (next, ngp, ngn) = mean_loss_li_grad(&samples, &pos, &neg);
        trace.push(next);
        if next < best.0 {
            best = (next, pos.clone(), neg.clone());
        }
        let improvement = loss - next;
        loss = next;
        gp = ngp;
        gn = ngn;
        if improvement.abs() < cfg.tolerance {
            break;
        }
    }
    Ok(PromptPairFit {
        pair: PromptPair {
            pos: Embedding::normalized(best.1)?,
            neg: Embedding::normalized(best.2)?,
        },
        loss: best.0,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct IspFit {
    pub params: IspParams,
    pub mse: f64,
    pub trace: Trace,
}

/// Mean squared error of the pipeline output against `reference` and its
/// gradient with respect to the six hyperparameters.
pub fn isp_mse_and_grad(img: &Image, reference: &Image, p: &IspParams) -> Result<(f64, [f64; 6])> {
    let (loss, grad, _) = isp_mse_grad_diag(img, reference, p)?;
    Ok((loss, grad))
}

/// Also returns the diagonal of the Gauss-Newton matrix, `2/n * sum(J_h^2)`.
fn isp_mse_grad_diag(img: &Image, reference: &Image, p: &IspParams) -> Result<(f64, [f64; 6], [f64; 6])> {
    img.check_same_dims(reference)?;
    let jac = pipeline_jacobian(img, p)?;
    let n = img.data().len() as f64;
    let residual: Vec<f64> = jac
        .output
        .data()
        .iter()
        .zip(reference.data())
        .map(|(o, r)| o - r)
        .collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let mut grad = [0.0; 6];
    let mut diag = [0.0; 6];
    for h in Hyper::ALL {
        let d = jac.partial(h);
        grad[h.index()] = 2.0 / n * residual.iter().zip(d).map(|(r, d)| r * d).sum::<f64>();
        diag[h.index()] = 2.0 / n * d.iter().map(|d| d * d).sum::<f64>();
    }
    Ok((loss, grad, diag))
}

/// Keeps the preconditioned step finite for parameters the output ignores.
const DIAG_FLOOR: f64 = 1e-8;

/// Surrogate for guided enhancement: fits filter parameters so the pipeline
/// output matches `reference` in the least-squares sense. Starts from the
/// identity and projects onto the parameter box after every step.
///
/// Each coordinate's gradient is divided by its Gauss-Newton diagonal before
/// the fixed step, since raw sensitivities differ by orders of magnitude
/// between the white-balance gains and the sharpening amount.
pub fn fit_isp_params(img: &Image, reference: &Image, cfg: &OptimizerConfig) -> Result<IspFit> {
    fit_isp_params_from(img, reference, IspParams::identity(), cfg)
}

pub fn fit_isp_params_from(img: &Image, reference: &Image, init: IspParams, cfg: &OptimizerConfig) -> Result<IspFit> {
    cfg.validate()?;
    img.check_same_dims(reference)?;
    init.validate()?;
    let mut p = init;
    let (mut loss, mut grad, mut diag) = isp_mse_grad_diag(img, reference, &p)?;
    let mut trace = Trace::default();
    trace.push(loss);
    let mut best = (loss, p);
    for _ in 0..cfg.max_iters {
        if loss == 0.0 {
            break;
        }
        let cur = p.to_array();
        p = IspParams::project(std::array::from_fn(|i| {
            cur[i] - cfg.learning_rate * grad[i] / (diag[i] + DIAG_FLOOR)
        }));
        let (next, g, d) = isp_mse_grad_diag(img, reference, &p)?;
        trace.push(next);
        if next < best.0 {
            best = (next, p);
        }
        let improvement = loss - next;
        loss = next;
        grad = g;
        diag = d;
        if improvement.abs() < cfg.tolerance {
            break;
        }
    }
    Ok(IspFit {
        params: best.1,
        mse: best.0,
        trace,
    })
}

/// Interpolation factors of the four weaker enhancements.
pub const ITERATE_STEPS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Progressively stronger enhancements of one image: `params[k]` sits at
/// fraction `ITERATE_STEPS[k]` between the identity and `final_params`.
#[derive(Debug, Clone)]
pub struct IterateSeries {
    pub params: [IspParams; 4],
    /// `I_en0 .. I_en3`.
    pub images: [Image; 4],
    pub final_params: IspParams,
    pub final_image: Image,
}

impl IterateSeries {
    /// Images ordered strongest first: `I_en, I_en3, I_en2, I_en1, I_en0`.
    pub fn strongest_first(&self) -> [&Image; 5] {
        [
            &self.final_image,
            &self.images[3],
            &self.images[2],
            &self.images[1],
            &self.images[0],
        ]
    }
}

pub fn generate_iterates(img: &Image, p_final: &IspParams) -> Result<IterateSeries> {
    p_final.validate()?;
    let params = ITERATE_STEPS.map(|t| p_final.interpolate_from_identity(t));
    let images = [
        apply_pipeline(img, &params[0])?,
        apply_pipeline(img, &params[1])?,
        apply_pipeline(img, &params[2])?,
        apply_pipeline(img, &params[3])?,
    ];
    Ok(IterateSeries {
        params,
        images,
        final_params: *p_final,
        final_image: apply_pipeline(img, p_final)?,
    })
}

#[derive(Debug, Clone)]
pub struct PromptRefinement {
    pub t_tt: Embedding,
    pub loss: f64,
    pub trace: Trace,
}

/// Descends the ranking loss in the positive prompt, keeping every image
/// embedding and the negative prompt fixed.
pub fn refine_prompt(t_tt: &Embedding, set: &RefinementSet, cfg: &OptimizerConfig) -> Result<PromptRefinement> {
    cfg.validate()?;
    set.check()?;
    if t_tt.dim() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prompt dim {} vs embedding dim {}",
            t_tt.dim(),
            set.dim()
        )));
    }
    let mut t = t_tt.values().to_vec();
    let (mut loss, mut grad) = set.loss_and_grad(&t);
    let mut trace = Trace::default();
    trace.push(loss);
    let mut best = (loss, t.clone());
    for _ in 0..cfg.max_iters {
        if loss == 0.0 {
            break;
        }
        t = renormalize(step(&t, &grad, cfg.learning_rate), &t);
        let (next, g) = set.loss_and_grad(&t);
        trace.push(next);
        if next < best.0 {
            best = (next, t.clone());
        }
        let improvement = loss - next;
        loss = next;
        grad = g;
        if improvement.abs() < cfg.tolerance {
            break;
        }
    }
    let t_tt = if best.1 == t_tt.values() {
        t_tt.clone()
    } else {
        Embedding::normalized(best.1)?
    };
    Ok(PromptRefinement {
        t_tt,
        loss: best.0,
        trace,
    })
}
