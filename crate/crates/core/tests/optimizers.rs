mod common;

use common::*;
use minelight_core::clip::{softmax2, similarity_g, CwMode, Margins, RefinementSet};
use minelight_core::isp::apply_pipeline;
use minelight_core::optimize::{
    fit_isp_params, optimize_prompt_pair, random_embedding, random_prompt_pair, refine_prompt,
};
use minelight_core::{Embedding, IspParams, OptimizerConfig, Trace};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn assert_best_monotone(t: &Trace) {
    assert_eq!(t.losses.len(), t.best.len());
    assert!(t.best.windows(2).all(|w| w[1] <= w[0]));
    assert!(t.final_best() <= t.initial());
}

#[test]
fn fit_from_matching_reference_stays_at_identity() {
    let img = random_image(1, 16, 16, 0.05, 0.95);
    let fit = fit_isp_params(&img, &img, &OptimizerConfig::isp()).unwrap();
    assert_eq!(fit.params, IspParams::identity());
    assert_eq!(fit.mse, 0.0);
}

#[test]
fn fit_recovers_gamma() {
    let img = random_image(32, 32, 32, 0.05, 0.95);
    let p = IspParams::new(1.0, 1.0, 1.0, 0.6, 0.0, 0.0).unwrap();
    let fit = fit_isp_params(&img, &apply_pipeline(&img, &p).unwrap(), &OptimizerConfig::isp()).unwrap();
    assert!((fit.params.gamma - 0.6).abs() <= 0.02, "{:?}", fit.params);
    assert!(fit.mse < 1e-5, "{}", fit.mse);
    assert_best_monotone(&fit.trace);
}

#[test]
fn fit_matches_six_parameter_target() {
    let img = random_image(33, 32, 32, 0.05, 0.95);
    let p = IspParams::new(1.3, 1.0, 0.8, 0.7, 0.4, 1.5).unwrap();
    let fit = fit_isp_params(&img, &apply_pipeline(&img, &p).unwrap(), &OptimizerConfig::isp()).unwrap();
    assert!(fit.mse < 1e-4, "{}", fit.mse);
    assert!(fit.trace.iterations() <= 500);
    fit.params.validate().unwrap();
}

#[test]
fn fit_recovers_seeded_interior_targets() {
    for seed in 0..5 {
        let img = random_image(600 + seed, 24, 24, 0.05, 0.95);
        let p = interior_params(&mut rng(700 + seed));
        let fit = fit_isp_params(&img, &apply_pipeline(&img, &p).unwrap(), &OptimizerConfig::isp()).unwrap();
        assert!(fit.mse < 1e-4, "seed {seed}: {} at {:?}", fit.mse, p);
        assert!(fit.trace.iterations() <= 500);
    }
}

#[test]
fn fit_rejects_mismatched_reference() {
    let a = random_image(1, 8, 8, 0.0, 1.0);
    let b = random_image(1, 8, 9, 0.0, 1.0);
    assert!(fit_isp_params(&a, &b, &OptimizerConfig::isp()).is_err());
}

#[test]
fn fit_is_deterministic() {
    let img = low_exposure_image(3, 20, 20);
    let p = IspParams::new(1.2, 1.1, 0.9, 0.6, 0.5, 1.0).unwrap();
    let target = apply_pipeline(&img, &p).unwrap();
    let a = fit_isp_params(&img, &target, &OptimizerConfig::isp()).unwrap();
    let b = fit_isp_params(&img, &target, &OptimizerConfig::isp()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
}

#[test]
fn prompt_pair_cannot_separate_identical_sets() {
    let set: Vec<Embedding> = (0..4).map(|i| random_embedding(6, i)).collect();
    let init = random_prompt_pair(6, 9);
    // the approach to ln 2 is slow at the default step, so allow a long run
    let cfg = OptimizerConfig {
        max_iters: 20_000,
        ..OptimizerConfig::default()
    };
    let fit = optimize_prompt_pair(&set, &set, &init, &cfg).unwrap();
    assert!(fit.loss >= std::f64::consts::LN_2 - 1e-9, "{}", fit.loss);
    assert!(fit.trace.iterations() < cfg.max_iters, "should stop on tolerance");
    assert_best_monotone(&fit.trace);
}

#[test]
fn prompt_pair_separates_opposite_embeddings() {
    let e = random_embedding(8, 1);
    let neg_e = Embedding::normalized(e.values().iter().map(|v| -v).collect()).unwrap();
    let init = random_prompt_pair(8, 2);
    let fit = optimize_prompt_pair(&[neg_e], &[e.clone()], &init, &OptimizerConfig::default()).unwrap();
    let g = similarity_g(&e, &fit.pair).unwrap();

    // with unit prompts, e.pos - e.neg <= 2, so g <= sigmoid(2); confirm on
    // the plane spanned by e and one orthogonal direction
    let mut grid_best = 0.0f64;
    let n = 720;
    for i in 0..n {
        let a = i as f64 / n as f64 * std::f64::consts::TAU;
        for j in 0..n {
            let b = j as f64 / n as f64 * std::f64::consts::TAU;
            grid_best = grid_best.max(softmax2(a.cos(), b.cos()));
        }
    }
    assert!((grid_best - sigmoid(2.0)).abs() < 1e-12);
    assert!(g <= sigmoid(2.0) + 1e-12);
    assert!(g > sigmoid(2.0) - 0.01, "g = {g}");
    assert!(fit.loss < fit.trace.initial());
    for p in [&fit.pair.pos, &fit.pair.neg] {
        let n: f64 = p.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn prompt_pair_is_deterministic() {
    let lows: Vec<Embedding> = (0..3).map(|i| random_embedding(5, 10 + i)).collect();
    let normals: Vec<Embedding> = (0..3).map(|i| random_embedding(5, 20 + i)).collect();
    let init = random_prompt_pair(5, 3);
    let cfg = OptimizerConfig::default();
    let a = optimize_prompt_pair(&lows, &normals, &init, &cfg).unwrap();
    let b = optimize_prompt_pair(&lows, &normals, &init, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.pair, b.pair);
}

/// Image embedding whose correlation against `t* = e_x` and `t_neg = e_y`
/// is exactly `r`.
fn with_correlation(r: f64) -> Embedding {
    let d = (r / (1.0 - r)).ln();
    Embedding::normalized(vec![d / 2.0, -d / 2.0, (1.0 - d * d / 2.0).sqrt()]).unwrap()
}

fn toy_set() -> RefinementSet {
    RefinementSet {
        t_neg: Embedding::basis(3, 1),
        e_t: with_correlation(0.8),
        e_f: with_correlation(0.2),
        series: [0.75, 0.62, 0.5, 0.38, 0.25].map(with_correlation),
        margins: Margins::new(0.5, 0.2, 0.1).unwrap(),
        mode: CwMode::Literal,
    }
}

#[test]
fn refine_reaches_zero_loss_on_toy_instance() {
    let set = toy_set();
    let t_star = Embedding::basis(3, 0);
    assert_eq!(set.loss_and_grad(t_star.values()).0, 0.0);

    // dense sphere grid: zero loss is reachable and the grid minimum is zero
    let mut grid_min = f64::INFINITY;
    let n = 400;
    for i in 0..=n {
        let theta = std::f64::consts::PI * i as f64 / n as f64;
        for j in 0..2 * n {
            let phi = std::f64::consts::PI * j as f64 / n as f64;
            let t = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            grid_min = grid_min.min(set.loss_and_grad(&t).0);
        }
    }
    assert_eq!(grid_min, 0.0);

    for seed in 0..5 {
        let init = random_embedding(3, 40 + seed);
        let out = refine_prompt(&init, &set, &OptimizerConfig::default()).unwrap();
        assert!(out.loss < 1e-3, "seed {seed}: {} from {}", out.loss, out.trace.initial());
        assert_best_monotone(&out.trace);
        let n: f64 = out.t_tt.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn refine_returns_satisfied_prompt_unchanged() {
    let set = toy_set();
    let t = Embedding::basis(3, 0);
    let out = refine_prompt(&t, &set, &OptimizerConfig::default()).unwrap();
    assert_eq!(out.t_tt, t);
    assert_eq!(out.loss, 0.0);
    assert_eq!(out.trace.iterations(), 0);
}

#[test]
fn refine_is_deterministic_and_rejects_bad_dims() {
    let set = toy_set();
    let init = random_embedding(3, 7);
    let cfg = OptimizerConfig::default();
    let a = refine_prompt(&init, &set, &cfg).unwrap();
    let b = refine_prompt(&init, &set, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.t_tt, b.t_tt);
    assert!(refine_prompt(&random_embedding(4, 1), &set, &cfg).is_err());
}

#[test]
fn literal_default_margins_keep_a_positive_floor() {
    // r lies in [sigmoid(-2), sigmoid(2)] for unit vectors, so the first
    // hinge can never close under the default 0.9 margin
    let set = RefinementSet {
        margins: Margins::default(),
        ..toy_set()
    };
    let out = refine_prompt(&random_embedding(3, 5), &set, &OptimizerConfig::default()).unwrap();
    assert!(out.loss >= 0.9 - (sigmoid(2.0) - sigmoid(-2.0)) - 1e-12);
    assert_best_monotone(&out.trace);
}
