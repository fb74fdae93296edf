use std::collections::BTreeMap;
use std::sync::Arc;

use mfbm_core::coefficients::{CoefficientSystem, FamilyRegistry};
use mfbm_core::grid::TimeGrid;
use mfbm_core::noise::{sample_cylindrical_fbm, sample_q_wiener, CovarianceSpec, FbmSampler, HurstParam};
use mfbm_core::rng::SeedTree;
use mfbm_core::solver::{fast_grid_for, solve_frozen, solve_slow_fast, ScaleParams};
use mfbm_core::spectral::SpectralSpace;
use mfbm_core::stats::{mean_se, ols_slope};
use mfbm_core::Error;
use rayon::prelude::*;

fn family(name: &str, dim: usize, params: &[(&str, f64)]) -> Arc<dyn CoefficientSystem> {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    FamilyRegistry::default().build(name, dim, &p).unwrap()
}

struct Run {
    slow_sup_sq: f64,
    fast_sq: Vec<f64>,
}

fn runs(m: usize, delta: f64, replicas: u64) -> Vec<Run> {
    let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
    let q = CovarianceSpec::identity(2);
    let coeffs = family("bounded_nonlinear", 2, &[]);
    let grid = TimeGrid::uniform(1.0, m).unwrap();
    let sampler = FbmSampler::new(HurstParam::new(0.7).unwrap(), &grid).unwrap();
    let scales = ScaleParams::new(0.1, delta).unwrap();
    let fine = fast_grid_for(&grid, delta).unwrap();
    let seeds = SeedTree::new(60);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let bh = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, r).unwrap();
            let w = sample_q_wiener(&space, &q, &fine, &seeds, r).unwrap();
            let res = solve_slow_fast(&space, coeffs.as_ref(), &scales, &bh, Some(&w), &[1.0, -0.5], &[0.0, 0.0]).unwrap();
            let y = res.fast.unwrap();
            Run {
                slow_sup_sq: res.slow.sup_norm().powi(2),
                fast_sq: y.node_norms().iter().map(|v| v * v).collect(),
            }
        })
        .collect()
}

#[test]
fn slow_moments_are_stable_under_grid_doubling() {
    let a: Vec<f64> = runs(64, 1e-2, 200).iter().map(|r| r.slow_sup_sq).collect();
    let b: Vec<f64> = runs(128, 1e-2, 200).iter().map(|r| r.slow_sup_sq).collect();
    let (ma, sa) = mean_se(&a);
    let (mb, sb) = mean_se(&b);
    assert!((ma - mb).abs() < 0.05 * ma + 3.0 * (sa * sa + sb * sb).sqrt(), "{ma} vs {mb}");
}

#[test]
fn fast_second_moment_is_bounded_uniformly_in_delta() {
    // stationary E|Y|^2 of the frozen OU part is sum sigma^2 / (2 (lambda + a)) ~ 0.42
    for delta in [1e-2, 1e-3] {
        let rs = runs(64, delta, 100);
        let worst = (1..65)
            .map(|k| rs.iter().map(|r| r.fast_sq[k]).sum::<f64>() / rs.len() as f64)
            .fold(0.0f64, f64::max);
        assert!(worst < 1.0, "delta = {delta}: sup_t E|Y_t|^2 = {worst}");
    }
}

#[test]
fn slow_paths_inherit_the_noise_regularity() {
    // without fast coupling and with eps near 1, increments of X scale like s^H
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("linear_dissipative", 1, &[("b_y", 0.0)]);
    let grid = TimeGrid::uniform(1.0, 512).unwrap();
    let sampler = FbmSampler::new(HurstParam::new(0.7).unwrap(), &grid).unwrap();
    let scales = ScaleParams::new(0.9, 1e-3).unwrap();
    let seeds = SeedTree::new(61);
    let paths: Vec<Vec<f64>> = (0..100)
        .map(|r| {
            let bh = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, r).unwrap();
            solve_slow_fast(&space, coeffs.as_ref(), &scales, &bh, None, &[0.0], &[0.0]).unwrap().slow.mode(0)
        })
        .collect();
    let pts: Vec<(f64, f64)> = [1usize, 2, 4, 8]
        .iter()
        .map(|&lag| {
            let sq: Vec<f64> = paths.iter().flat_map(|p| p.windows(lag + 1).map(|w| (w[lag] - w[0]).powi(2))).collect();
            ((lag as f64).ln(), mean_se(&sq).0.ln())
        })
        .collect();
    let exponent = ols_slope(&pts) / 2.0;
    assert!((exponent - 0.7).abs() < 0.05, "Holder exponent {exponent}");
}

#[test]
fn frozen_equation_relaxes_to_the_ou_variance() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("linear_dissipative", 1, &[("a", 1.0), ("c", 0.0), ("sigma", 1.0)]);
    let grid = TimeGrid::uniform(20.0, 2000).unwrap();
    let seeds = SeedTree::new(62);
    let ends: Vec<f64> = (0..2000)
        .map(|r| {
            let w = sample_q_wiener(&space, &q, &grid, &seeds, r).unwrap();
            solve_frozen(&space, coeffs.as_ref(), &[0.0], &w, &[5.0]).unwrap().last()[0].powi(2)
        })
        .collect();
    let (m, se) = mean_se(&ends);
    assert!((m - 0.25).abs() < 4.0 * se, "{m} vs 1/4");
}

#[test]
fn fast_grid_must_resolve_delta() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("linear_dissipative", 1, &[]);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let sampler = FbmSampler::new(HurstParam::new(0.7).unwrap(), &grid).unwrap();
    let seeds = SeedTree::new(63);
    let bh = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, 0).unwrap();
    let coarse_w = sample_q_wiener(&space, &q, &grid, &seeds, 0).unwrap();
    let scales = ScaleParams::new(0.1, 1e-3).unwrap();
    let err = solve_slow_fast(&space, coeffs.as_ref(), &scales, &bh, Some(&coarse_w), &[1.0], &[0.0]).unwrap_err();
    assert!(matches!(err, Error::Stiffness { .. } | Error::Grid(_)), "{err}");
}
