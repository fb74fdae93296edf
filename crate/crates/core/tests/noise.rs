use mfbm_core::grid::TimeGrid;
use mfbm_core::noise::{sample_cylindrical_fbm, sample_q_wiener, CovarianceSpec, FbmSampler, HurstParam};
use mfbm_core::rng::SeedTree;
use mfbm_core::spectral::SpectralSpace;
use mfbm_core::stats::{mean_se, ols_slope};

fn h(v: f64) -> HurstParam {
    HurstParam::new(v).unwrap()
}

#[test]
fn terminal_variance_matches_t_to_the_2h() {
    let grid = TimeGrid::uniform(2.0, 32).unwrap();
    for hv in [0.55, 0.7, 0.85] {
        let sampler = FbmSampler::new(h(hv), &grid).unwrap();
        let mut rng = SeedTree::new(40).rng(0, 0, 0);
        let sq: Vec<f64> = (0..20_000).map(|_| sampler.sample(&mut rng).last().unwrap().powi(2)).collect();
        let (m, se) = mean_se(&sq);
        let exact = 2f64.powf(2.0 * hv);
        assert!((m - exact).abs() < 4.0 * se, "H={hv}: {m} vs {exact} (se {se})");
    }
}

#[test]
fn increments_scale_with_the_hurst_exponent() {
    // log E|B(t+s) - B(t)|^2 against log s has slope 2H
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let sampler = FbmSampler::new(h(0.75), &grid).unwrap();
    let mut rng = SeedTree::new(41).rng(0, 0, 0);
    let paths: Vec<Vec<f64>> = (0..200).map(|_| sampler.sample(&mut rng)).collect();
    let pts: Vec<(f64, f64)> = [1usize, 2, 4, 8, 16, 32]
        .iter()
        .map(|&lag| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for p in &paths {
                for k in 0..p.len() - lag {
                    acc += (p[k + lag] - p[k]).powi(2);
                    n += 1.0;
                }
            }
            ((lag as f64 / 256.0).ln(), (acc / n).ln())
        })
        .collect();
    let slope = ols_slope(&pts);
    assert!((slope - 1.5).abs() < 0.05, "slope {slope}");
}

#[test]
fn cylindrical_modes_are_scaled_and_uncorrelated() {
    let space = SpectralSpace::new(vec![1.0, 4.0, 9.0]).unwrap();
    let q = CovarianceSpec::new(vec![1.0, 0.25, 0.0]).unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let sampler = FbmSampler::new(h(0.7), &grid).unwrap();
    let seeds = SeedTree::new(42);
    let ends: Vec<Vec<f64>> = (0..10_000)
        .map(|r| sample_cylindrical_fbm(&space, &q, &sampler, &seeds, r).unwrap().last().to_vec())
        .collect();
    let second = |i: usize, j: usize| mean_se(&ends.iter().map(|e| e[i] * e[j]).collect::<Vec<_>>());
    let (v0, s0) = second(0, 0);
    let (v1, s1) = second(1, 1);
    let (c01, s01) = second(0, 1);
    assert!((v0 - 1.0).abs() < 4.0 * s0);
    assert!((v1 - 0.25).abs() < 4.0 * s1);
    assert!(c01.abs() < 4.0 * s01);
    assert!(ends.iter().all(|e| e[2] == 0.0));
}

#[test]
fn wiener_increments_are_independent_with_step_variance() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::new(vec![2.0]).unwrap();
    let grid = TimeGrid::uniform(1.0, 1000).unwrap();
    let w = sample_q_wiener(&space, &q, &grid, &SeedTree::new(43), 0).unwrap();
    let d: Vec<f64> = w.mode(0).windows(2).map(|p| p[1] - p[0]).collect();
    let (v, se) = mean_se(&d.iter().map(|x| x * x).collect::<Vec<_>>());
    assert!((v - 2e-3).abs() < 4.0 * se, "{v}");
    let (lag1, se1) = mean_se(&d.windows(2).map(|p| p[0] * p[1]).collect::<Vec<_>>());
    assert!(lag1.abs() < 4.0 * se1);
}

#[test]
fn replicas_are_reproducible_and_distinct() {
    let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
    let q = CovarianceSpec::identity(2);
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let sampler = FbmSampler::new(h(0.6), &grid).unwrap();
    let seeds = SeedTree::new(44);
    let a = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, 3).unwrap();
    let b = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, 3).unwrap();
    let c = sample_cylindrical_fbm(&space, &q, &sampler, &seeds, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
