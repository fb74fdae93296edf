use mfbm_core::grid::{GridPath, TimeGrid};
use mfbm_core::noise::{FbmSampler, HurstParam};
use mfbm_core::rng::SeedTree;
use mfbm_core::rough::{left_point_sum, path_norms, rs_integral, trapezoid_stieltjes, weyl_backward, weyl_forward, FracOrder};
use mfbm_core::stats::ols_slope;
use rayon::prelude::*;

fn alpha() -> FracOrder {
    FracOrder::new(0.3).unwrap()
}

fn fbm_pair(m: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let grid = TimeGrid::uniform(1.0, m).unwrap();
    let sampler = FbmSampler::new(HurstParam::new(0.75).unwrap(), &grid).unwrap();
    let mut rng = SeedTree::new(50).rng(seed, 0, 0);
    (sampler.sample(&mut rng), sampler.sample(&mut rng))
}

fn subsample(p: &[f64], m: usize) -> GridPath {
    let step = (p.len() - 1) / m;
    GridPath::scalar(TimeGrid::uniform(1.0, m).unwrap(), p.iter().step_by(step).copied().collect()).unwrap()
}

#[test]
fn integral_of_interpolants_equals_the_trapezoid_sum() {
    for seed in 0..3 {
        let (f, g) = fbm_pair(128, seed);
        let grid = TimeGrid::uniform(1.0, 128).unwrap();
        let rs = rs_integral(
            &GridPath::scalar(grid.clone(), f.clone()).unwrap(),
            &GridPath::scalar(grid, g.clone()).unwrap(),
            alpha(),
            (0.0, 1.0),
        )
        .unwrap()
        .0[0];
        let tz = trapezoid_stieltjes(&f, &g);
        assert!((rs - tz).abs() < 1e-5 * tz.abs().max(1.0), "{rs} vs {tz}");
    }
}

#[test]
fn young_sums_converge_at_the_holder_rate() {
    // The error against the fine Riemann sum decays like M^{-(2 eta - 1)}, eta ~ 0.75.
    let fine = 2048;
    let ms = [32usize, 64, 128, 256];
    let errs: Vec<Vec<f64>> = (0..8u64)
        .into_par_iter()
        .map(|seed| {
            let (f, g) = fbm_pair(fine, seed);
            let limit = left_point_sum(&f, &g);
            ms.iter()
                .map(|&m| (rs_integral(&subsample(&f, m), &subsample(&g, m), alpha(), (0.0, 1.0)).unwrap().0[0] - limit).abs())
                .collect()
        })
        .collect();
    let pts: Vec<(f64, f64)> = ms
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let mean = errs.iter().map(|e| e[j]).sum::<f64>() / errs.len() as f64;
            ((m as f64).ln(), mean.ln())
        })
        .collect();
    let rate = -ols_slope(&pts);
    assert!(rate >= 2.0 * 0.75 - 1.0 - 0.1, "empirical rate {rate}");
}

#[test]
fn estimate_holds_on_fbm_pairs() {
    for seed in 0..4 {
        let (f, g) = fbm_pair(256, seed);
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let fp = GridPath::scalar(grid.clone(), f).unwrap();
        let gp = GridPath::scalar(grid, g).unwrap();
        let v = rs_integral(&fp, &gp, alpha(), (0.0, 1.0)).unwrap().0[0];
        let bound = path_norms(&gp, alpha()).unwrap().lambda_g * path_norms(&fp, alpha()).unwrap().w_alpha_1;
        assert!(v.abs() <= bound * (1.0 + 1e-9), "{v} > {bound}");
    }
}

#[test]
fn windows_add_up_on_rough_paths() {
    let (f, g) = fbm_pair(256, 9);
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    let fp = GridPath::scalar(grid.clone(), f).unwrap();
    let gp = GridPath::scalar(grid, g).unwrap();
    let whole = rs_integral(&fp, &gp, alpha(), (0.0, 1.0)).unwrap().0[0];
    let a = rs_integral(&fp, &gp, alpha(), (0.0, 0.375)).unwrap().0[0];
    let b = rs_integral(&fp, &gp, alpha(), (0.375, 1.0)).unwrap().0[0];
    assert!((whole - a - b).abs() <= 1e-6 * whole.abs().max(1.0), "{whole} vs {}", a + b);
}

#[test]
fn weyl_derivatives_of_linear_data_do_not_depend_on_resolution() {
    let coarse = TimeGrid::uniform(1.0, 64).unwrap();
    let fine = coarse.refine(4).unwrap();
    let line = |g: &TimeGrid| GridPath::from_fn(g.clone(), 1, |t| vec![t]).unwrap();
    for (c, f) in [
        (weyl_forward(&line(&coarse), alpha(), 0.0).unwrap().path, weyl_forward(&line(&fine), alpha(), 0.0).unwrap().path),
        (weyl_backward(&line(&coarse), alpha(), 1.0).unwrap().path, weyl_backward(&line(&fine), alpha(), 1.0).unwrap().path),
    ] {
        // compare at the shared nodes (singular endpoints are not evaluated)
        let mut shared = 0;
        for (k, t) in c.times().iter().enumerate() {
            if let Some(j) = f.times().iter().position(|s| (s - t).abs() < 1e-12) {
                assert!((c.value(k)[0] - f.value(j)[0]).abs() < 1e-10, "t = {t}");
                shared += 1;
            }
        }
        assert!(shared >= 60);
    }
}
