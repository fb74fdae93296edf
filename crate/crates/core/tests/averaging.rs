use std::collections::BTreeMap;
use std::sync::Arc;

use mfbm_core::averaging::{averaging_error_sweep, build_bbar, check_assumptions, estimate_bbar, BbarSettings};
use mfbm_core::coefficients::{ClosedFormBbar, CoefficientSystem, DriftField, FamilyRegistry};
use mfbm_core::grid::TimeGrid;
use mfbm_core::noise::{CovarianceSpec, HurstParam};
use mfbm_core::rng::SeedTree;
use mfbm_core::solver::{ScaleParams, SystemSetup};
use mfbm_core::spectral::SpectralSpace;
use mfbm_core::Error;

fn family(name: &str, dim: usize, params: &[(&str, f64)]) -> Arc<dyn CoefficientSystem> {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    FamilyRegistry::default().build(name, dim, &p).unwrap()
}

#[test]
fn estimate_forgets_the_initial_fast_state() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("bounded_nonlinear", 1, &[]);
    let settings = BbarSettings::defaults(&space, coeffs.as_ref());
    let seeds = SeedTree::new(70);
    let a = estimate_bbar(&space, coeffs.as_ref(), &q, &[0.8], &[0.0], &settings, &seeds.child(0)).unwrap();
    let b = estimate_bbar(&space, coeffs.as_ref(), &q, &[0.8], &[6.0], &settings, &seeds.child(1)).unwrap();
    let se = (a.se[0].powi(2) + b.se[0].powi(2)).sqrt();
    assert!((a.value.0[0] - b.value.0[0]).abs() < 3.5 * se);
}

#[test]
fn bounded_family_estimate_matches_its_closed_form() {
    let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
    let q = CovarianceSpec::identity(2);
    let coeffs = family("bounded_nonlinear", 2, &[]);
    let closed = ClosedFormBbar::new(coeffs.clone(), &space, &q).unwrap();
    let settings = BbarSettings::defaults(&space, coeffs.as_ref());
    let x = [0.4, -1.3];
    let est = estimate_bbar(&space, coeffs.as_ref(), &q, &x, &[0.0, 0.0], &settings, &SeedTree::new(71)).unwrap();
    let exact = closed.eval(&x).unwrap();
    for i in 0..2 {
        assert!((est.value.0[i] - exact[i]).abs() < 3.5 * est.se[i], "mode {i}");
    }
}

#[test]
fn tabulated_drift_interpolates_the_closed_form() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("linear_dissipative", 1, &[("c", 0.5), ("b_y", 1.0)]);
    let closed = ClosedFormBbar::new(coeffs.clone(), &space, &q).unwrap();
    let settings = BbarSettings {
        replicas: 8,
        ..BbarSettings::defaults(&space, coeffs.as_ref())
    };
    let axes = vec![(0..=8).map(|i| -2.0 + 0.5 * i as f64).collect()];
    let table = build_bbar(&space, coeffs, &q, axes, &[0.0], &settings, &SeedTree::new(72)).unwrap();
    for x in [-1.75, -0.3, 0.0, 1.2] {
        let t = table.eval(&[x]).unwrap()[0];
        let e = closed.eval(&[x]).unwrap()[0];
        assert!((t - e).abs() < 0.05, "x = {x}: {t} vs {e}");
    }
}

fn sweep_means(name: &str, params: &[(&str, f64)]) -> (Vec<f64>, bool) {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family(name, 1, params);
    let bbar = ClosedFormBbar::new(coeffs.clone(), &space, &q).unwrap();
    let grid = TimeGrid::uniform(1.0, 64).unwrap();
    let setup = SystemSetup {
        space: &space,
        coeffs: coeffs.as_ref(),
        q1: &q,
        q2: &q,
        hurst: HurstParam::new(0.7).unwrap(),
        grid: &grid,
        x0: &[1.0],
        y0: &[0.0],
    };
    let schedule: Vec<ScaleParams> = [1e-2, 1e-3].iter().map(|d| ScaleParams::new(0.05, *d).unwrap()).collect();
    let r = averaging_error_sweep(&setup, &bbar, &schedule, 60, &SeedTree::new(73)).unwrap();
    (r.cells.iter().map(|c| c.mean_sup_error).collect(), r.monotone && r.valid)
}

#[test]
fn sweeps_improve_as_delta_shrinks_for_both_families() {
    for (name, params) in [
        ("linear_dissipative", vec![("b_y", 3.0), ("c", 1.0), ("sigma", 3.0), ("g0", 0.2)]),
        ("bounded_nonlinear", vec![("b_y", 3.0), ("sigma", 3.0), ("g0", 0.2), ("g1", 0.0)]),
    ] {
        let (means, ok) = sweep_means(name, &params);
        assert!(ok, "{name}: {means:?}");
    }
}

#[test]
fn sweeps_refuse_schedules_that_do_not_shrink_delta() {
    let space = SpectralSpace::new(vec![1.0]).unwrap();
    let q = CovarianceSpec::identity(1);
    let coeffs = family("linear_dissipative", 1, &[]);
    let bbar = ClosedFormBbar::new(coeffs.clone(), &space, &q).unwrap();
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let setup = SystemSetup {
        space: &space,
        coeffs: coeffs.as_ref(),
        q1: &q,
        q2: &q,
        hurst: HurstParam::new(0.7).unwrap(),
        grid: &grid,
        x0: &[1.0],
        y0: &[0.0],
    };
    let schedule = [ScaleParams::new(0.1, 1e-3).unwrap(), ScaleParams::new(0.1, 1e-2).unwrap()];
    let err = averaging_error_sweep(&setup, &bbar, &schedule, 4, &SeedTree::new(74)).unwrap_err();
    assert!(matches!(err, Error::Refused(_)));
}

#[test]
fn assumption_probe_reports_dissipativity() {
    let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
    let coeffs = family("bounded_nonlinear", 2, &[]);
    let report = check_assumptions(&space, coeffs.as_ref(), 500, 75).unwrap();
    assert!(report.dissipativity_pass);
    assert!(report.eta > 1.0 && report.kappa > 0.0);
    assert!(report.inconsistent.is_empty(), "{:?}", report.inconsistent);
}
