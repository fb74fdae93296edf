//! Rate functions of the large and moderate deviation principles, and Monte
//! Carlo diagnostics of the decay rates they predict.
//!
//! For a path `phi` the minimal control is
//! `u*(t) = int_0^t g(phi)^{-1} (phi' - A phi - bbar(phi)) ds`, and the rate is
//! `I(phi) = 1/2 int |K_H^{-1} u*|_{V_1}^2 dt`, where the `V_1` norm weights
//! mode `i` by `1 / l_i` with `l_i` the eigenvalues of `Q_1`. The moderate
//! deviation rate replaces the drift by its linearization `Dbbar(Xbar) phi`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::coefficients::{CoefficientSystem, DriftField};
use crate::error::{Error, Result};
use crate::grid::{l2, trapezoid, GridPath, TimeGrid};
use crate::noise::{apply_kh_inverse, sample_cylindrical_fbm, sample_q_wiener, CovarianceSpec, FbmSampler, HurstParam};
use crate::quadrature::adaptive;
use crate::rng::SeedTree;
use crate::solver::{check_regime1, fast_grid_for, solve_slow_fast, ScaleParams, SystemSetup};
use crate::spectral::SpectralSpace;
use crate::stats::{log_sum_exp, mean_se, spearman, wilson_interval};

/// Condition number above which `g` is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Which deviation principle a rate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Ldp,
    Mdp,
}

/// A minimal control and its finite-difference derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalControl {
    pub u: GridPath,
    pub udot: GridPath,
}

/// Rate value together with the objects it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `+inf` when some mode with `l_i = 0` must be controlled.
    pub rate: f64,
    pub regime: Regime,
    pub minimal_control: GridPath,
    /// `K_H^{-1} u*`, the `L^2(V_1)` representative of the control.
    pub minimal_control_dot: GridPath,
    /// Discretization error estimate: the change of the rate when the path is
    /// sampled on every other node (or of the energy quadrature alone).
    pub quadrature_error: f64,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct RateReportJson<'a> {
    rate: Option<f64>,
    infinite: bool,
    regime: Regime,
    quadrature_error: f64,
    warnings: &'a [String],
    times: &'a [f64],
    minimal_control: Vec<Vec<f64>>,
    minimal_control_dot: Vec<Vec<f64>>,
}

impl RateReport {
    /// `1/2 ||minimal_control_dot||^2_{L^2(V_1)}`, recomputed.
    pub fn recompute(&self, q1: &CovarianceSpec) -> f64 {
        energy(&self.minimal_control_dot, q1).0
    }

    pub fn to_json(&self) -> Result<String> {
        let j = RateReportJson {
            rate: self.rate.is_finite().then_some(self.rate),
            infinite: self.rate.is_infinite(),
            regime: self.regime,
            quadrature_error: self.quadrature_error,
            warnings: &self.warnings,
            times: self.minimal_control.times(),
            minimal_control: self.minimal_control.modes(),
            minimal_control_dot: self.minimal_control_dot.modes(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }
}

/// `1/2 int sum_i v_i^2 / l_i dt` (trapezoid) and the coarse-grid difference.
fn energy(v: &GridPath, q1: &CovarianceSpec) -> (f64, f64) {
    let t = v.times();
    let dens: Vec<f64> = (0..v.len())
        .map(|k| {
            v.value(k)
                .iter()
                .zip(q1.lambdas())
                .map(|(x, l)| if *l > 0.0 { x * x / l } else { 0.0 })
                .sum::<f64>()
        })
        .collect();
    let fine = 0.5 * trapezoid(t, &dens);
    let (tc, dc): (Vec<f64>, Vec<f64>) = t.iter().zip(&dens).step_by(2).map(|(a, b)| (*a, *b)).unzip();
    let coarse = if tc.len() >= 2 && (t.len() - 1) % 2 == 0 {
        0.5 * trapezoid(&tc, &dc)
    } else {
        fine
    };
    (fine, (fine - coarse).abs())
}

fn inverse_with_condition(g: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let singular = Error::Singularity {
        step,
        condition: cond,
        limit: CONDITION_LIMIT,
    };
    if !(cond <= CONDITION_LIMIT) {
        return Err(singular);
    }
    svd.pseudo_inverse(0.0).map_err(|_| singular)
}

/// `u(t) = int_0^t g_s^{-1} dphi_s - int_0^t g_s^{-1} r_s ds` with both
/// integrals by the trapezoid rule, where `node(k)` returns `(r_k, g_k)`.
/// Integrating `dphi` directly avoids differentiating the path, so the
/// control is second-order accurate even on stiff modes.
fn control_integral(
    phi: &GridPath,
    mut node: impl FnMut(usize) -> Result<(Vec<f64>, DMatrix<f64>)>,
) -> Result<MinimalControl> {
    let n = phi.dim();
    let t = phi.times();
    let mut u = vec![0.0; phi.len() * n];
    let mut prev: Option<(DMatrix<f64>, DVector<f64>)> = None;
    for k in 0..phi.len() {
        let (r, g) = node(k)?;
        let ginv = inverse_with_condition(&g, k)?;
        let gr = &ginv * DVector::from_column_slice(&r);
        if let Some((pinv, pgr)) = prev {
            let h = t[k] - t[k - 1];
            let dphi = DVector::from_iterator(n, (0..n).map(|i| phi.value(k)[i] - phi.value(k - 1)[i]));
            let step = (&pinv + &ginv) * dphi * 0.5 - (&pgr + &gr) * (0.5 * h);
            for i in 0..n {
                u[k * n + i] = u[(k - 1) * n + i] + step[i];
            }
        }
        prev = Some((ginv, gr));
    }
    let u = GridPath::new(phi.grid().clone(), n, u)?;
    let udot = u.derivative()?;
    Ok(MinimalControl { u, udot })
}

/// Minimal-norm control of the LDP skeleton through `phi`.
pub fn minimal_control_ldp(
    phi: &GridPath,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    space: &SpectralSpace,
    x0: &[f64],
) -> Result<MinimalControl> {
    space.check(phi.value(0))?;
    space.check(x0)?;
    let scale = phi.sup_norm().max(1.0);
    let gap: Vec<f64> = phi.value(0).iter().zip(x0).map(|(a, b)| a - b).collect();
    if l2(&gap) > 1e-12 * scale {
        return Err(Error::Contract(format!(
            "phi(0) must equal x0 (distance {:e})",
            l2(&gap)
        )));
    }
    let lam = space.eigenvalues();
    control_integral(phi, |k| {
        let x = phi.value(k);
        let b = bbar.eval(x)?;
        let r: Vec<f64> = (0..x.len()).map(|i| b[i] - lam[i] * x[i]).collect();
        Ok((r, coeffs.g_matrix(x)))
    })
}

fn rate_from_control(
    mc: MinimalControl,
    q1: &CovarianceSpec,
    hurst: HurstParam,
    regime: Regime,
) -> Result<RateReport> {
    if q1.len() != mc.u.dim() {
        return Err(Error::Dimension {
            expected: mc.u.dim(),
            got: q1.len(),
        });
    }
    let mut warnings = Vec::new();
    let scale = mc.u.sup_norm().max(1e-300);
    let mut infinite = false;
    for (i, l) in q1.lambdas().iter().enumerate() {
        if *l == 0.0 {
            let m = mc.u.mode(i).iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if m > 1e-12 * scale.max(1.0) {
                warnings.push(format!(
                    "mode {i} carries no noise (l_{i} = 0) but needs control {m:e}; no admissible control exists"
                ));
                infinite = true;
            }
        }
    }
    let udot = if hurst.is_brownian() {
        mc.udot.clone()
    } else {
        let inv = apply_kh_inverse(hurst, &mc.u)?;
        warnings.extend(inv.warnings);
        inv.udot
    };
    let (e, qerr) = energy(&udot, q1);
    Ok(RateReport {
        rate: if infinite { f64::INFINITY } else { e },
        regime,
        minimal_control: mc.u,
        minimal_control_dot: udot,
        quadrature_error: qerr,
        warnings,
    })
}

/// LDP rate `I(phi)`.
#[allow(clippy::too_many_arguments)]
pub fn rate_ldp(
    phi: &GridPath,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    space: &SpectralSpace,
    q1: &CovarianceSpec,
    hurst: HurstParam,
    x0: &[f64],
) -> Result<RateReport> {
    let mc = minimal_control_ldp(phi, bbar, coeffs, space, x0)?;
    let mut rep = rate_from_control(mc, q1, hurst, Regime::Ldp)?;
    if let Some(c) = coarsen(phi)? {
        let coarse = minimal_control_ldp(&c, bbar, coeffs, space, x0)
            .and_then(|mc| rate_from_control(mc, q1, hurst, Regime::Ldp));
        refine_error_estimate(&mut rep, coarse);
    }
    Ok(rep)
}

/// Every other node of `p`, when the step count is even and at least 4.
fn coarsen(p: &GridPath) -> Result<Option<GridPath>> {
    let steps = p.len() - 1;
    if steps < 4 || steps % 2 != 0 {
        return Ok(None);
    }
    let times: Vec<f64> = p.times().iter().step_by(2).copied().collect();
    let data: Vec<f64> = (0..p.len()).step_by(2).flat_map(|k| p.value(k).to_vec()).collect();
    Ok(Some(GridPath::new(TimeGrid::new(times)?, p.dim(), data)?))
}

/// Replaces the quadrature-only estimate by the change of the whole rate
/// under halving the resolution, when that is available and larger.
fn refine_error_estimate(rep: &mut RateReport, coarse: Result<RateReport>) {
    if let Ok(c) = coarse {
        if rep.rate.is_finite() && c.rate.is_finite() {
            rep.quadrature_error = rep.quadrature_error.max((rep.rate - c.rate).abs());
        }
    }
}

/// Minimal control of the MDP skeleton through `phi` (which must start at 0).
pub fn minimal_control_mdp(
    phi: &GridPath,
    xbar: &GridPath,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    space: &SpectralSpace,
) -> Result<MinimalControl> {
    space.check(phi.value(0))?;
    if phi.grid() != xbar.grid() {
        return Err(Error::Grid("phi and the averaged path must share a grid".into()));
    }
    if l2(phi.value(0)) > 1e-12 * phi.sup_norm().max(1.0) {
        return Err(Error::Contract("the moderate-deviation path must start at 0".into()));
    }
    let lam = space.eigenvalues();
    control_integral(phi, |k| {
        let z = phi.value(k);
        let xb = xbar.value(k);
        let jz = bbar.jacobian(xb)? * DVector::from_column_slice(z);
        let r: Vec<f64> = (0..z.len()).map(|i| jz[i] - lam[i] * z[i]).collect();
        Ok((r, coeffs.g_matrix(xb)))
    })
}

/// MDP rate `I~(phi)`; quadratic in `phi`.
#[allow(clippy::too_many_arguments)]
pub fn rate_mdp(
    phi: &GridPath,
    xbar: &GridPath,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    space: &SpectralSpace,
    q1: &CovarianceSpec,
    hurst: HurstParam,
) -> Result<RateReport> {
    let mc = minimal_control_mdp(phi, xbar, bbar, coeffs, space)?;
    let mut rep = rate_from_control(mc, q1, hurst, Regime::Mdp)?;
    if let (Some(c), Some(xc)) = (coarsen(phi)?, coarsen(xbar)?) {
        let coarse = minimal_control_mdp(&c, &xc, bbar, coeffs, space)
            .and_then(|mc| rate_from_control(mc, q1, hurst, Regime::Mdp));
        refine_error_estimate(&mut rep, coarse);
    }
    Ok(rep)
}

/// Threshold event on one slow mode at the terminal time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalEvent {
    pub mode: usize,
    pub threshold: f64,
    /// `true`: `X_T[mode] >= threshold`; `false`: `<=`.
    pub above: bool,
}

impl TerminalEvent {
    pub fn hit(&self, x: &[f64]) -> bool {
        if self.above {
            x[self.mode] >= self.threshold
        } else {
            x[self.mode] <= self.threshold
        }
    }
}

/// One epsilon cell of a rare-event estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub epsilon: f64,
    pub delta: f64,
    pub replicas: usize,
    pub hits: usize,
    pub aborted: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `-eps log p_hat`; `None` for zero-hit cells, which only give a bound.
    pub minus_eps_log_p: Option<f64>,
    /// `-eps log ci_hi`: lower end of the rate interval (finite also for zero hits).
    pub rate_lo: f64,
    /// `-eps log ci_lo`: upper end (`+inf` for zero hits).
    pub rate_hi: Option<f64>,
}

/// Empirical decay rates along an epsilon schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McLdpReport {
    pub event: TerminalEvent,
    pub cells: Vec<McCell>,
    pub rate_reference: f64,
    pub insufficient_tail_resolution: bool,
}

impl McLdpReport {
    pub fn schedule(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.epsilon).collect()
    }

    pub fn hit_counts(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.hits).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epsilon,p_hat,ci_lo,ci_hi,minus_eps_log_p,rate_reference")?;
        for c in &self.cells {
            let m = c.minus_eps_log_p.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(
                f,
                "{:e},{:e},{:e},{:e},{},{:e}",
                c.epsilon, c.p_hat, c.ci_lo, c.ci_hi, m, self.rate_reference
            )?;
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Minimum replica count for rare-event estimates.
pub const MIN_MC_REPLICAS: usize = 1000;

/// Terminal slow states of `replicas` runs; `None` marks a diverged replica.
pub fn terminal_states(
    setup: &SystemSetup<'_>,
    scales: &ScaleParams,
    sampler: &FbmSampler,
    replicas: usize,
    seeds: &SeedTree,
) -> Result<Vec<Option<Vec<f64>>>> {
    let fine = if setup.coeffs.b_depends_on_y() {
        Some(fast_grid_for(setup.grid, scales.delta)?)
    } else {
        None
    };
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let bh = sample_cylindrical_fbm(setup.space, setup.q1, sampler, seeds, r)?;
            let w = match &fine {
                Some(g) => Some(sample_q_wiener(setup.space, setup.q2, g, seeds, r)?),
                None => None,
            };
            match solve_slow_fast(setup.space, setup.coeffs, scales, &bh, w.as_ref(), setup.x0, setup.y0) {
                Ok(res) => Ok(Some(res.slow.last().to_vec())),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Crude Monte Carlo estimate of `-eps log P(event)` per epsilon, with Wilson
/// intervals (95%). Cell `j` uses the child seed tree `seeds.child(j)`.
pub fn mc_rare_event(
    setup: &SystemSetup<'_>,
    schedule: &[(ScaleParams, usize)],
    event: TerminalEvent,
    rate_reference: f64,
    seeds: &SeedTree,
) -> Result<McLdpReport> {
    if event.mode >= setup.space.dim() {
        return Err(Error::Config(format!("event mode {} out of range", event.mode)));
    }
    let sampler = FbmSampler::new(setup.hurst, setup.grid)?;
    let z = 1.959963984540054;
    let mut cells = Vec::with_capacity(schedule.len());
    for (j, (scales, replicas)) in schedule.iter().enumerate() {
        if *replicas < MIN_MC_REPLICAS {
            return Err(Error::Contract(format!(
                "rare-event cells need at least {MIN_MC_REPLICAS} replicas, got {replicas}"
            )));
        }
        let states = terminal_states(setup, scales, &sampler, *replicas, &seeds.child(j as u64))?;
        let ok: Vec<&Vec<f64>> = states.iter().flatten().collect();
        let hits = ok.iter().filter(|x| event.hit(x)).count();
        let n = ok.len();
        let (lo, hi) = wilson_interval(hits as u64, n as u64, z);
        let eps = scales.epsilon;
        let p = hits as f64 / n.max(1) as f64;
        cells.push(McCell {
            epsilon: eps,
            delta: scales.delta,
            replicas: *replicas,
            hits,
            aborted: replicas - n,
            p_hat: p,
            ci_lo: lo,
            ci_hi: hi,
            minus_eps_log_p: (hits > 0).then(|| -eps * p.ln()),
            rate_lo: -eps * hi.ln(),
            rate_hi: (lo > 0.0).then(|| -eps * lo.ln()),
        });
    }
    let insufficient = cells.iter().all(|c| c.hits == 0);
    Ok(McLdpReport {
        event,
        cells,
        rate_reference,
        insufficient_tail_resolution: insufficient,
    })
}

/// Outcome of [`rate_vs_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub verdict: Verdict,
    pub smallest_eps_estimate: Option<f64>,
    pub ratio_to_reference: Option<f64>,
    /// Spearman correlation between eps and `|estimate - reference|`.
    pub trend_spearman: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Joins a rate value to the Monte Carlo side: PASS when the smallest-eps
/// estimate lies in `[0.5, 1.5] x reference` and the distance to the reference
/// shrinks with eps (Spearman >= 0.8, or all distances equal). Anything else
/// is INCONCLUSIVE; Monte Carlo noise alone never produces a failure.
pub fn rate_vs_mc(report: &McLdpReport, rate_reference: f64) -> Result<ComparisonVerdict> {
    let scales: Vec<ScaleParams> = report
        .cells
        .iter()
        .map(|c| ScaleParams::new(c.epsilon, c.delta))
        .collect::<Result<_>>()?;
    check_regime1(&scales)?;
    let mut diagnostics = Vec::new();
    let usable: Vec<&McCell> = report.cells.iter().filter(|c| c.minus_eps_log_p.is_some()).collect();
    for c in report.cells.iter().filter(|c| c.hits == 0) {
        diagnostics.push(format!(
            "eps = {}: no hits in {} replicas; censored (rate >= {:.4})",
            c.epsilon, c.replicas, c.rate_lo
        ));
    }
    if usable.len() < 2 {
        diagnostics.push(format!("only {} usable cells; need 2", usable.len()));
        return Ok(ComparisonVerdict {
            verdict: Verdict::Inconclusive,
            smallest_eps_estimate: None,
            ratio_to_reference: None,
            trend_spearman: None,
            diagnostics,
        });
    }
    let smallest = usable
        .iter()
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .expect("non-empty");
    let est = smallest.minus_eps_log_p.expect("usable");
    let within = if rate_reference == 0.0 {
        est == 0.0
    } else {
        est >= 0.5 * rate_reference && est <= 1.5 * rate_reference
    };
    let ratio = (rate_reference != 0.0).then(|| est / rate_reference);
    let eps: Vec<f64> = usable.iter().map(|c| c.epsilon).collect();
    let dist: Vec<f64> = usable
        .iter()
        .map(|c| (c.minus_eps_log_p.expect("usable") - rate_reference).abs())
        .collect();
    let flat = dist.iter().all(|d| *d == dist[0]);
    let rho = (!flat).then(|| spearman(&eps, &dist));
    let trend = flat || rho.is_some_and(|r| r >= 0.8);
    if !within {
        diagnostics.push(format!(
            "smallest-eps estimate {est:.4} outside [0.5, 1.5] x reference {rate_reference:.4}"
        ));
    }
    if !trend {
        diagnostics.push(format!("no monotone approach to the reference (Spearman {rho:?})"));
    }
    Ok(ComparisonVerdict {
        verdict: if within && trend {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        },
        smallest_eps_estimate: Some(est),
        ratio_to_reference: ratio,
        trend_spearman: rho,
        diagnostics,
    })
}

/// A bounded functional of the terminal slow state.
pub struct BoundedFunctional<'a> {
    pub f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    /// Declared bound `sup |h|`; `None` is refused.
    pub bound: Option<f64>,
}

/// Laplace-functional estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: usize,
    pub aborted: usize,
}

/// `-eps log E exp(-h(X_T)/eps)`, evaluated stably by log-sum-exp.
pub fn laplace_functional(
    setup: &SystemSetup<'_>,
    scales: &ScaleParams,
    h: &BoundedFunctional<'_>,
    replicas: usize,
    seeds: &SeedTree,
) -> Result<LaplaceEstimate> {
    let bound = h
        .bound
        .filter(|b| b.is_finite())
        .ok_or_else(|| Error::Contract("the Laplace functional needs a declared finite bound on h".into()))?;
    if scales.epsilon == 0.0 {
        return Err(Error::Contract("the Laplace functional needs eps > 0".into()));
    }
    let sampler = FbmSampler::new(setup.hurst, setup.grid)?;
    let states = terminal_states(setup, scales, &sampler, replicas, seeds)?;
    let hv: Vec<f64> = states.iter().flatten().map(|x| (h.f)(x)).collect();
    if let Some(v) = hv.iter().find(|v| !(v.abs() <= bound)) {
        return Err(Error::Contract(format!("h = {v} exceeds its declared bound {bound}")));
    }
    let eps = scales.epsilon;
    let n = hv.len();
    let hmin = hv.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = hv.iter().map(|v| -(v - hmin) / eps).collect();
    let lse = log_sum_exp(&shifted) - (n as f64).ln();
    let value = hmin - eps * lse;
    let w: Vec<f64> = shifted.iter().map(|s| s.exp()).collect();
    let (m, se) = mean_se(&w);
    let to_rate = |p: f64| hmin - eps * p.ln();
    let (lo, hi) = if se > 0.0 {
        (to_rate(m + 1.96 * se), to_rate((m - 1.96 * se).max(f64::MIN_POSITIVE)))
    } else {
        (value, value)
    };
    Ok(LaplaceEstimate {
        value,
        ci_lo: lo,
        ci_hi: hi,
        replicas,
        aborted: replicas - n,
    })
}

/// `inf_z { h(z) + (z - m)^2 / (2 s2) }` by grid search over `[lo, hi]`:
/// the variational limit of the Laplace functional for a Gaussian terminal law
/// with mean `m` and variance `eps s2`.
pub fn gaussian_laplace_limit(h: &dyn Fn(f64) -> f64, m: f64, s2: f64, lo: f64, hi: f64, points: usize) -> f64 {
    (0..=points)
        .map(|i| {
            let z = lo + (hi - lo) * i as f64 / points as f64;
            h(z) + (z - m).powi(2) / (2.0 * s2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Mean and unit-noise variance of one mode of `X_T` for the Gaussian-solvable
/// case `dX = -(lambda + kappa) X dt + sqrt(eps) g0 sqrt(l) dB^H`:
/// `X_T ~ N(m, eps s2)`. The variance of `int_0^T exp(-theta (T-s)) dB^H_s`
/// is evaluated through integration by parts against the fBM covariance.
pub fn ou_fbm_terminal_law(theta: f64, noise: f64, hurst: HurstParam, horizon: f64, x0: f64) -> (f64, f64) {
    let t = horizon;
    let m = (-theta * t).exp() * x0;
    let h2 = 2.0 * hurst.value();
    let f = |s: f64| (-theta * (t - s)).exp();
    let tol = 1e-13;
    // int f(s) R(s, T) ds and the double integral of f f R
    let i1 = adaptive(&mut |s| f(s) * 0.5 * (s.powf(h2) + t.powf(h2) - (t - s).powf(h2)), 0.0, t, tol);
    let int_f = adaptive(&mut |s| f(s), 0.0, t, tol);
    let int_fs = adaptive(&mut |s| f(s) * s.powf(h2), 0.0, t, tol);
    let g = gamma(h2 + 1.0) / theta.powf(h2 + 1.0);
    let int_abs = 2.0 * adaptive(&mut |s| f(s) * f(s) * g * gamma_lr(h2 + 1.0, theta * s), 0.0, t, tol);
    let ffr = int_f * int_fs - 0.5 * int_abs;
    let var = t.powf(h2) - 2.0 * theta * i1 + theta * theta * ffr;
    (m, noise * noise * var)
}

/// Discrete-law companion of [`ou_fbm_terminal_law`] for a uniform grid:
/// the exact variance of `sum_k c_k (B_{k+1} - B_k)` with the weights of the
/// exponential Euler scheme.
pub fn ou_fbm_terminal_law_discrete(
    lambda: f64,
    kappa: f64,
    noise: f64,
    hurst: HurstParam,
    grid: &TimeGrid,
    x0: f64,
) -> (f64, f64) {
    use crate::noise::fbm_covariance;
    use crate::quadrature::phi1;
    let h = grid.step();
    let m = grid.steps();
    let e = (-lambda * h).exp();
    let p = h * phi1(-lambda * h);
    let amp = e - p * kappa;
    let mean = amp.powi(m as i32) * x0;
    let c: Vec<f64> = (0..m).map(|k| p / h * amp.powi((m - 1 - k) as i32)).collect();
    let t = grid.times();
    let mut var = 0.0;
    for i in 0..m {
        for j in 0..m {
            let cov = fbm_covariance(hurst, t[i + 1], t[j + 1]) - fbm_covariance(hurst, t[i + 1], t[j])
                - fbm_covariance(hurst, t[i], t[j + 1])
                + fbm_covariance(hurst, t[i], t[j]);
            var += c[i] * c[j] * cov;
        }
    }
    (mean, noise * noise * var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FnDrift, LinearDissipative};
    use std::collections::BTreeMap;

    fn g_identity(dim: usize) -> LinearDissipative {
        let p: BTreeMap<String, f64> = [("g0", 1.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        LinearDissipative::from_params(dim, &p).unwrap()
    }

    #[test]
    fn classical_energy_of_a_line() {
        // A is tiny, bbar = 0, g = id: u* = phi - phi(0), I = c^2 / 2 at H = 1/2
        let space = SpectralSpace::new(vec![1e-12]).unwrap();
        let g = TimeGrid::uniform(1.0, 200).unwrap();
        let c = 1.7;
        let phi = GridPath::from_fn(g, 1, |t| vec![c * t]).unwrap();
        let zero = FnDrift::new(1, |_: &[f64]| vec![0.0]);
        let r = rate_ldp(
            &phi,
            &zero,
            &g_identity(1),
            &space,
            &CovarianceSpec::identity(1),
            HurstParam::new(0.5).unwrap(),
            &[0.0],
        )
        .unwrap();
        assert!((r.rate - c * c / 2.0).abs() < 1e-9, "{}", r.rate);
        assert!((r.recompute(&CovarianceSpec::identity(1)) - r.rate).abs() <= 1e-10 * r.rate);
    }

    #[test]
    fn uncontrollable_mode_gives_infinite_rate() {
        let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let phi = GridPath::from_fn(g, 2, |t| vec![t, t]).unwrap();
        let zero = FnDrift::new(2, |_: &[f64]| vec![0.0, 0.0]);
        let q1 = CovarianceSpec::new(vec![1.0, 0.0]).unwrap();
        let r = rate_ldp(&phi, &zero, &g_identity(2), &space, &q1, HurstParam::new(0.7).unwrap(), &[0.0, 0.0]).unwrap();
        assert!(r.rate.is_infinite());
        assert!(r.to_json().unwrap().contains("\"infinite\": true"));
    }

    #[test]
    fn start_mismatch_and_singular_g() {
        let space = SpectralSpace::new(vec![1.0]).unwrap();
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let phi = GridPath::from_fn(g, 1, |t| vec![1.0 + t]).unwrap();
        let zero = FnDrift::new(1, |_: &[f64]| vec![0.0]);
        let h = HurstParam::new(0.7).unwrap();
        let q = CovarianceSpec::identity(1);
        assert!(matches!(
            rate_ldp(&phi, &zero, &g_identity(1), &space, &q, h, &[0.0]),
            Err(Error::Contract(_))
        ));
        let mut sing = g_identity(1);
        sing.g0 = 0.0;
        assert!(matches!(
            rate_ldp(&phi, &zero, &sing, &space, &q, h, &[1.0]),
            Err(Error::Singularity { step: 0, .. })
        ));
    }

    #[test]
    fn gaussian_law_continuum_vs_discrete() {
        let h = HurstParam::new(0.7).unwrap();
        let (m, v) = ou_fbm_terminal_law(2.0, 1.0, h, 1.0, 0.5);
        let g = TimeGrid::uniform(1.0, 400).unwrap();
        let (md, vd) = ou_fbm_terminal_law_discrete(1.0, 1.0, 1.0, h, &g, 0.5);
        assert!((m - md).abs() < 5e-3, "{m} {md}");
        assert!((v - vd).abs() < 5e-3 * v, "{v} {vd}");
        // theta -> 0 limit is Var(B_T) = T^{2H}
        let (_, v0) = ou_fbm_terminal_law(1e-6, 1.0, h, 2.0, 0.0);
        assert!((v0 - 2f64.powf(1.4)).abs() < 1e-4);
    }

    #[test]
    fn laplace_limit_by_grid_search() {
        let v = gaussian_laplace_limit(&|_| 0.0, 0.3, 1.0, -2.0, 2.0, 4000);
        assert!(v.abs() < 1e-6);
    }
}
