//! Averaged drift `bbar(x) = int b(x, z) mu^x(dz)` and the averaging principle.
//!
//! The invariant measure `mu^x` of the frozen fast equation is never
//! represented; `bbar` is estimated by time-averaging `b(x, Y^x_t)` along
//! replicas of the frozen equation after a burn-in.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{ClosedFormBbar, CoefficientSystem, DeclaredConstants, DriftField, FamilyRegistry};
use crate::error::{Error, Result};
use crate::grid::{l2, trapezoid, GridPath, TimeGrid};
use crate::noise::{sample_cylindrical_fbm, sample_q_wiener, CovarianceSpec, FbmSampler};
use crate::rng::{stream, SeedTree};
use crate::solver::{fast_grid_for, solve_averaged, solve_frozen, solve_slow_fast, ScaleParams, SystemSetup};
use crate::spectral::{CoeffVector, SpectralSpace};
use crate::stats::mean_se;

/// Time-averaging settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbarSettings {
    pub burn_in: f64,
    pub horizon: f64,
    /// Fast-time step of the frozen equation.
    pub step: f64,
    pub replicas: usize,
}

impl BbarSettings {
    /// Burn-in of ten relaxation times `1/(lambda_1 + beta_1)`, horizon of
    /// 100 burn-ins.
    pub fn defaults(space: &SpectralSpace, coeffs: &dyn CoefficientSystem) -> Self {
        let rate = space.lambda_1() + coeffs.declared().beta1.max(0.0);
        let burn_in = 10.0 / rate;
        Self {
            burn_in,
            horizon: 100.0 * burn_in,
            step: 0.01,
            replicas: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.burn_in >= 0.0 && self.horizon > 0.0 && self.step > 0.0 && self.replicas >= 2) {
            return Err(Error::Config(format!(
                "averaging settings need burn_in >= 0, horizon > 0, step > 0 and >= 2 replicas, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Point estimate of `bbar(x)` with per-component standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbarEstimate {
    pub value: CoeffVector,
    pub se: Vec<f64>,
}

/// Refuses families whose declared constants violate the dissipativity
/// conditions `eta > 1`, `kappa > 0`.
pub fn require_dissipative(space: &SpectralSpace, d: &DeclaredConstants) -> Result<()> {
    let l1 = space.lambda_1();
    let eta = d.eta(l1);
    if !(eta > 1.0) {
        return Err(Error::Assumption {
            constant: "eta".into(),
            value: eta,
            requirement: "eta = 2 lambda_1 - 2 beta_3 - C_2 > 1".into(),
        });
    }
    let kappa = d.kappa(l1);
    if !(kappa > 0.0) {
        return Err(Error::Assumption {
            constant: "kappa".into(),
            value: kappa,
            requirement: "kappa = 2 lambda_1 + 2 beta_1 - C_3 > 0".into(),
        });
    }
    Ok(())
}

/// Time-average of `b(x, Y^x_t)` over `[burn_in, burn_in + horizon]`,
/// averaged over replicas started at `y0`. Replica `r` draws its Wiener path
/// from the streams `(r, mode, WIENER)` of `seeds`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bbar(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    q2: &CovarianceSpec,
    x: &[f64],
    y0: &[f64],
    settings: &BbarSettings,
    seeds: &SeedTree,
) -> Result<BbarEstimate> {
    space.check(x)?;
    space.check(y0)?;
    settings.validate()?;
    let n = space.dim();
    if !coeffs.b_depends_on_y() {
        return Ok(BbarEstimate {
            value: CoeffVector(coeffs.b(x, y0)),
            se: vec![0.0; n],
        });
    }
    require_dissipative(space, &coeffs.declared())?;
    let steps = ((settings.burn_in + settings.horizon) / settings.step).round().max(1.0) as usize;
    let grid = TimeGrid::uniform(settings.burn_in + settings.horizon, steps)?;
    let t = grid.times();
    let first = t.partition_point(|s| *s < settings.burn_in * (1.0 - 1e-12));
    let per_replica: Vec<Vec<f64>> = (0..settings.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let w = sample_q_wiener(space, q2, &grid, seeds, r)?;
            let y = solve_frozen(space, coeffs, x, &w, y0)?;
            let mut bv = vec![0.0; n];
            let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(t.len() - first); n];
            for k in first..t.len() {
                coeffs.b_into(x, y.value(k), &mut bv);
                for i in 0..n {
                    series[i].push(bv[i]);
                }
            }
            let span = t[t.len() - 1] - t[first];
            Ok(series.iter().map(|s| trapezoid(&t[first..], s) / span).collect())
        })
        .collect::<Result<_>>()?;
    let mut value = vec![0.0; n];
    let mut se = vec![0.0; n];
    for i in 0..n {
        let col: Vec<f64> = per_replica.iter().map(|v| v[i]).collect();
        let (m, s) = mean_se(&col);
        value[i] = m;
        se[i] = s;
    }
    Ok(BbarEstimate {
        value: CoeffVector(value),
        se,
    })
}

/// How an [`AveragedDrift`] is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    ClosedForm,
    Tabulated,
}

/// Averaged drift, either closed-form (registered families) or tabulated on
/// an axis-aligned grid with multilinear interpolation (dim <= 3).
///
/// Axes of length one are constant directions. Evaluation outside the
/// tabulated box is a [`Error::Range`] error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragedDrift {
    pub mode: DriftMode,
    pub family: String,
    pub params: std::collections::BTreeMap<String, f64>,
    pub eigenvalues: Vec<f64>,
    pub q2: CovarianceSpec,
    pub axes: Vec<Vec<f64>>,
    /// Row-major over the axes; one vector per node.
    pub values: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub settings: Option<BbarSettings>,
    #[serde(skip)]
    closed: Option<ClosedFormBbar>,
}

/// Largest state dimension supported by tabulation.
pub const MAX_TABULATED_DIM: usize = 3;

impl AveragedDrift {
    pub fn closed_form(coeffs: Arc<dyn CoefficientSystem>, space: &SpectralSpace, q2: &CovarianceSpec) -> Result<Self> {
        let closed = ClosedFormBbar::new(coeffs.clone(), space, q2)?;
        Ok(Self {
            mode: DriftMode::ClosedForm,
            family: coeffs.family().to_string(),
            params: coeffs.params(),
            eigenvalues: space.eigenvalues().to_vec(),
            q2: q2.clone(),
            axes: Vec::new(),
            values: Vec::new(),
            se: Vec::new(),
            settings: None,
            closed: Some(closed),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reloads a saved drift; closed-form drifts are rebuilt from the registry.
    pub fn load(path: impl AsRef<Path>, registry: &FamilyRegistry) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut d: AveragedDrift = serde_json::from_str(&text)?;
        if d.mode == DriftMode::ClosedForm {
            let space = SpectralSpace::new(d.eigenvalues.clone())?;
            let coeffs = registry.build(&d.family, space.dim(), &d.params)?;
            d.closed = Some(ClosedFormBbar::new(coeffs, &space, &d.q2)?);
        } else {
            d.check_table()?;
        }
        Ok(d)
    }

    fn check_table(&self) -> Result<()> {
        let n = self.axes.len();
        let nodes: usize = self.axes.iter().map(Vec::len).product();
        if n != self.eigenvalues.len() || self.values.len() != nodes || self.se.len() != nodes {
            return Err(Error::Config("tabulated drift has inconsistent axes/values".into()));
        }
        if self.se.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Config("tabulated drift has non-finite standard errors".into()));
        }
        Ok(())
    }

    /// Cell index and local coordinate per axis.
    fn locate(&self, x: &[f64]) -> Result<Vec<(usize, f64, f64)>> {
        let mut out = Vec::with_capacity(x.len());
        for (d, ax) in self.axes.iter().enumerate() {
            if ax.len() == 1 {
                out.push((0, 0.0, 0.0));
                continue;
            }
            let (lo, hi) = (ax[0], ax[ax.len() - 1]);
            let tol = 1e-12 * (hi - lo);
            if !(x[d] >= lo - tol && x[d] <= hi + tol) {
                return Err(Error::Range {
                    axis: d,
                    value: x.to_vec(),
                    lo,
                    hi,
                });
            }
            let j = (ax.partition_point(|v| *v <= x[d]).max(1) - 1).min(ax.len() - 2);
            let w = ax[j + 1] - ax[j];
            out.push((j, ((x[d] - ax[j]) / w).clamp(0.0, 1.0), 1.0 / w));
        }
        Ok(out)
    }

    fn corners(&self, cell: &[(usize, f64, f64)], deriv: Option<usize>) -> Vec<(usize, f64)> {
        let n = self.axes.len();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            let mut idx = 0;
            let mut w = 1.0;
            let mut skip = false;
            for d in 0..n {
                let len = self.axes[d].len();
                let bit = (mask >> d) & 1;
                if len == 1 {
                    if bit == 1 {
                        skip = true;
                        break;
                    }
                    if deriv == Some(d) {
                        w = 0.0;
                    }
                    continue;
                }
                let (j, s, inv) = cell[d];
                idx = idx * len + j + bit;
                w *= if deriv == Some(d) {
                    if bit == 1 {
                        inv
                    } else {
                        -inv
                    }
                } else if bit == 1 {
                    s
                } else {
                    1.0 - s
                };
            }
            if !skip {
                out.push((idx, w));
            }
        }
        out
    }

    fn interpolate(&self, x: &[f64], deriv: Option<usize>) -> Result<Vec<f64>> {
        let cell = self.locate(x)?;
        let n = self.axes.len();
        let mut v = vec![0.0; n];
        for (idx, w) in self.corners(&cell, deriv) {
            for i in 0..n {
                v[i] += w * self.values[idx][i];
            }
        }
        Ok(v)
    }

    /// Interpolated standard error (componentwise, same weights as the values).
    pub fn se_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.mode == DriftMode::ClosedForm {
            return Ok(vec![0.0; x.len()]);
        }
        let cell = self.locate(x)?;
        let n = self.axes.len();
        let mut v = vec![0.0; n];
        for (idx, w) in self.corners(&cell, None) {
            for i in 0..n {
                v[i] += w * self.se[idx][i];
            }
        }
        Ok(v)
    }
}

impl DriftField for AveragedDrift {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            DriftMode::ClosedForm => self
                .closed
                .as_ref()
                .ok_or_else(|| Error::Capability("closed-form drift was not rebuilt after loading".into()))?
                .eval(x),
            DriftMode::Tabulated => self.interpolate(x, None),
        }
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match self.mode {
            DriftMode::ClosedForm => self
                .closed
                .as_ref()
                .ok_or_else(|| Error::Capability("closed-form drift was not rebuilt after loading".into()))?
                .jacobian(x),
            DriftMode::Tabulated => {
                let n = self.axes.len();
                let mut j = DMatrix::zeros(n, n);
                for d in 0..n {
                    let col = self.interpolate(x, Some(d))?;
                    j.column_mut(d).copy_from_slice(&col);
                }
                Ok(j)
            }
        }
    }
}

/// Tabulates `bbar` on the tensor grid `axes` (one axis per mode). Node `i`
/// uses the child seed tree `seeds.child(i)`; nodes run concurrently.
pub fn build_bbar(
    space: &SpectralSpace,
    coeffs: Arc<dyn CoefficientSystem>,
    q2: &CovarianceSpec,
    axes: Vec<Vec<f64>>,
    y0: &[f64],
    settings: &BbarSettings,
    seeds: &SeedTree,
) -> Result<AveragedDrift> {
    let n = space.dim();
    if n > MAX_TABULATED_DIM {
        return Err(Error::Capability(format!(
            "tabulation supports dim <= {MAX_TABULATED_DIM}; use the closed form for dim {n}"
        )));
    }
    if axes.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: axes.len(),
        });
    }
    for (d, ax) in axes.iter().enumerate() {
        if ax.is_empty() || ax.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("axis {d} must be non-empty and strictly increasing")));
        }
    }
    let nodes: Vec<Vec<f64>> = {
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        out
    };
    let est: Vec<BbarEstimate> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, x)| estimate_bbar(space, coeffs.as_ref(), q2, x, y0, settings, &seeds.child(i as u64)))
        .collect::<Result<_>>()?;
    let d = AveragedDrift {
        mode: DriftMode::Tabulated,
        family: coeffs.family().to_string(),
        params: coeffs.params(),
        eigenvalues: space.eigenvalues().to_vec(),
        q2: q2.clone(),
        axes,
        values: est.iter().map(|e| e.value.0.clone()).collect(),
        se: est.iter().map(|e| e.se.clone()).collect(),
        settings: Some(*settings),
        closed: None,
    };
    d.check_table()?;
    Ok(d)
}

/// Sampled estimates of the assumption constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub beta1: f64,
    pub beta3: f64,
    pub lipschitz_g: f64,
    pub lipschitz_dg: f64,
}

/// Outcome of [`check_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub family: String,
    pub lambda_1: f64,
    pub samples: usize,
    pub declared: DeclaredConstants,
    pub estimated: EstimatedConstants,
    pub eta: f64,
    pub kappa: f64,
    pub eta_estimated: f64,
    pub kappa_estimated: f64,
    /// `eta > 1` and `kappa > 0` with the declared constants.
    pub dissipativity_pass: bool,
    /// `sup_y (|b| + |G|_HS) <= C_6 (1 + |x|)`: the ratio stays bounded along rays in `y`.
    pub growth_in_y_pass: bool,
    /// Declared constants that the samples contradict.
    pub inconsistent: Vec<String>,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.dissipativity_pass && self.growth_in_y_pass
    }
}

fn hs(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sample_ball(rng: &mut impl Rng, n: usize, radius: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64) / l2(&v).max(1e-300);
    v.into_iter().map(|c| c * r).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Directional derivative matrices `D_i g(x)` by central differences.
fn dg(coeffs: &dyn CoefficientSystem, x: &[f64], i: usize) -> DMatrix<f64> {
    let h = 1e-5;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (coeffs.g_matrix(&xp) - coeffs.g_matrix(&xm)) / (2.0 * h)
}

/// Estimates the assumption constants by sampled difference quotients over
/// random `(x, y)` pairs in a ball of radius 3, evaluates `eta` and `kappa`,
/// and probes the growth of `|b| + |G|_HS` along rays in `y`. Report-only.
pub fn check_assumptions(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let n = space.dim();
    if coeffs.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: coeffs.dim(),
        });
    }
    let declared = coeffs.declared();
    let mut rng = SeedTree::new(seed).rng(0, 0, stream::PROBE);
    let radius = 3.0;
    let mut e = EstimatedConstants {
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: 0.0,
        c5: 0.0,
        c6: 0.0,
        beta1: f64::INFINITY,
        beta3: f64::NEG_INFINITY,
        lipschitz_g: 0.0,
        lipschitz_dg: 0.0,
    };
    for _ in 0..samples.max(1) {
        let x1 = sample_ball(&mut rng, n, radius);
        let x2 = sample_ball(&mut rng, n, radius);
        let y1 = sample_ball(&mut rng, n, radius);
        let y2 = sample_ball(&mut rng, n, radius);
        let d = dist(&x1, &x2) + dist(&y1, &y2);
        let (b1, b2) = (coeffs.b(&x1, &y1), coeffs.b(&x2, &y2));
        let (f1, f2) = (coeffs.f(&x1, &y1), coeffs.f(&x2, &y2));
        let (g1, g2) = (coeffs.big_g_matrix(&x1, &y1), coeffs.big_g_matrix(&x2, &y2));
        e.c1 = e.c1.max(dist(&b1, &b2) / d);
        e.c2 = e.c2.max((dist(&f1, &f2) + hs(&(&g1 - &g2))) / d);
        let grow = 1.0 + l2(&x1) + l2(&y1);
        e.c3 = e.c3.max((l2(&f1) + hs(&g1)) / grow);
        e.c4 = e.c4.max(l2(&b1) / grow);
        let yy = dot(&y1, &y1);
        if yy > 1e-12 {
            e.beta1 = e.beta1.min((declared.beta2 - dot(&y1, &f1)) / yy);
        }
        // beta_3 from pairs with a common x, C_5 from general pairs given beta_3
        let f2x = coeffs.f(&x1, &y2);
        let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
        let df: Vec<f64> = f1.iter().zip(&f2x).map(|(a, b)| a - b).collect();
        let dyy = dot(&dy, &dy);
        if dyy > 1e-12 {
            e.beta3 = e.beta3.max(dot(&dy, &df) / dyy);
        }
        let df2: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
        let dx2 = dist(&x1, &x2).powi(2);
        if dx2 > 1e-12 {
            e.c5 = e.c5.max((dot(&dy, &df2) - declared.beta3 * dyy) / dx2);
        }
        let dxn = dist(&x1, &x2);
        if dxn > 1e-12 {
            let gd = coeffs.g_matrix(&x1) - coeffs.g_matrix(&x2);
            let col = (0..n).map(|i| gd.column(i).norm()).fold(0.0, f64::max);
            e.lipschitz_g = e.lipschitz_g.max(col / dxn);
            let mut m = 0.0f64;
            for i in 0..n {
                let diff = dg(coeffs, &x1, i) - dg(coeffs, &x2, i);
                m = m.max(diff.svd(false, false).singular_values.max());
            }
            e.lipschitz_dg = e.lipschitz_dg.max(m / dxn);
        }
    }
    if !e.beta1.is_finite() {
        e.beta1 = 0.0;
    }
    if !e.beta3.is_finite() {
        e.beta3 = 0.0;
    }
    // growth in y along rays
    let mut near: f64 = 0.0;
    let mut far: f64 = 0.0;
    for _ in 0..samples.clamp(1, 64) {
        let x = sample_ball(&mut rng, n, radius);
        let dir = sample_ball(&mut rng, n, 1.0);
        let unit: Vec<f64> = dir.iter().map(|v| v / l2(&dir).max(1e-300)).collect();
        for (r, slot) in [(1.0, &mut near), (1e3, &mut far)] {
            let y: Vec<f64> = unit.iter().map(|v| v * r).collect();
            let val = (l2(&coeffs.b(&x, &y)) + hs(&coeffs.big_g_matrix(&x, &y))) / (1.0 + l2(&x));
            *slot = slot.max(val);
        }
    }
    e.c6 = near.max(far);
    let growth_in_y_pass = far <= 10.0 * near.max(1e-12);

    let l1 = space.lambda_1();
    let tol = 1e-6;
    let mut inconsistent = Vec::new();
    for (name, est, dec) in [
        ("C1", e.c1, declared.c1),
        ("C2", e.c2, declared.c2),
        ("C3", e.c3, declared.c3),
        ("C4", e.c4, declared.c4),
        ("C5", e.c5, declared.c5),
        ("beta3", e.beta3, declared.beta3),
        ("L_g", e.lipschitz_g, declared.lipschitz_g),
        ("M_g", e.lipschitz_dg, declared.lipschitz_dg),
    ] {
        if est > dec + tol * (1.0 + dec.abs()) {
            inconsistent.push(name.to_string());
        }
    }
    if e.beta1 < declared.beta1 - tol * (1.0 + declared.beta1.abs()) {
        inconsistent.push("beta1".to_string());
    }
    if growth_in_y_pass && e.c6 > declared.c6 + tol * (1.0 + declared.c6) {
        inconsistent.push("C6".to_string());
    }
    let eta = declared.eta(l1);
    let kappa = declared.kappa(l1);
    Ok(AssumptionReport {
        family: coeffs.family().to_string(),
        lambda_1: l1,
        samples,
        declared,
        estimated: e,
        eta,
        kappa,
        eta_estimated: 2.0 * l1 - 2.0 * e.beta3 - e.c2,
        kappa_estimated: 2.0 * l1 + 2.0 * e.beta1 - e.c3,
        dissipativity_pass: eta > 1.0 && kappa > 0.0,
        growth_in_y_pass,
        inconsistent,
    })
}

/// One cell of an averaging sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub delta: f64,
    pub mean_sup_error: f64,
    pub se: f64,
    pub replicas: usize,
    pub aborted: usize,
}

/// Result of [`averaging_error_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Means strictly decrease along the schedule.
    pub monotone: bool,
    /// No cell lost more than 1% of its replicas to divergence.
    pub valid: bool,
}

/// `sup_t |X^{eps,delta}_t - Xbar_t|` for one replica.
pub fn sup_error_replica(
    setup: &SystemSetup<'_>,
    scales: &ScaleParams,
    sampler: &FbmSampler,
    xbar: &GridPath,
    seeds: &SeedTree,
    replica: u64,
) -> Result<(f64, GridPath)> {
    let bh = sample_cylindrical_fbm(setup.space, setup.q1, sampler, seeds, replica)?;
    let w = if setup.coeffs.b_depends_on_y() {
        let fine = fast_grid_for(setup.grid, scales.delta)?;
        Some(sample_q_wiener(setup.space, setup.q2, &fine, seeds, replica)?)
    } else {
        None
    };
    let r = solve_slow_fast(setup.space, setup.coeffs, scales, &bh, w.as_ref(), setup.x0, setup.y0)?;
    let e = r.slow.sub(xbar)?.sup_norm();
    Ok((e, r.slow))
}

/// Mean sup-error between the slow component and the averaged trajectory for
/// each scale pair, with replicas run concurrently. Replica `r` uses the same
/// fBM stream in every cell.
pub fn averaging_error_sweep(
    setup: &SystemSetup<'_>,
    bbar: &dyn DriftField,
    schedule: &[ScaleParams],
    replicas: usize,
    seeds: &SeedTree,
) -> Result<SweepReport> {
    for w in schedule.windows(2) {
        let ok = w[1].delta < w[0].delta
            && (w[0].epsilon == 0.0 || w[1].epsilon == 0.0 || w[1].ratio() < w[0].ratio());
        if !ok {
            return Err(Error::Refused(format!(
                "averaging sweeps need delta and delta/eps decreasing along the schedule; got {:?} then {:?}",
                (w[0].epsilon, w[0].delta),
                (w[1].epsilon, w[1].delta)
            )));
        }
    }
    let sampler = FbmSampler::new(setup.hurst, setup.grid)?;
    let xbar = solve_averaged(setup.space, bbar, setup.grid, setup.x0)?;
    let mut cells = Vec::with_capacity(schedule.len());
    for scales in schedule {
        let errs: Vec<Option<f64>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| match sup_error_replica(setup, scales, &sampler, &xbar, seeds, r) {
                Ok((e, _)) => Ok(Some(e)),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let ok: Vec<f64> = errs.iter().flatten().copied().collect();
        let (m, se) = mean_se(&ok);
        cells.push(SweepCell {
            epsilon: scales.epsilon,
            delta: scales.delta,
            mean_sup_error: m,
            se,
            replicas,
            aborted: replicas - ok.len(),
        });
    }
    let monotone = cells.windows(2).all(|w| w[1].mean_sup_error < w[0].mean_sup_error);
    let valid = cells.iter().all(|c| (c.aborted as f64) <= 0.01 * c.replicas as f64);
    Ok(SweepReport { cells, monotone, valid })
}
