//! Exponential-integrator schemes for the slow–fast system and its reduced
//! equations.
//!
//! Stochastic equations use an exponential Euler step: the diagonal generator
//! is integrated exactly and the remaining drift is frozen over a sub-step,
//! weighted by `phi_1`. The fast component runs on sub-steps of at most
//! `delta/4` with factors `exp(-lambda dt/delta)`. The slow noise and control
//! increments over a slow step use the left-point integrand `g(X_k)`; since the
//! integrand is frozen over the step, the generalized Stieltjes integral over
//! that step is exactly `g(X_k) (B_{k+1} - B_k)`. The increment is spread
//! evenly over the fast sub-steps.
//!
//! Deterministic equations (averaged, LDP and MDP skeletons) use the
//! fourth-order exponential Runge–Kutta scheme of Cox and Matthews.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSystem, DriftField};
use crate::error::{Error, Result};
use crate::grid::{l2, GridPath, TimeGrid};
use crate::quadrature::{phi1, phi2, phi3};
use crate::noise::{CovarianceSpec, HurstParam};
use crate::spectral::SpectralSpace;

/// Scale parameters of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    /// Noise intensity; `0` switches the slow noise off.
    pub epsilon: f64,
    /// Time-scale separation.
    pub delta: f64,
    /// MDP speed `h(eps)`.
    pub speed: Option<f64>,
    /// Khasminskii block length.
    pub block: Option<f64>,
}

impl ScaleParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            epsilon,
            delta,
            speed: None,
            block: None,
        })
    }

    pub fn with_speed(mut self, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("speed h(eps) must be positive, got {h}")));
        }
        self.speed = Some(h);
        Ok(self)
    }

    /// `h(eps) = eps^{-p}`; `p` in `(0, 1/2)` gives `h -> inf`, `sqrt(eps) h -> 0`.
    pub fn with_power_speed(self, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::Config(format!("speed exponent must lie in (0, 1/2), got {p}")));
        }
        self.with_speed(self.epsilon.powf(-p))
    }

    pub fn with_block(mut self, block: f64) -> Result<Self> {
        if !(block.is_finite() && block > 0.0) {
            return Err(Error::Config(format!("block length must be positive, got {block}")));
        }
        self.block = Some(block);
        Ok(self)
    }

    /// `delta / epsilon` (infinite when the noise is off).
    pub fn ratio(&self) -> f64 {
        self.delta / self.epsilon
    }

    /// `sqrt(eps) h(eps)`.
    pub fn deviation_scale(&self) -> Result<f64> {
        let h = self
            .speed
            .ok_or_else(|| Error::Contract("deviation scaling needs a speed h(eps)".into()))?;
        Ok(self.epsilon.sqrt() * h)
    }
}

/// Checks that `delta/eps` decreases strictly along the schedule (the
/// `delta = o(eps)` regime in which rate functions are available).
pub fn check_regime1(schedule: &[ScaleParams]) -> Result<()> {
    if schedule.iter().any(|s| s.epsilon == 0.0) {
        return Err(Error::Refused("schedule contains eps = 0; no rate statement applies".into()));
    }
    for w in schedule.windows(2) {
        if !(w[1].epsilon < w[0].epsilon && w[1].ratio() < w[0].ratio()) {
            return Err(Error::Refused(format!(
                "schedule is not in the delta/eps -> 0 regime: (eps, delta/eps) goes from ({}, {}) to ({}, {})",
                w[0].epsilon,
                w[0].ratio(),
                w[1].epsilon,
                w[1].ratio()
            )));
        }
    }
    Ok(())
}

/// Checks `h(eps) -> inf` and `sqrt(eps) h(eps) -> 0` along a decreasing-eps schedule.
pub fn check_mdp_speeds(schedule: &[ScaleParams]) -> Result<()> {
    let mut prev: Option<(f64, f64)> = None;
    for s in schedule {
        let h = s.speed.ok_or_else(|| Error::Config("MDP schedule entries need a speed".into()))?;
        let d = s.deviation_scale()?;
        if let Some((ph, pd)) = prev {
            if !(h > ph && d < pd) {
                return Err(Error::Config(format!(
                    "speed schedule must have h increasing and sqrt(eps) h decreasing; got h {ph} -> {h}, sqrt(eps) h {pd} -> {d}"
                )));
            }
        }
        prev = Some((h, d));
    }
    Ok(())
}

/// Per-run diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max ||X||` over each slow step.
    pub slow_step_max_norm: Vec<f64>,
    /// `max ||Y||` over each slow step (empty in slow-only mode).
    pub fast_step_max_norm: Vec<f64>,
    pub fast_substeps_per_step: usize,
    pub slow_only: bool,
    pub aborted: bool,
}

/// Slow path, optional fast path (sampled on the slow grid) and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub slow: GridPath,
    pub fast: Option<GridPath>,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// Writes `<stem>_slow.csv`, `<stem>_fast.csv` (if present) and
    /// `<stem>_diagnostics.json`; returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut out = Vec::new();
        let p = dir.join(format!("{stem}_slow.csv"));
        self.slow.write_csv(&p)?;
        out.push(p);
        if let Some(f) = &self.fast {
            let p = dir.join(format!("{stem}_fast.csv"));
            f.write_csv(&p)?;
            out.push(p);
        }
        let p = dir.join(format!("{stem}_diagnostics.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&self.diagnostics)?)?;
        out.push(p);
        Ok(out)
    }
}

/// A fully specified slow–fast system: everything except the scales and the
/// random drivers.
#[derive(Clone)]
pub struct SystemSetup<'a> {
    pub space: &'a SpectralSpace,
    pub coeffs: &'a dyn CoefficientSystem,
    pub q1: &'a CovarianceSpec,
    pub q2: &'a CovarianceSpec,
    pub hurst: HurstParam,
    pub grid: &'a TimeGrid,
    pub x0: &'a [f64],
    pub y0: &'a [f64],
}

fn check_len(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn same_grid(a: &TimeGrid, b: &TimeGrid, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Grid(format!(
            "{what} lives on {} but the slow grid is {}",
            b.describe(),
            a.describe()
        )));
    }
    Ok(())
}

/// Number of fine steps per slow step, after checking that `fine` refines `slow`.
fn substeps(slow: &TimeGrid, fine: &TimeGrid, delta: f64) -> Result<usize> {
    let m = slow.steps();
    if fine.steps() % m != 0 || fine.start() != slow.start() {
        return Err(Error::Grid(format!(
            "fast grid ({}) is not a uniform refinement of the slow grid ({})",
            fine.describe(),
            slow.describe()
        )));
    }
    let r = fine.steps() / m;
    let (st, ft) = (slow.times(), fine.times());
    for k in 0..=m {
        if (ft[k * r] - st[k]).abs() > 1e-12 * st[m].abs().max(1.0) {
            return Err(Error::Grid(format!(
                "fast grid node {} = {} does not match slow node {k} = {}",
                k * r,
                ft[k * r],
                st[k]
            )));
        }
    }
    let h = slow.step();
    let dt = h / r as f64;
    if dt > delta / 4.0 * (1.0 + 1e-12) {
        return Err(Error::Stiffness {
            delta,
            step: dt,
            required_substeps: (4.0 * h / delta).ceil() as usize,
        });
    }
    Ok(r)
}

/// Fast-time fine grid for a slow grid: the coarsest uniform refinement with
/// sub-step `<= delta/4`.
pub fn fast_grid_for(slow: &TimeGrid, delta: f64) -> Result<TimeGrid> {
    let r = (4.0 * slow.step() / delta * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    slow.refine(r)
}

struct Inputs<'a> {
    bh: Option<&'a GridPath>,
    w: Option<&'a GridPath>,
    u: Option<&'a GridPath>,
    vdot: Option<&'a GridPath>,
    /// Slow argument frozen at block starts: path and node index per slow step.
    frozen: Option<(&'a GridPath, Vec<usize>)>,
}

#[allow(clippy::too_many_arguments)]
fn integrate(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    scales: &ScaleParams,
    grid: &TimeGrid,
    inputs: Inputs<'_>,
    x0: &[f64],
    y0: &[f64],
) -> Result<SolveResult> {
    let n = space.dim();
    check_len(n, &vec![0.0; coeffs.dim()])?;
    check_len(n, x0)?;
    check_len(n, y0)?;
    if !grid.is_uniform() {
        return Err(Error::Grid("the slow grid must be uniform".into()));
    }
    for (p, what) in [(inputs.bh, "B^H"), (inputs.u, "u"), (inputs.vdot, "v'")] {
        if let Some(p) = p {
            same_grid(grid, p.grid(), what)?;
            check_len(n, p.value(0))?;
        }
    }
    if let Some((p, _)) = &inputs.frozen {
        same_grid(grid, p.grid(), "frozen slow path")?;
    }
    let slow_only = !coeffs.b_depends_on_y() && inputs.frozen.is_none();
    let (r, w) = if slow_only {
        (1, None)
    } else {
        let w = inputs
            .w
            .ok_or_else(|| Error::Contract("the fast equation needs a Wiener path".into()))?;
        check_len(n, w.value(0))?;
        (substeps(grid, w.grid(), scales.delta)?, Some(w))
    };
    if inputs.vdot.is_some() && scales.epsilon == 0.0 {
        return Err(Error::Contract("a fast control needs eps > 0".into()));
    }

    let m = grid.steps();
    let h = grid.step();
    let dt = h / r as f64;
    let lam = space.eigenvalues();
    let mu = coeffs.fast_damping();
    let x_fast = dt / scales.delta;
    let e_x: Vec<f64> = lam.iter().map(|l| (-l * dt).exp()).collect();
    let p_x: Vec<f64> = lam.iter().map(|l| dt * phi1(-l * dt)).collect();
    let xi: Vec<f64> = lam.iter().map(|l| l + mu).collect();
    let e_y: Vec<f64> = xi.iter().map(|q| (-q * x_fast).exp()).collect();
    let p_y: Vec<f64> = xi.iter().map(|q| x_fast * phi1(-q * x_fast)).collect();
    let n_y: Vec<f64> = xi
        .iter()
        .map(|q| phi1(-2.0 * q * x_fast).sqrt() / scales.delta.sqrt())
        .collect();
    let sqrt_eps = scales.epsilon.sqrt();
    let v_gain = if inputs.vdot.is_some() {
        (scales.delta / scales.epsilon).sqrt()
    } else {
        0.0
    };

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut slow = vec![0.0; (m + 1) * n];
    let mut fast = if slow_only { Vec::new() } else { vec![0.0; (m + 1) * n] };
    slow[..n].copy_from_slice(x0);
    if !slow_only {
        fast[..n].copy_from_slice(y0);
    }
    let mut diag = Diagnostics {
        slow_step_max_norm: Vec::with_capacity(m),
        fast_step_max_norm: Vec::with_capacity(if slow_only { 0 } else { m }),
        fast_substeps_per_step: r,
        slow_only,
        aborted: false,
    };

    let mut kick = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut incr = vec![0.0; n];
    let mut bv = vec![0.0; n];
    let mut fv = vec![0.0; n];
    let mut gw = vec![0.0; n];
    let mut gv = vec![0.0; n];
    let mut dw = vec![0.0; n];

    for k in 0..m {
        kick.iter_mut().for_each(|v| *v = 0.0);
        if let Some(bh) = inputs.bh {
            if sqrt_eps > 0.0 {
                for i in 0..n {
                    incr[i] = bh.value(k + 1)[i] - bh.value(k)[i];
                }
                coeffs.g_apply(&x, &incr, &mut tmp);
                for i in 0..n {
                    kick[i] += sqrt_eps * tmp[i];
                }
            }
        }
        if let Some(u) = inputs.u {
            for i in 0..n {
                incr[i] = u.value(k + 1)[i] - u.value(k)[i];
            }
            coeffs.g_apply(&x, &incr, &mut tmp);
            for i in 0..n {
                kick[i] += tmp[i];
            }
        }
        for v in kick.iter_mut() {
            *v /= h;
        }
        let xarg_frozen = inputs.frozen.as_ref().map(|(p, idx)| p.value(idx[k]).to_vec());
        let mut max_x: f64 = 0.0;
        let mut max_y: f64 = 0.0;
        for j in 0..r {
            let xa: &[f64] = xarg_frozen.as_deref().unwrap_or(&x);
            coeffs.b_into(xa, &y, &mut bv);
            if !slow_only {
                let w = w.expect("checked above");
                let row = k * r + j;
                for i in 0..n {
                    dw[i] = w.value(row + 1)[i] - w.value(row)[i];
                }
                coeffs.f_into(xa, &y, &mut fv);
                coeffs.big_g_apply(xa, &y, &dw, &mut gw);
                if let Some(vd) = inputs.vdot {
                    coeffs.big_g_apply(xa, &y, vd.value(k), &mut gv);
                }
                for i in 0..n {
                    let mut rest = fv[i] + mu * y[i];
                    if inputs.vdot.is_some() {
                        rest += v_gain * gv[i];
                    }
                    y[i] = e_y[i] * y[i] + p_y[i] * rest + n_y[i] * gw[i];
                }
                max_y = max_y.max(l2(&y));
            }
            for i in 0..n {
                x[i] = e_x[i] * x[i] + p_x[i] * (bv[i] + kick[i]);
            }
            max_x = max_x.max(l2(&x));
        }
        if !(max_x.is_finite() && max_y.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                time: grid.times()[k + 1],
            });
        }
        diag.slow_step_max_norm.push(max_x);
        slow[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
        if !slow_only {
            diag.fast_step_max_norm.push(max_y);
            fast[(k + 1) * n..(k + 2) * n].copy_from_slice(&y);
        }
    }
    Ok(SolveResult {
        slow: GridPath::new(grid.clone(), n, slow)?,
        fast: if slow_only {
            None
        } else {
            Some(GridPath::new(grid.clone(), n, fast)?)
        },
        diagnostics: diag,
    })
}

/// The slow–fast system. `bh` lives on the (uniform) slow grid; `w` on a
/// refinement of it with step `<= delta/4` (see [`fast_grid_for`]). When `b`
/// does not depend on `y` the fast equation is skipped and `w` may be `None`.
#[allow(clippy::too_many_arguments)]
pub fn solve_slow_fast(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    scales: &ScaleParams,
    bh: &GridPath,
    w: Option<&GridPath>,
    x0: &[f64],
    y0: &[f64],
) -> Result<SolveResult> {
    let inputs = Inputs {
        bh: Some(bh),
        w,
        u: None,
        vdot: None,
        frozen: None,
    };
    integrate(space, coeffs, scales, bh.grid(), inputs, x0, y0)
}

fn check_control(p: &GridPath, what: &str) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::Contract(format!("control {what} has non-finite values (infinite norm)")));
    }
    if l2(p.value(0)) != 0.0 {
        return Err(Error::Contract(format!("control {what} must start at 0")));
    }
    Ok(())
}

/// The controlled system: `g(X) du` enters the slow equation and
/// `G(X, Y) dv / sqrt(delta eps)` the fast one. With `u = v = 0` this is
/// [`solve_slow_fast`] on the same inputs.
#[allow(clippy::too_many_arguments)]
pub fn solve_controlled(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    scales: &ScaleParams,
    u: &GridPath,
    v: &GridPath,
    bh: &GridPath,
    w: Option<&GridPath>,
    x0: &[f64],
    y0: &[f64],
) -> Result<SolveResult> {
    check_control(u, "u")?;
    check_control(v, "v")?;
    let vdot = v.derivative()?;
    let inputs = Inputs {
        bh: Some(bh),
        w,
        u: Some(u),
        vdot: Some(&vdot),
        frozen: None,
    };
    integrate(space, coeffs, scales, bh.grid(), inputs, x0, y0)
}

/// Node index of `floor(t_k / block) * block` for every slow step `k`.
fn block_starts(grid: &TimeGrid, block: f64) -> Result<Vec<usize>> {
    let h = grid.step();
    if block < h * (1.0 - 1e-12) {
        return Err(Error::Config(format!(
            "Khasminskii block {block} is shorter than the grid step {h}"
        )));
    }
    let t = grid.times();
    Ok((0..grid.steps())
        .map(|k| {
            let start = ((t[k] - t[0]) / block + 1e-9).floor() * block + t[0];
            t.partition_point(|s| *s <= start + 1e-12 * block).saturating_sub(1)
        })
        .collect())
}

/// Auxiliary process for the block (Khasminskii) argument.
///
/// `X_hat` has drift `b(X_tilde(t(D)), Y_hat)` and control `g(X_hat) du` but no
/// fBM term; `Y_hat` is the fast equation with slow argument `X_tilde(t(D))`,
/// the same Wiener path and no fast control. `t(D)` is the last block start
/// before `t`, `D = scales.block`.
#[allow(clippy::too_many_arguments)]
pub fn solve_khasminskii_auxiliary(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    scales: &ScaleParams,
    x_tilde: &GridPath,
    u: Option<&GridPath>,
    w: &GridPath,
    x0: &[f64],
    y0: &[f64],
) -> Result<SolveResult> {
    let block = scales
        .block
        .ok_or_else(|| Error::Config("Khasminskii runs need a block length".into()))?;
    let idx = block_starts(x_tilde.grid(), block)?;
    if let Some(u) = u {
        check_control(u, "u")?;
    }
    let inputs = Inputs {
        bh: None,
        w: Some(w),
        u,
        vdot: None,
        frozen: Some((x_tilde, idx)),
    };
    integrate(space, coeffs, scales, x_tilde.grid(), inputs, x0, y0)
}

/// The frozen fast equation `dY = (AY + F(x, Y)) dt + G(x, Y) dW` in fast time,
/// on the grid of `w`.
pub fn solve_frozen(
    space: &SpectralSpace,
    coeffs: &dyn CoefficientSystem,
    x: &[f64],
    w: &GridPath,
    y0: &[f64],
) -> Result<GridPath> {
    let n = space.dim();
    check_len(n, x)?;
    check_len(n, y0)?;
    check_len(n, w.value(0))?;
    let t = w.times();
    let mu = coeffs.fast_damping();
    let xi: Vec<f64> = space.eigenvalues().iter().map(|l| l + mu).collect();
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(w.len() * n);
    out.extend_from_slice(y0);
    let mut fv = vec![0.0; n];
    let mut gw = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let uniform = w.grid().is_uniform();
    let factors = |dt: f64| -> Vec<(f64, f64, f64)> {
        xi.iter()
            .map(|q| ((-q * dt).exp(), dt * phi1(-q * dt), phi1(-2.0 * q * dt).sqrt()))
            .collect()
    };
    let mut fac = factors(t[1] - t[0]);
    for k in 0..t.len() - 1 {
        if !uniform {
            fac = factors(t[k + 1] - t[k]);
        }
        for i in 0..n {
            dw[i] = w.value(k + 1)[i] - w.value(k)[i];
        }
        coeffs.f_into(x, &y, &mut fv);
        coeffs.big_g_apply(x, &y, &dw, &mut gw);
        for i in 0..n {
            let (e, p, s) = fac[i];
            y[i] = e * y[i] + p * (fv[i] + mu * y[i]) + s * gw[i];
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: k + 1, time: t[k + 1] });
        }
        out.extend_from_slice(&y);
    }
    GridPath::new(w.grid().clone(), n, out)
}

/// Cox–Matthews ETDRK4 for `x' = -Lambda x + N(k, theta, x)` on a uniform grid,
/// where `N` is evaluated at `t_k + theta h`, `theta in {0, 1/2, 1}`.
fn etdrk4(
    space: &SpectralSpace,
    grid: &TimeGrid,
    x0: &[f64],
    mut nl: impl FnMut(usize, f64, &[f64]) -> Result<Vec<f64>>,
) -> Result<GridPath> {
    let n = space.dim();
    check_len(n, x0)?;
    if !grid.is_uniform() {
        return Err(Error::Grid("exponential Runge-Kutta needs a uniform grid".into()));
    }
    let h = grid.step();
    let lam = space.eigenvalues();
    let e: Vec<f64> = lam.iter().map(|l| (-l * h).exp()).collect();
    let e2: Vec<f64> = lam.iter().map(|l| (-l * h / 2.0).exp()).collect();
    let q: Vec<f64> = lam.iter().map(|l| h / 2.0 * phi1(-l * h / 2.0)).collect();
    let f1: Vec<f64> = lam
        .iter()
        .map(|l| {
            let z = -l * h;
            h * (phi1(z) - 3.0 * phi2(z) + 4.0 * phi3(z))
        })
        .collect();
    let f2: Vec<f64> = lam
        .iter()
        .map(|l| {
            let z = -l * h;
            h * (phi2(z) - 2.0 * phi3(z))
        })
        .collect();
    let f3: Vec<f64> = lam
        .iter()
        .map(|l| {
            let z = -l * h;
            h * (-phi2(z) + 4.0 * phi3(z))
        })
        .collect();
    let mut out = Vec::with_capacity(grid.len() * n);
    out.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    for k in 0..grid.steps() {
        let nx = nl(k, 0.0, &x)?;
        for i in 0..n {
            a[i] = e2[i] * x[i] + q[i] * nx[i];
        }
        let na = nl(k, 0.5, &a)?;
        for i in 0..n {
            b[i] = e2[i] * x[i] + q[i] * na[i];
        }
        let nb = nl(k, 0.5, &b)?;
        for i in 0..n {
            c[i] = e2[i] * a[i] + q[i] * (2.0 * nb[i] - nx[i]);
        }
        let nc = nl(k, 1.0, &c)?;
        for i in 0..n {
            x[i] = e[i] * x[i] + f1[i] * nx[i] + 2.0 * f2[i] * (na[i] + nb[i]) + f3[i] * nc[i];
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                time: grid.times()[k + 1],
            });
        }
        out.extend_from_slice(&x);
    }
    GridPath::new(grid.clone(), n, out)
}

/// The averaged equation `dX = (A X + bbar(X)) dt`.
pub fn solve_averaged(space: &SpectralSpace, bbar: &dyn DriftField, grid: &TimeGrid, x0: &[f64]) -> Result<GridPath> {
    etdrk4(space, grid, x0, |_, _, x| bbar.eval(x))
}

/// Node values of a path and their linear interpolation at `theta`.
fn at(p: &GridPath, k: usize, theta: f64) -> Vec<f64> {
    if theta == 0.0 {
        return p.value(k).to_vec();
    }
    if theta == 1.0 {
        return p.value(k + 1).to_vec();
    }
    p.value(k)
        .iter()
        .zip(p.value(k + 1))
        .map(|(a, b)| (1.0 - theta) * a + theta * b)
        .collect()
}

/// LDP skeleton `dX = (A X + bbar(X)) dt + g(X) du`, with `u'` from centered
/// differences. `u = 0` gives [`solve_averaged`].
pub fn solve_skeleton_ldp(
    space: &SpectralSpace,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    u: &GridPath,
    x0: &[f64],
) -> Result<GridPath> {
    check_control(u, "u")?;
    check_len(space.dim(), u.value(0))?;
    let du = u.derivative()?;
    let n = space.dim();
    let mut gu = vec![0.0; n];
    etdrk4(space, u.grid(), x0, |k, th, x| {
        let mut v = bbar.eval(x)?;
        coeffs.g_apply(x, &at(&du, k, th), &mut gu);
        for i in 0..n {
            v[i] += gu[i];
        }
        Ok(v)
    })
}

/// MDP skeleton `dZ = (A + Dbbar(Xbar_t)) Z dt + g(Xbar_t) du`, `Z_0 = 0`.
/// Linear in `u`.
pub fn solve_skeleton_mdp(
    space: &SpectralSpace,
    xbar: &GridPath,
    bbar: &dyn DriftField,
    coeffs: &dyn CoefficientSystem,
    u: &GridPath,
) -> Result<GridPath> {
    same_grid(xbar.grid(), u.grid(), "u")?;
    check_control(u, "u")?;
    let n = space.dim();
    check_len(n, u.value(0))?;
    check_len(n, xbar.value(0))?;
    bbar.jacobian(xbar.value(0))?;
    let du = u.derivative()?;
    let mut gu = vec![0.0; n];
    etdrk4(space, u.grid(), &vec![0.0; n], |k, th, z| {
        let xb = at(xbar, k, th);
        let j = bbar.jacobian(&xb)?;
        let mut v: Vec<f64> = (&j * DVector::from_column_slice(z)).iter().copied().collect();
        coeffs.g_apply(&xb, &at(&du, k, th), &mut gu);
        for i in 0..n {
            v[i] += gu[i];
        }
        Ok(v)
    })
}

/// `Z = (X - Xbar) / (sqrt(eps) h(eps))`.
pub fn deviation_path(x: &GridPath, xbar: &GridPath, scales: &ScaleParams) -> Result<GridPath> {
    same_grid(xbar.grid(), x.grid(), "X")?;
    let s = scales.deviation_scale()?;
    Ok(x.sub(xbar)?.scaled(1.0 / s))
}

/// Dense matrix exponential helper for linear-drift oracles: `exp(M t)`.
pub fn expm(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let a = m * t;
    let norm = a.iter().fold(0.0f64, |s, v| s.max(v.abs())) * a.nrows() as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(squarings);
    let mut term = DMatrix::identity(b.nrows(), b.ncols());
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FnDrift, LinearDissipative};
    use std::collections::BTreeMap;

    fn lin(kv: &[(&str, f64)], dim: usize) -> LinearDissipative {
        let p: BTreeMap<String, f64> = kv.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        LinearDissipative::from_params(dim, &p).unwrap()
    }

    fn zero_family(dim: usize) -> LinearDissipative {
        lin(
            &[("kappa", 0.0), ("b_y", 0.0), ("a", 0.0), ("c", 0.0), ("sigma", 0.0), ("g0", 0.0)],
            dim,
        )
    }

    #[test]
    fn pure_semigroup_when_everything_vanishes() {
        let space = SpectralSpace::new(vec![1.0, 4.0]).unwrap();
        let mut f = zero_family(2);
        f.b_y = 1e-300; // keep the fast equation active
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let scales = ScaleParams::new(0.1, 0.05).unwrap();
        let fine = fast_grid_for(&g, scales.delta).unwrap();
        let bh = GridPath::zeros(g.clone(), 2);
        let w = GridPath::zeros(fine, 2);
        let r = solve_slow_fast(&space, &f, &scales, &bh, Some(&w), &[1.0, 1.0], &[1.0, 2.0]).unwrap();
        for (k, t) in g.times().iter().enumerate() {
            let sx = space.semigroup_apply(*t, &[1.0, 1.0]).unwrap();
            let sy = space.semigroup_apply(t / scales.delta, &[1.0, 2.0]).unwrap();
            for i in 0..2 {
                assert!((r.slow.value(k)[i] - sx[i]).abs() < 1e-12);
                assert!((r.fast.as_ref().unwrap().value(k)[i] - sy[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coarse_fast_grid_is_a_stiffness_error() {
        let space = SpectralSpace::new(vec![1.0]).unwrap();
        let f = lin(&[], 1);
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let scales = ScaleParams::new(0.1, 0.01).unwrap();
        let bh = GridPath::zeros(g.clone(), 1);
        let w = GridPath::zeros(g.refine(2).unwrap(), 1);
        let e = solve_slow_fast(&space, &f, &scales, &bh, Some(&w), &[0.0], &[0.0]).unwrap_err();
        assert!(matches!(e, Error::Stiffness { required_substeps: 40, .. }), "{e}");
    }

    #[test]
    fn averaged_scalar_linear() {
        let space = SpectralSpace::new(vec![1.0]).unwrap();
        let bbar = FnDrift::new(1, |x: &[f64]| vec![-x[0]]);
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let p = solve_averaged(&space, &bbar, &g, &[1.0]).unwrap();
        for (t, v) in p.times().iter().zip(p.data()) {
            assert!((v - (-2.0 * t).exp()).abs() < 1e-9, "{t}: {v}");
        }
    }

    #[test]
    fn averaged_is_fourth_order() {
        let space = SpectralSpace::new(vec![1.0]).unwrap();
        let bbar = FnDrift::new(1, |x: &[f64]| vec![x[0].sin()]);
        let run = |m| *solve_averaged(&space, &bbar, &TimeGrid::uniform(2.0, m).unwrap(), &[1.0]).unwrap().last().first().unwrap();
        let (a, b, c) = (run(10), run(20), run(40));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!((order - 4.0).abs() < 0.3, "{order}");
    }

    #[test]
    fn block_starts_follow_the_floor_rule() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        assert_eq!(block_starts(&g, 0.25).unwrap(), vec![0, 0, 2, 2, 4, 4, 6, 6]);
        assert_eq!(block_starts(&g, 1.0).unwrap(), vec![0; 8]);
        assert!(matches!(block_starts(&g, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn expm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let e = expm(&m, 1.5);
        assert!((e[(0, 0)] - (-1.5f64).exp()).abs() < 1e-13);
        assert!((e[(1, 1)] - 3f64.exp()).abs() < 1e-11);
    }

    #[test]
    fn regime_and_speed_checks() {
        let s = |e: f64, d: f64| ScaleParams::new(e, d).unwrap();
        assert!(check_regime1(&[s(0.4, 0.04), s(0.2, 0.01)]).is_ok());
        assert!(matches!(check_regime1(&[s(0.4, 0.01), s(0.2, 0.01)]), Err(Error::Refused(_))));
        let a = s(0.1, 0.01).with_power_speed(0.2).unwrap();
        let b = s(0.05, 0.001).with_power_speed(0.2).unwrap();
        assert!(check_mdp_speeds(&[a, b]).is_ok());
        assert!(ScaleParams::new(1.0, 0.1).is_err());
    }
}
