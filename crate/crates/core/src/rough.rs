//! Weyl fractional derivatives, the generalized Riemann–Stieltjes (Zähle)
//! integral and the pathwise norms built from them.
//!
//! Grid data is interpreted as its piecewise-linear interpolant. All singular
//! integrals `int (f(t)-f(s)) / |t-s|^{1+p} ds` are then evaluated cell by cell
//! in closed form, so the Weyl derivatives of piecewise-linear paths are exact
//! up to rounding. The outer integral of the Zähle formula, whose integrand has
//! power singularities at every node, uses a graded Gauss–Legendre rule on each
//! cell.
//!
//! Sign convention: the integral is usually written as
//! `(-1)^alpha int D^alpha_{0+} f * D^{1-alpha}_{T-} g_{T-}`, where the
//! backward derivative carries a factor `(-1)^{1-alpha}`. The two phases
//! multiply to `-1`, which [`weyl_backward`] absorbs, so it returns the
//! real-valued quantity
//! `(1/Gamma(alpha)) [ (g(b)-g(t))/(b-t)^{1-alpha} + (1-alpha) int_t^b (g(s)-g(t))/(s-t)^{2-alpha} ds ]`
//! and the integral is the plain product integral of the two derivatives.
//! For `g(t) = t` this gives `(b-t)^alpha / Gamma(1+alpha)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::bounds::{BoundEntry, BoundReport};
use crate::error::{Error, Result};
use crate::grid::{GridPath, TimeGrid};
use crate::noise::{CovarianceSpec, HurstParam};
use crate::quadrature::{adaptive, GaussLegendre};
use crate::spectral::CoeffVector;

/// Fractional order `alpha` in `(0, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1/2), got {alpha}")));
        }
        Ok(Self(alpha))
    }

    /// Checks the pairing `1 - H < alpha < 1/2`.
    pub fn for_hurst(alpha: f64, h: &HurstParam) -> Result<Self> {
        let lo = 1.0 - h.value();
        if !(alpha > lo && alpha < 0.5) {
            return Err(Error::Domain(format!(
                "alpha = {alpha} outside the admissible interval ({lo}, 0.5) for H = {}",
                h.value()
            )));
        }
        Ok(Self(alpha))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FracOrder {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        FracOrder::new(v)
    }
}

impl From<FracOrder> for f64 {
    fn from(a: FracOrder) -> f64 {
        a.0
    }
}

/// Scalar data that is linear on every cell but may jump at nodes.
///
/// `left[j]`, `right[j]` are the limits at `t_j+` and `t_{j+1}-`.
#[derive(Debug, Clone)]
pub(crate) struct CellLinear<'a> {
    pub t: &'a [f64],
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl<'a> CellLinear<'a> {
    pub fn continuous(t: &'a [f64], f: &[f64]) -> Self {
        Self {
            t,
            left: f[..f.len() - 1].to_vec(),
            right: f[1..].to_vec(),
        }
    }

    fn slope(&self, j: usize) -> f64 {
        (self.right[j] - self.left[j]) / (self.t[j + 1] - self.t[j])
    }

    /// Cell containing `tau` (the last cell for `tau = T`).
    fn cell_of(&self, tau: f64) -> usize {
        let n = self.left.len();
        match self.t.binary_search_by(|x| x.total_cmp(&tau)) {
            Ok(k) => k.min(n - 1),
            Err(k) => k.saturating_sub(1).min(n - 1),
        }
    }

    fn eval(&self, tau: f64) -> f64 {
        let j = self.cell_of(tau);
        self.left[j] + self.slope(j) * (tau - self.t[j])
    }
}

/// `int_{t_0}^{tau} (f(tau) - f(s)) / (tau - s)^{1+p} ds` for `p` in (0,1).
///
/// `tau` may sit anywhere in `(t_0, T]`; when it is a node, the cell ending at
/// `tau` is treated as the partial cell (the data must be continuous there).
pub(crate) fn left_difference_integral(data: &CellLinear, tau: f64, p: f64) -> f64 {
    let t = data.t;
    let k = data.cell_of(tau);
    // a node tau belongs to the cell ending there
    let k = if k > 0 && tau == t[k] { k - 1 } else { k };
    let ftau = data.left[k] + data.slope(k) * (tau - t[k]);
    let mk = data.slope(k);
    let d_part = tau - t[k];
    let mut acc = if d_part > 0.0 {
        mk * d_part.powf(1.0 - p) / (1.0 - p)
    } else {
        0.0
    };
    for j in 0..k {
        let m = data.slope(j);
        let d_lo = tau - t[j + 1];
        let d_hi = tau - t[j];
        let pj = ftau - data.right[j];
        acc += (pj - m * d_lo) * (d_lo.powf(-p) - d_hi.powf(-p)) / p
            + m * (d_hi.powf(1.0 - p) - d_lo.powf(1.0 - p)) / (1.0 - p);
    }
    acc
}

/// `int_{tau}^{T} (g(s) - g(tau)) / (s - tau)^{2-q} ds` for `q` in (0,1).
pub(crate) fn right_difference_integral(data: &CellLinear, tau: f64, q: f64) -> f64 {
    let t = data.t;
    let n = data.left.len();
    let k = data.cell_of(tau);
    let gtau = data.eval(tau);
    let mk = data.slope(k);
    let d_part = t[k + 1] - tau;
    let mut acc = if d_part > 0.0 {
        mk * d_part.powf(q) / q
    } else {
        0.0
    };
    for j in k + 1..n {
        let m = data.slope(j);
        let d_lo = t[j] - tau;
        let d_hi = t[j + 1] - tau;
        let qj = data.left[j] - gtau;
        acc += (qj - m * d_lo) * (d_lo.powf(q - 1.0) - d_hi.powf(q - 1.0)) / (1.0 - q)
            + m * (d_hi.powf(q) - d_lo.powf(q)) / q;
    }
    acc
}

fn weyl_forward_at(data: &CellLinear, a: f64, alpha: f64, tau: f64) -> f64 {
    let ftau = data.eval(tau);
    (ftau / (tau - a).powf(alpha) + alpha * left_difference_integral(data, tau, alpha)) / gamma(1.0 - alpha)
}

fn weyl_backward_at(data: &CellLinear, b_val: f64, b: f64, alpha: f64, tau: f64) -> f64 {
    let gtau = data.eval(tau);
    ((b_val - gtau) / (b - tau).powf(1.0 - alpha)
        + (1.0 - alpha) * right_difference_integral(data, tau, alpha))
        / gamma(alpha)
}

/// Weyl derivative output: values at the retained nodes plus warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylResult {
    pub path: GridPath,
    /// Nodes dropped because the formula is singular there.
    pub warnings: Vec<String>,
}

fn scalar_values(f: &GridPath) -> Result<&[f64]> {
    if f.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: f.dim(),
        });
    }
    Ok(f.data())
}

/// `D^alpha_{a+} f` at every grid node `t > a`; `a` must be the first node.
pub fn weyl_forward(f: &GridPath, alpha: FracOrder, a: f64) -> Result<WeylResult> {
    let vals = scalar_values(f)?;
    let t = f.times();
    if t.len() < 2 {
        return Err(Error::Grid("Weyl derivative needs at least two nodes".into()));
    }
    if a != t[0] {
        return Err(Error::Grid(format!(
            "lower terminal a = {a} must equal the first grid node {}",
            t[0]
        )));
    }
    let data = CellLinear::continuous(t, vals);
    let out: Vec<f64> = t[1..]
        .iter()
        .map(|&tau| weyl_forward_at(&data, a, alpha.value(), tau))
        .collect();
    let grid = TimeGrid::new(t[1..].to_vec())?;
    Ok(WeylResult {
        path: GridPath::scalar(grid, out)?,
        warnings: vec![format!("node t = {a} dropped: D^alpha_(a+) is singular at the lower terminal")],
    })
}

/// Real-valued `D^{1-alpha}_{b-} g_{b-}` at every node `t < b`; `b` must be the
/// last node. See the module docs for the sign convention.
pub fn weyl_backward(g: &GridPath, alpha: FracOrder, b: f64) -> Result<WeylResult> {
    let vals = scalar_values(g)?;
    let t = g.times();
    if t.len() < 2 {
        return Err(Error::Grid("Weyl derivative needs at least two nodes".into()));
    }
    let n = t.len();
    if b != t[n - 1] {
        return Err(Error::Grid(format!(
            "upper terminal b = {b} must equal the last grid node {}",
            t[n - 1]
        )));
    }
    let data = CellLinear::continuous(t, vals);
    let out: Vec<f64> = t[..n - 1]
        .iter()
        .map(|&tau| weyl_backward_at(&data, vals[n - 1], b, alpha.value(), tau))
        .collect();
    let grid = TimeGrid::new(t[..n - 1].to_vec())?;
    Ok(WeylResult {
        path: GridPath::scalar(grid, out)?,
        warnings: vec![format!("node t = {b} dropped: D^(1-alpha)_(b-) is singular at the upper terminal")],
    })
}

/// Options for the Zähle integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsOptions {
    /// Graded Gauss–Legendre nodes per grid cell for the outer integral.
    pub nodes_per_cell: usize,
    /// Norm values above this cap are treated as infinite.
    pub norm_cap: f64,
}

impl Default for RsOptions {
    fn default() -> Self {
        Self {
            nodes_per_cell: 6,
            norm_cap: 1e8,
        }
    }
}

/// Precomputed outer quadrature and backward derivatives of the integrators.
struct ZahleIntegrator<'a> {
    t: &'a [f64],
    alpha: f64,
    /// (cell, node, weight) for the outer integral over `[0, T]`.
    outer: Vec<(usize, f64, f64)>,
}

impl<'a> ZahleIntegrator<'a> {
    fn new(t: &'a [f64], alpha: f64, nodes_per_cell: usize) -> Self {
        let rule = GaussLegendre::new(nodes_per_cell.max(2));
        let mut outer = Vec::with_capacity((t.len() - 1) * rule.len());
        for j in 0..t.len() - 1 {
            for (x, w) in rule.graded_on(t[j], t[j + 1]) {
                outer.push((j, x, w));
            }
        }
        Self { t, alpha, outer }
    }

    /// Real backward derivative of `g` at the outer nodes.
    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let data = CellLinear::continuous(self.t, g);
        let b = *self.t.last().unwrap();
        let gb = *g.last().unwrap();
        self.outer
            .iter()
            .map(|&(_, x, _)| weyl_backward_at(&data, gb, b, self.alpha, x))
            .collect()
    }

    /// `int_0^T D^alpha_{0+}[f 1_{(t_lo, t_hi)}] * dback` with window cells `[c_lo, c_hi)`.
    fn integrate(&self, f: &[f64], c_lo: usize, c_hi: usize, dback: &[f64]) -> f64 {
        let n = self.t.len() - 1;
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        for j in c_lo..c_hi {
            left[j] = f[j];
            right[j] = f[j + 1];
        }
        let data = CellLinear {
            t: self.t,
            left,
            right,
        };
        let t0 = self.t[0];
        let g1a = gamma(1.0 - self.alpha);
        let mut acc = 0.0;
        for (&(cell, x, w), db) in self.outer.iter().zip(dback) {
            // D^alpha of the windowed data vanishes before the window opens
            if cell < c_lo {
                continue;
            }
            let fx = data.left[cell] + data.slope(cell) * (x - self.t[cell]);
            let d = (fx / (x - t0).powf(self.alpha)
                + self.alpha * left_difference_integral_open(&data, cell, x, self.alpha))
                / g1a;
            acc += w * d * db;
        }
        acc
    }
}

/// Like [`left_difference_integral`] but for `tau` strictly inside `cell`,
/// allowing jumps at nodes.
fn left_difference_integral_open(data: &CellLinear, cell: usize, tau: f64, p: f64) -> f64 {
    let t = data.t;
    let mk = data.slope(cell);
    let ftau = data.left[cell] + mk * (tau - t[cell]);
    let d_part = tau - t[cell];
    let mut acc = mk * d_part.powf(1.0 - p) / (1.0 - p);
    for j in 0..cell {
        let m = data.slope(j);
        let d_lo = tau - t[j + 1];
        let d_hi = tau - t[j];
        let pj = ftau - data.right[j];
        acc += (pj - m * d_lo) * (d_lo.powf(-p) - d_hi.powf(-p)) / p
            + m * (d_hi.powf(1.0 - p) - d_lo.powf(1.0 - p)) / (1.0 - p);
    }
    acc
}

fn window_cells(grid: &TimeGrid, window: (f64, f64)) -> Result<(usize, usize)> {
    let (s, t) = window;
    if !(s < t) {
        return Err(Error::Domain(format!("window [{s}, {t}] must have s < t")));
    }
    let find = |x: f64| {
        grid.index_of(x).ok_or_else(|| {
            Error::Grid(format!(
                "window endpoint {x} is not a node of {}",
                grid.describe()
            ))
        })
    };
    Ok((find(s)?, find(t)?))
}

/// `int_s^t f dg` via the Zähle formula applied to `f 1_{(s,t)}` on the whole grid.
///
/// `f` and `g` must share the grid. Mode-wise when both have the same
/// dimension; a one-dimensional `f` or `g` is broadcast against the other.
/// Window endpoints must be grid nodes.
pub fn rs_integral(f: &GridPath, g: &GridPath, alpha: FracOrder, window: (f64, f64)) -> Result<CoeffVector> {
    rs_integral_with(f, g, alpha, window, RsOptions::default())
}

pub fn rs_integral_with(
    f: &GridPath,
    g: &GridPath,
    alpha: FracOrder,
    window: (f64, f64),
    opts: RsOptions,
) -> Result<CoeffVector> {
    if f.grid() != g.grid() {
        return Err(Error::Grid("integrand and integrator must share the grid".into()));
    }
    let dim = match (f.dim(), g.dim()) {
        (a, b) if a == b => a,
        (1, b) => b,
        (a, 1) => a,
        (a, b) => return Err(Error::Dimension { expected: a, got: b }),
    };
    let (c_lo, c_hi) = window_cells(f.grid(), window)?;
    let fm = f.modes();
    let gm = g.modes();
    for (i, m) in fm.iter().enumerate() {
        let nf = scalar_norms(f.times(), m, alpha.value()).w_alpha_1;
        if !(nf <= opts.norm_cap) {
            return Err(Error::Integrability(format!(
                "integrand mode {i}: W^(alpha,1) norm {nf:e} exceeds cap {:e}",
                opts.norm_cap
            )));
        }
    }
    for (i, m) in gm.iter().enumerate() {
        let v: Vec<&[f64]> = m.chunks(1).collect();
        let ng = lambda_seminorm(f.times(), &v, alpha.value());
        if !(ng <= opts.norm_cap) {
            return Err(Error::Integrability(format!(
                "integrator mode {i}: W^(1-alpha,inf) seminorm {ng:e} exceeds cap {:e}",
                opts.norm_cap
            )));
        }
    }
    let zi = ZahleIntegrator::new(f.times(), alpha.value(), opts.nodes_per_cell);
    let dbacks: Vec<Vec<f64>> = gm.iter().map(|m| zi.backward(m)).collect();
    let out = (0..dim)
        .map(|i| {
            let fi = &fm[if fm.len() == 1 { 0 } else { i }];
            let db = &dbacks[if dbacks.len() == 1 { 0 } else { i }];
            zi.integrate(fi, c_lo, c_hi, db)
        })
        .collect::<Vec<_>>();
    Ok(out.into())
}

/// `int_0^T G(s) du_s := sum_i sqrt(l_i) int G(s) e_i d(Q^{-1/2} u e_i)`.
///
/// `columns[i]` is the path `s -> G(s) e_i`. For modes with `l_i > 0` the
/// weighting cancels and the mode contributes `int G e_i du_i`; modes with
/// `l_i = 0` must carry no control.
pub fn rs_integral_operator(
    columns: &[GridPath],
    u: &GridPath,
    q: &CovarianceSpec,
    alpha: FracOrder,
) -> Result<CoeffVector> {
    let n = u.dim();
    if columns.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: columns.len(),
        });
    }
    if q.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: q.len(),
        });
    }
    let out_dim = columns.first().map(|c| c.dim()).unwrap_or(n);
    let t = u.times();
    let zi = ZahleIntegrator::new(t, alpha.value(), RsOptions::default().nodes_per_cell);
    let cells = t.len() - 1;
    let mut out = vec![0.0; out_dim];
    for (i, col) in columns.iter().enumerate() {
        if col.grid() != u.grid() || col.dim() != out_dim {
            return Err(Error::Grid(format!("column {i} does not match the control's grid/dimension")));
        }
        let ui = u.mode(i);
        let moves = ui.iter().any(|v| *v != ui[0]);
        if q.lambdas()[i] == 0.0 {
            if moves {
                return Err(Error::Contract(format!(
                    "control moves in mode {i} but the covariance eigenvalue is zero"
                )));
            }
            continue;
        }
        if !moves {
            continue;
        }
        let db = zi.backward(&ui);
        for (k, o) in out.iter_mut().enumerate() {
            let gk = col.mode(k);
            if gk.iter().all(|v| *v == 0.0) {
                continue;
            }
            *o += zi.integrate(&gk, 0, cells, &db);
        }
    }
    Ok(out.into())
}

/// Pathwise norms of a sampled path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// `||f||_{alpha,1}`.
    pub w_alpha_1: f64,
    /// `||f||_{alpha,inf} = sup_t ||f||_{alpha,[0,t]}`.
    pub w_alpha_inf: f64,
    /// `||f||_{alpha,T}` of the `B^{alpha,2}` space (diagnostic only).
    pub b_alpha_2: f64,
    /// `||f||_{eta-hld}` with `eta = holder_exponent`.
    pub holder: f64,
    pub holder_exponent: f64,
    /// `Lambda^{0,T}_{alpha,f} = ||f||_{1-alpha,0,T} / (Gamma(1-alpha) Gamma(alpha))`.
    pub lambda_g: f64,
}

/// Norms with the Hölder exponent `1 - alpha`.
pub fn path_norms(f: &GridPath, alpha: FracOrder) -> Result<NormReport> {
    path_norms_with_holder(f, alpha, 1.0 - alpha.value())
}

pub fn path_norms_with_holder(f: &GridPath, alpha: FracOrder, eta: f64) -> Result<NormReport> {
    if f.len() < 2 {
        return Err(Error::Grid("norms need at least two nodes".into()));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("Hölder exponent must lie in (0, 1], got {eta}")));
    }
    let t = f.times();
    let a = alpha.value();
    let n = t.len();
    let vals: Vec<&[f64]> = (0..n).map(|k| f.value(k)).collect();
    let norms = f.node_norms();
    let inner = inner_integrals(t, &vals, a);
    // ||f(s)|| s^{-alpha}, with ||f|| interpolated linearly on each cell
    let mut first = 0.0;
    for j in 0..n - 1 {
        first += linear_times_power(t[j] - t[0], t[j + 1] - t[0], norms[j], norms[j + 1], -a);
    }
    let w1 = first + crate::grid::trapezoid(t, &inner);
    let winf = (0..n).map(|k| norms[k] + inner[k]).fold(0.0, f64::max);
    let sup = norms.iter().cloned().fold(0.0, f64::max);
    let sq: Vec<f64> = inner.iter().map(|v| v * v).collect();
    let b2 = (sup * sup + crate::grid::trapezoid(t, &sq)).sqrt();
    let mut hq: f64 = 0.0;
    for j in 0..n {
        for k in j + 1..n {
            let d = diff_norm(vals[k], vals[j]);
            hq = hq.max(d / (t[k] - t[j]).powf(eta));
        }
    }
    let lam = lambda_seminorm(t, &vals, a) / (gamma(1.0 - a) * gamma(a));
    Ok(NormReport {
        w_alpha_1: w1,
        w_alpha_inf: winf,
        b_alpha_2: b2,
        holder: sup + hq,
        holder_exponent: eta,
        lambda_g: lam,
    })
}

struct ScalarNorms {
    w_alpha_1: f64,
}

fn scalar_norms(t: &[f64], f: &[f64], a: f64) -> ScalarNorms {
    let vals: Vec<&[f64]> = f.chunks(1).collect();
    let inner = inner_integrals(t, &vals, a);
    let mut first = 0.0;
    for j in 0..t.len() - 1 {
        first += linear_times_power(t[j] - t[0], t[j + 1] - t[0], f[j].abs(), f[j + 1].abs(), -a);
    }
    ScalarNorms {
        w_alpha_1: first + crate::grid::trapezoid(t, &inner),
    }
}

fn diff_norm(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `int_{x0}^{x1} (linear from v0 to v1) * x^p dx` for `x0 >= 0`.
fn linear_times_power(x0: f64, x1: f64, v0: f64, v1: f64, p: f64) -> f64 {
    let m = (v1 - v0) / (x1 - x0);
    let c = v0 - m * x0;
    c * (x1.powf(p + 1.0) - x0.powf(p + 1.0)) / (p + 1.0) + m * (x1.powf(p + 2.0) - x0.powf(p + 2.0)) / (p + 2.0)
}

/// `int_{t_0}^{t_k} ||f(t_k) - f(s)|| / (t_k - s)^{1+a} ds` at every node, with
/// the norm interpolated linearly on each cell (exact on the last cell, an
/// upper bound elsewhere by convexity).
fn inner_integrals(t: &[f64], vals: &[&[f64]], a: f64) -> Vec<f64> {
    let n = t.len();
    let mut out = vec![0.0; n];
    for k in 1..n {
        let mut acc = 0.0;
        for j in 0..k {
            let d_lo = t[k] - t[j + 1];
            let d_hi = t[k] - t[j];
            let e_lo = diff_norm(vals[k], vals[j + 1]);
            let e_hi = diff_norm(vals[k], vals[j]);
            let m = (e_hi - e_lo) / (d_hi - d_lo);
            acc += if j + 1 == k {
                m * d_hi.powf(1.0 - a) / (1.0 - a)
            } else {
                (e_lo - m * d_lo) * (d_lo.powf(-a) - d_hi.powf(-a)) / a
                    + m * (d_hi.powf(1.0 - a) - d_lo.powf(1.0 - a)) / (1.0 - a)
            };
        }
        out[k] = acc;
    }
    out
}

/// `||f||_{1-a,0,T}` over node pairs.
fn lambda_seminorm(t: &[f64], vals: &[&[f64]], a: f64) -> f64 {
    let n = t.len();
    let q = a;
    let mut best: f64 = 0.0;
    for j in 0..n - 1 {
        let mut integral = 0.0;
        for k in j + 1..n {
            // add cell [t_{k-1}, t_k] measured from s = t_j
            let d_lo = t[k - 1] - t[j];
            let d_hi = t[k] - t[j];
            let e_lo = diff_norm(vals[k - 1], vals[j]);
            let e_hi = diff_norm(vals[k], vals[j]);
            let m = (e_hi - e_lo) / (d_hi - d_lo);
            integral += if k == j + 1 {
                m * d_hi.powf(q) / q
            } else {
                (e_lo - m * d_lo) * (d_lo.powf(q - 1.0) - d_hi.powf(q - 1.0)) / (1.0 - q)
                    + m * (d_hi.powf(q) - d_lo.powf(q)) / q
            };
            let incr = e_hi / d_hi.powf(1.0 - a);
            best = best.max(incr + integral);
        }
    }
    best
}

/// Left side of the beta-type bound `int_0^r (r-s)^{-a} (t-s)^{-d} ds`.
pub fn beta_bound_left(a: f64, d: f64, r: f64, t: f64) -> f64 {
    // w = r - s = v^p removes the endpoint singularity
    let p = 1.0 / (1.0 - a);
    p * adaptive(&mut |v: f64| (t - r + v.powf(p)).powf(-d), 0.0, r.powf(1.0 / p), 1e-12)
}

/// Left side of `int_r^t (s-r)^{-a} (t-s)^{-d} ds` (finite for `a, d < 1`).
pub fn beta_bound_right(a: f64, d: f64, r: f64, t: f64) -> f64 {
    let m = 0.5 * (r + t);
    let p = 1.0 / (1.0 - a);
    let q = 1.0 / (1.0 - d);
    let lower = p * adaptive(&mut |v: f64| (t - r - v.powf(p)).powf(-d), 0.0, (m - r).powf(1.0 / p), 1e-12);
    let upper = q * adaptive(&mut |v: f64| (t - v.powf(q) - r).powf(-a), 0.0, (t - m).powf(1.0 / q), 1e-12);
    lower + upper
}

/// `int_0^t e^{-rho (t-r)} (t-r)^{-a} r^{-d} dr`.
pub fn exponential_weight_left(a: f64, d: f64, rho: f64, t: f64) -> f64 {
    let m = 0.5 * t;
    let p = 1.0 / (1.0 - d);
    let q = 1.0 / (1.0 - a);
    // r = v^p near 0, t - r = v^q near t
    let lower = p * adaptive(
        &mut |v: f64| {
            let r = v.powf(p);
            (-rho * (t - r)).exp() * (t - r).powf(-a)
        },
        0.0,
        m.powf(1.0 / p),
        1e-12,
    );
    let upper = q * adaptive(
        &mut |v: f64| {
            let w = v.powf(q);
            (-rho * w).exp() * (t - w).powf(-d)
        },
        0.0,
        (t - m).powf(1.0 / q),
        1e-12,
    );
    lower + upper
}

/// Frozen constant for the exponential-weight bound:
/// `max(B(1-a, 1-d), 2^d Gamma(1-a) + 1/(1-d))`, valid uniformly in `t` and `rho >= 1`.
pub fn exponential_weight_constant(a: f64, d: f64) -> f64 {
    beta(1.0 - a, 1.0 - d).max(2f64.powf(d) * gamma(1.0 - a) + 1.0 / (1.0 - d))
}

/// Log-log slope of `sup_{t in (0, horizon]}` of the exponential-weight
/// integral against `rho`.
pub fn exponential_weight_slope(a: f64, d: f64, rhos: &[f64], horizon: f64) -> f64 {
    let pts: Vec<(f64, f64)> = rhos
        .iter()
        .map(|&rho| {
            // scan t on a log grid; the maximizer sits near t ~ 1/rho
            let sup = (0..=60)
                .map(|i| horizon * 10f64.powf(-6.0 * (60 - i) as f64 / 60.0))
                .map(|t| exponential_weight_left(a, d, rho, t))
                .fold(0.0, f64::max);
            (rho.ln(), sup.ln())
        })
        .collect();
    crate::stats::ols_slope(&pts)
}

/// Samples both beta-type bounds and the exponential-weight bound at random
/// admissible parameters. Each ratio is `left side / stated right side`, so a
/// stated constant of 1 applies to all three.
pub fn verify_beta_bounds(samples: usize, rng_seed: u64) -> Result<BoundReport> {
    if samples == 0 {
        return Err(Error::Domain("samples must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut left = BoundEntry::new("beta_bound_left", Some(1.0));
    let mut right = BoundEntry::new("beta_bound_right", Some(1.0));
    let mut expo = BoundEntry::new("exponential_weight", Some(1.0));
    for _ in 0..samples {
        let a: f64 = rng.random_range(0.02..0.98);
        let d: f64 = rng.random_range((1.0 - a + 1e-3).min(0.999)..0.999);
        let t: f64 = rng.random_range(0.1..2.0);
        let r: f64 = t * rng.random_range(0.05..0.95);
        if a + d - 1.0 <= 0.0 {
            left.rejected += 1;
            right.rejected += 1;
        } else {
            let rhs = (t - r).powf(1.0 - a - d) * beta(1.0 - a, a + d - 1.0);
            left.record(beta_bound_left(a, d, r, t) / rhs);
            right.record(beta_bound_right(a, d, r, t) / rhs);
        }
        let a2: f64 = rng.random_range(0.0..0.9);
        let d2: f64 = rng.random_range(0.0..(0.95 - a2));
        let rho: f64 = 10f64.powf(rng.random_range(0.0..3.0));
        let t2: f64 = rng.random_range(0.01..2.0);
        let c = exponential_weight_constant(a2, d2);
        expo.record(exponential_weight_left(a2, d2, rho, t2) / (c * rho.powf(a2 + d2 - 1.0)));
    }
    Ok(BoundReport {
        entries: vec![left, right, expo],
    })
}

/// Young (left-point Riemann–Stieltjes) sum `sum f(t_k) (g(t_{k+1}) - g(t_k))` over a scalar pair.
pub fn left_point_sum(f: &[f64], g: &[f64]) -> f64 {
    f.windows(2)
        .zip(g.windows(2))
        .map(|(fw, gw)| fw[0] * (gw[1] - gw[0]))
        .sum()
}

/// Exact integral of piecewise-linear interpolants: the trapezoid sum.
pub fn trapezoid_stieltjes(f: &[f64], g: &[f64]) -> f64 {
    f.windows(2)
        .zip(g.windows(2))
        .map(|(fw, gw)| 0.5 * (fw[0] + fw[1]) * (gw[1] - gw[0]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha(a: f64) -> FracOrder {
        FracOrder::new(a).unwrap()
    }

    fn path(m: usize, f: impl Fn(f64) -> f64) -> GridPath {
        let g = TimeGrid::uniform(1.0, m).unwrap();
        let v = g.times().iter().map(|&t| f(t)).collect();
        GridPath::scalar(g, v).unwrap()
    }

    #[test]
    fn forward_of_constant_and_identity() {
        let a = 0.3;
        let c = path(64, |_| 2.5);
        let r = weyl_forward(&c, alpha(a), 0.0).unwrap();
        for (t, v) in r.path.times().iter().zip(r.path.data()) {
            let exact = 2.5 * t.powf(-a) / gamma(1.0 - a);
            assert!((v - exact).abs() < 1e-12 * exact.abs());
        }
        let id = path(64, |t| t);
        let r = weyl_forward(&id, alpha(a), 0.0).unwrap();
        for (t, v) in r.path.times().iter().zip(r.path.data()) {
            let exact = t.powf(1.0 - a) / gamma(2.0 - a);
            assert!((v - exact).abs() < 1e-12 * exact.abs(), "{t}: {v} vs {exact}");
        }
    }

    #[test]
    fn backward_of_identity_and_constant() {
        let a = 0.3;
        let id = path(50, |t| t);
        let r = weyl_backward(&id, alpha(a), 1.0).unwrap();
        for (t, v) in r.path.times().iter().zip(r.path.data()) {
            let exact = (1.0 - t).powf(a) / gamma(1.0 + a);
            assert!((v - exact).abs() < 1e-12, "{t}: {v} vs {exact}");
        }
        let c = path(50, |_| -4.0);
        let r = weyl_backward(&c, alpha(a), 1.0).unwrap();
        assert!(r.path.data().iter().all(|v| *v == 0.0));
        // golden value at t = 0.4, alpha = 0.3
        assert!((0.6f64.powf(0.3) / gamma(1.3) - 0.9559278135).abs() < 1e-9);
    }

    #[test]
    fn rs_of_constant_and_smooth_pair() {
        let g = path(200, |t| t * t);
        let one = path(200, |_| 1.0);
        let v = rs_integral(&one, &g, alpha(0.3), (0.2, 0.7)).unwrap();
        assert!((v[0] - (0.49 - 0.04)).abs() < 5e-6, "{}", v[0]);
        let f = path(200, |t| t);
        let v = rs_integral(&f, &g, alpha(0.3), (0.0, 1.0)).unwrap();
        // trapezoid sum of the interpolants is the exact reference
        let ex = trapezoid_stieltjes(f.data(), g.data());
        assert!((v[0] - ex).abs() < 5e-6, "{} vs {ex}", v[0]);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn window_additivity() {
        let f = path(60, |t| (5.0 * t).sin());
        let g = path(60, |t| t.sqrt() + t * t);
        let a = alpha(0.3);
        let whole = rs_integral(&f, &g, a, (0.0, 1.0)).unwrap()[0];
        let l = rs_integral(&f, &g, a, (0.0, 0.5)).unwrap()[0];
        let r = rs_integral(&f, &g, a, (0.5, 1.0)).unwrap()[0];
        assert!((whole - l - r).abs() <= 1e-10 * whole.abs().max(1.0));
        assert!(rs_integral(&f, &g, a, (0.0, 0.505)).is_err());
    }

    #[test]
    fn norms_of_simple_paths() {
        let z = path(20, |_| 0.0);
        let n = path_norms(&z, alpha(0.3)).unwrap();
        assert_eq!((n.w_alpha_1, n.w_alpha_inf, n.holder, n.lambda_g), (0.0, 0.0, 0.0, 0.0));
        let id = path(100, |t| t);
        let n = path_norms_with_holder(&id, alpha(0.3), 1.0).unwrap();
        assert!((n.holder - 2.0).abs() < 1e-12);
        let c = path(20, |_| 3.0);
        assert_eq!(path_norms(&c, alpha(0.3)).unwrap().lambda_g, 0.0);
        let s = path(100, |t| (3.0 * t).cos());
        let n1 = path_norms(&s, alpha(0.3)).unwrap();
        let n2 = path_norms(&s.scaled(-2.0), alpha(0.3)).unwrap();
        assert!((n2.w_alpha_1 - 2.0 * n1.w_alpha_1).abs() < 1e-12 * n2.w_alpha_1);
        assert!((n2.lambda_g - 2.0 * n1.lambda_g).abs() < 1e-12 * n2.lambda_g);
    }

    #[test]
    fn linear_path_lambda_matches_closed_form() {
        // g(t) = t: sup over pairs of (t-s)^alpha (1 + 1/alpha) at the widest pair
        let a = 0.3;
        let id = path(200, |t| t);
        let n = path_norms(&id, alpha(a)).unwrap();
        let exact = (1.0 + 1.0 / a) / (gamma(1.0 - a) * gamma(a));
        assert!((n.lambda_g - exact).abs() < 1e-10, "{} vs {exact}", n.lambda_g);
    }

    #[test]
    fn beta_bound_trivial_case() {
        // a = d = 0 is outside the sampled range but the quadrature must still be exact
        assert!((beta_bound_left(0.0, 0.0, 0.4, 1.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn frac_order_pairing() {
        let h = HurstParam::new(0.7).unwrap();
        assert!(FracOrder::for_hurst(0.35, &h).is_ok());
        let e = FracOrder::for_hurst(0.25, &h).unwrap_err();
        assert!(e.to_string().contains("(0.30000000000000004, 0.5)") || e.to_string().contains("0.3"));
    }
}
