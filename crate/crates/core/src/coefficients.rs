//! Coefficient families for the slow–fast system
//!
//! ```text
//! dX = (A X + b(X, Y)) dt + sqrt(eps) g(X) dB^H
//! dY = (A Y + F(X, Y)) dt / delta + G(X, Y) dW / sqrt(delta)
//! ```
//!
//! written in eigen-coordinates. Families are looked up by name in a
//! [`FamilyRegistry`]; each declares the constants of the standing
//! assumptions so that the numerical probes in `averaging` can be compared
//! against them.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::CovarianceSpec;
use crate::spectral::SpectralSpace;

/// Declared Lipschitz, growth and dissipativity constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub lipschitz_g: f64,
    pub lipschitz_dg: f64,
}

impl DeclaredConstants {
    /// `eta = 2 lambda_1 - 2 beta_3 - C_2`.
    pub fn eta(&self, lambda_1: f64) -> f64 {
        2.0 * lambda_1 - 2.0 * self.beta3 - self.c2
    }

    /// `kappa = 2 lambda_1 + 2 beta_1 - C_3`.
    pub fn kappa(&self, lambda_1: f64) -> f64 {
        2.0 * lambda_1 + 2.0 * self.beta1 - self.c3
    }
}

/// A drift/diffusion family `(b, F, G, g)` on `R^dim`.
///
/// Hot-path evaluations write into caller-provided buffers.
pub trait CoefficientSystem: Send + Sync + Debug {
    fn family(&self) -> &str;
    fn dim(&self) -> usize;
    fn params(&self) -> BTreeMap<String, f64>;
    fn declared(&self) -> DeclaredConstants;

    /// Slow drift `b(x, y)`.
    fn b_into(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// Fast drift `F(x, y)` (without the generator).
    fn f_into(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `out = G(x, y) w`.
    fn big_g_apply(&self, x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]);
    /// `out = g(x) v`.
    fn g_apply(&self, x: &[f64], v: &[f64], out: &mut [f64]);

    fn big_g_matrix(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        matrix_of(self.dim(), |w, out| self.big_g_apply(x, y, w, out))
    }

    fn g_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        matrix_of(self.dim(), |v, out| self.g_apply(x, v, out))
    }

    /// Whether `b` actually depends on `y`; when it does not, solvers skip the
    /// fast equation.
    fn b_depends_on_y(&self) -> bool {
        true
    }

    /// A scalar `mu >= 0` such that `F(x, y) + mu y` carries no stiff linear
    /// part; exponential integrators absorb `-mu y` into the semigroup.
    fn fast_damping(&self) -> f64 {
        0.0
    }

    /// Closed-form averaged drift, when the family has one.
    fn bbar_closed_form(&self, _space: &SpectralSpace, _q2: &CovarianceSpec, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Jacobian of the closed-form averaged drift.
    fn bbar_jacobian(&self, _space: &SpectralSpace, _q2: &CovarianceSpec, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn b(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.b_into(x, y, &mut out);
        out
    }

    fn f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.f_into(x, y, &mut out);
        out
    }
}

fn matrix_of(n: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

/// A deterministic vector field `x -> b(x)`, e.g. an averaged drift.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::Capability("this drift has no registered derivative".into()))
    }
}

/// Any closure is a drift field without a derivative.
pub struct FnDrift<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> FnDrift<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> DriftField for FnDrift<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(x))
    }
}

/// Linear drift `x -> M x` with its (constant) Jacobian.
#[derive(Debug, Clone)]
pub struct LinearDrift(pub DMatrix<f64>);

impl DriftField for LinearDrift {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.0 * nalgebra::DVector::from_column_slice(x)).iter().copied().collect())
    }
    fn jacobian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

/// The closed-form averaged drift of a registered family.
#[derive(Debug, Clone)]
pub struct ClosedFormBbar {
    coeffs: Arc<dyn CoefficientSystem>,
    space: SpectralSpace,
    q2: CovarianceSpec,
}

impl ClosedFormBbar {
    pub fn new(coeffs: Arc<dyn CoefficientSystem>, space: &SpectralSpace, q2: &CovarianceSpec) -> Result<Self> {
        let probe = vec![0.0; space.dim()];
        if coeffs.bbar_closed_form(space, q2, &probe).is_none() {
            return Err(Error::Capability(format!(
                "family '{}' has no closed-form averaged drift",
                coeffs.family()
            )));
        }
        Ok(Self {
            coeffs,
            space: space.clone(),
            q2: q2.clone(),
        })
    }
}

impl DriftField for ClosedFormBbar {
    fn dim(&self) -> usize {
        self.space.dim()
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.coeffs
            .bbar_closed_form(&self.space, &self.q2, x)
            .ok_or_else(|| Error::Capability("closed-form averaged drift unavailable".into()))
    }
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.coeffs
            .bbar_jacobian(&self.space, &self.q2, x)
            .ok_or_else(|| Error::Capability(format!("family '{}' registers no averaged-drift derivative", self.coeffs.family())))
    }
}

fn param(p: &BTreeMap<String, f64>, key: &str, default: f64) -> Result<f64> {
    let v = p.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(Error::Config(format!("family parameter '{key}' must be finite, got {v}")));
    }
    Ok(v)
}

fn reject_unknown(p: &BTreeMap<String, f64>, known: &[&str], family: &str) -> Result<()> {
    for k in p.keys() {
        if !known.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "unknown parameter '{k}' for family '{family}' (expected one of {known:?})"
            )));
        }
    }
    Ok(())
}

/// `b = -kappa x + b_y y`, `F = -a y + c x`, `G = sigma I`, `g = g0 I`.
///
/// Frozen fast mode `k` is an Ornstein–Uhlenbeck process with mean
/// `c x_k / (lambda_k + a)`, so `bbar(x)_k = (-kappa + b_y c / (lambda_k + a)) x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDissipative {
    pub dim: usize,
    pub kappa: f64,
    pub b_y: f64,
    pub a: f64,
    pub c: f64,
    pub sigma: f64,
    pub g0: f64,
}

impl LinearDissipative {
    pub const PARAMS: [&'static str; 6] = ["kappa", "b_y", "a", "c", "sigma", "g0"];

    pub fn from_params(dim: usize, p: &BTreeMap<String, f64>) -> Result<Self> {
        reject_unknown(p, &Self::PARAMS, "linear_dissipative")?;
        Ok(Self {
            dim,
            kappa: param(p, "kappa", 1.0)?,
            b_y: param(p, "b_y", 1.0)?,
            a: param(p, "a", 1.0)?,
            c: param(p, "c", 1.0)?,
            sigma: param(p, "sigma", 1.0)?,
            g0: param(p, "g0", 1.0)?,
        })
    }

    fn gain(&self, space: &SpectralSpace, k: usize) -> f64 {
        -self.kappa + self.b_y * self.c / (space.eigenvalues()[k] + self.a)
    }
}

impl CoefficientSystem for LinearDissipative {
    fn family(&self) -> &str {
        "linear_dissipative"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> BTreeMap<String, f64> {
        Self::PARAMS
            .iter()
            .zip([self.kappa, self.b_y, self.a, self.c, self.sigma, self.g0])
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
    fn declared(&self) -> DeclaredConstants {
        let rn = (self.dim as f64).sqrt();
        let (a, c) = (self.a.abs(), self.c.abs());
        DeclaredConstants {
            c1: self.kappa.abs().max(self.b_y.abs()),
            c2: a.max(c),
            c3: a.max(c).max(self.sigma.abs() * rn),
            c4: self.kappa.abs().max(self.b_y.abs()),
            c5: c / 2.0,
            c6: self.kappa.abs().max(self.sigma.abs() * rn),
            beta1: self.a / 2.0,
            beta2: 0.0,
            beta3: -self.a + c / 2.0,
            lipschitz_g: 0.0,
            lipschitz_dg: 0.0,
        }
    }
    fn b_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = -self.kappa * x[k] + self.b_y * y[k];
        }
    }
    fn f_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = -self.a * y[k] + self.c * x[k];
        }
    }
    fn big_g_apply(&self, _x: &[f64], _y: &[f64], w: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = self.sigma * w[k];
        }
    }
    fn g_apply(&self, _x: &[f64], v: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = self.g0 * v[k];
        }
    }
    fn b_depends_on_y(&self) -> bool {
        self.b_y != 0.0
    }
    fn fast_damping(&self) -> f64 {
        self.a.max(0.0)
    }
    fn bbar_closed_form(&self, space: &SpectralSpace, _q2: &CovarianceSpec, x: &[f64]) -> Option<Vec<f64>> {
        Some((0..self.dim).map(|k| self.gain(space, k) * x[k]).collect())
    }
    fn bbar_jacobian(&self, space: &SpectralSpace, _q2: &CovarianceSpec, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if i == j {
                self.gain(space, i)
            } else {
                0.0
            }
        }))
    }
}

/// `b = -kappa x + amp sin(x) + b_y sin(y)`, `F = -a y + c sin(x)`,
/// `G = sigma I`, `g = diag(g0 + g1 sin(x))`, all componentwise.
///
/// The frozen fast mode is Gaussian with mean `m_k = c sin(x_k)/(lambda_k + a)`
/// and variance `v_k = sigma^2 q_k / (2 (lambda_k + a))`, so
/// `E sin(Y_k) = sin(m_k) exp(-v_k / 2)` gives the averaged drift in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedNonlinear {
    pub dim: usize,
    pub kappa: f64,
    pub amp: f64,
    pub b_y: f64,
    pub a: f64,
    pub c: f64,
    pub sigma: f64,
    pub g0: f64,
    pub g1: f64,
}

impl BoundedNonlinear {
    pub const PARAMS: [&'static str; 8] = ["kappa", "amp", "b_y", "a", "c", "sigma", "g0", "g1"];

    pub fn from_params(dim: usize, p: &BTreeMap<String, f64>) -> Result<Self> {
        reject_unknown(p, &Self::PARAMS, "bounded_nonlinear")?;
        let s = Self {
            dim,
            kappa: param(p, "kappa", 1.0)?,
            amp: param(p, "amp", 0.5)?,
            b_y: param(p, "b_y", 1.0)?,
            a: param(p, "a", 1.0)?,
            c: param(p, "c", 1.0)?,
            sigma: param(p, "sigma", 1.0)?,
            g0: param(p, "g0", 1.0)?,
            g1: param(p, "g1", 0.25)?,
        };
        if s.a <= 0.0 {
            return Err(Error::Config(format!("bounded_nonlinear needs a > 0, got {}", s.a)));
        }
        Ok(s)
    }

    fn moments(&self, space: &SpectralSpace, q2: &CovarianceSpec, x: f64, k: usize) -> (f64, f64) {
        let xi = space.eigenvalues()[k] + self.a;
        let q = q2.lambdas().get(k).copied().unwrap_or(0.0);
        (self.c * x.sin() / xi, self.sigma * self.sigma * q / (2.0 * xi))
    }
}

impl CoefficientSystem for BoundedNonlinear {
    fn family(&self) -> &str {
        "bounded_nonlinear"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> BTreeMap<String, f64> {
        Self::PARAMS
            .iter()
            .zip([self.kappa, self.amp, self.b_y, self.a, self.c, self.sigma, self.g0, self.g1])
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
    fn declared(&self) -> DeclaredConstants {
        let n = self.dim as f64;
        let rn = n.sqrt();
        let c = self.c.abs();
        DeclaredConstants {
            c1: (self.kappa.abs() + self.amp.abs()).max(self.b_y.abs()),
            c2: self.a.max(c),
            c3: self.a.max((c + self.sigma.abs()) * rn),
            c4: self.kappa.abs().max((self.amp.abs() + self.b_y.abs()) * rn),
            c5: c / 2.0,
            c6: self.kappa.abs().max((self.amp.abs() + self.b_y.abs() + self.sigma.abs()) * rn),
            beta1: self.a / 2.0,
            beta2: c * c * n / (2.0 * self.a),
            beta3: -self.a + c / 2.0,
            lipschitz_g: self.g1.abs(),
            lipschitz_dg: self.g1.abs(),
        }
    }
    fn b_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = -self.kappa * x[k] + self.amp * x[k].sin() + self.b_y * y[k].sin();
        }
    }
    fn f_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = -self.a * y[k] + self.c * x[k].sin();
        }
    }
    fn big_g_apply(&self, _x: &[f64], _y: &[f64], w: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = self.sigma * w[k];
        }
    }
    fn g_apply(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = (self.g0 + self.g1 * x[k].sin()) * v[k];
        }
    }
    fn b_depends_on_y(&self) -> bool {
        self.b_y != 0.0
    }
    fn fast_damping(&self) -> f64 {
        self.a
    }
    fn bbar_closed_form(&self, space: &SpectralSpace, q2: &CovarianceSpec, x: &[f64]) -> Option<Vec<f64>> {
        Some(
            (0..self.dim)
                .map(|k| {
                    let (m, v) = self.moments(space, q2, x[k], k);
                    -self.kappa * x[k] + self.amp * x[k].sin() + self.b_y * m.sin() * (-0.5 * v).exp()
                })
                .collect(),
        )
    }
    fn bbar_jacobian(&self, space: &SpectralSpace, q2: &CovarianceSpec, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if i != j {
                return 0.0;
            }
            let (m, v) = self.moments(space, q2, x[i], i);
            let xi = space.eigenvalues()[i] + self.a;
            -self.kappa
                + self.amp * x[i].cos()
                + self.b_y * m.cos() * (-0.5 * v).exp() * self.c * x[i].cos() / xi
        }))
    }
}

/// `b(x, y) := bbar(x)` for a family with a closed-form averaged drift; the
/// remaining coefficients are inherited. Used to measure the solver noise
/// floor of averaging experiments, where no averaging error is present.
#[derive(Debug, Clone)]
pub struct AveragedSurrogate {
    inner: Arc<dyn CoefficientSystem>,
    space: SpectralSpace,
    q2: CovarianceSpec,
}

impl AveragedSurrogate {
    pub fn new(inner: Arc<dyn CoefficientSystem>, space: &SpectralSpace, q2: &CovarianceSpec) -> Result<Self> {
        ClosedFormBbar::new(inner.clone(), space, q2)?;
        Ok(Self {
            inner,
            space: space.clone(),
            q2: q2.clone(),
        })
    }
}

impl CoefficientSystem for AveragedSurrogate {
    fn family(&self) -> &str {
        self.inner.family()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params()
    }
    fn declared(&self) -> DeclaredConstants {
        self.inner.declared()
    }
    fn b_into(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        let v = self
            .inner
            .bbar_closed_form(&self.space, &self.q2, x)
            .expect("checked at construction");
        out.copy_from_slice(&v);
    }
    fn f_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.inner.f_into(x, y, out)
    }
    fn big_g_apply(&self, x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]) {
        self.inner.big_g_apply(x, y, w, out)
    }
    fn g_apply(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.g_apply(x, v, out)
    }
    fn b_depends_on_y(&self) -> bool {
        false
    }
    fn fast_damping(&self) -> f64 {
        self.inner.fast_damping()
    }
    fn bbar_closed_form(&self, space: &SpectralSpace, q2: &CovarianceSpec, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.bbar_closed_form(space, q2, x)
    }
    fn bbar_jacobian(&self, space: &SpectralSpace, q2: &CovarianceSpec, x: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.bbar_jacobian(space, q2, x)
    }
}

pub type FamilyBuilder = fn(usize, &BTreeMap<String, f64>) -> Result<Arc<dyn CoefficientSystem>>;

/// Name → constructor table for coefficient families.
#[derive(Clone)]
pub struct FamilyRegistry {
    builders: BTreeMap<String, FamilyBuilder>,
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register("linear_dissipative", |d, p| Ok(Arc::new(LinearDissipative::from_params(d, p)?)));
        r.register("bounded_nonlinear", |d, p| Ok(Arc::new(BoundedNonlinear::from_params(d, p)?)));
        r
    }
}

impl FamilyRegistry {
    pub fn register(&mut self, name: &str, builder: FamilyBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, dim: usize, params: &BTreeMap<String, f64>) -> Result<Arc<dyn CoefficientSystem>> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown coefficient family '{name}' (registered: {:?})",
                self.names()
            ))
        })?;
        b(dim, params)
    }
}
