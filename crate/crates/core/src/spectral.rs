//! Finite spectral truncation of the state space.
//!
//! `-A` is represented by its eigenvalues `0 < l_1 < ... < l_n` in an
//! orthonormal eigenbasis, so the semigroup `S_t = exp(tA)` and the fractional
//! powers `(-A)^beta` act diagonally on coefficient vectors. The graph norm of
//! `V_beta` is `||(-A)^beta x||`.
//!
//! The operator itself is never derived from a PDE discretization; the default
//! generator is the 1-D Dirichlet Laplacian on (0, 1), `l_k = k^2 pi^2`.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundEntry, BoundReport};
use crate::error::{Error, Result};

/// Coefficients of a vector in the eigenbasis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoeffVector(pub Vec<f64>);

impl CoeffVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn norm(&self) -> f64 {
        crate::grid::l2(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for CoeffVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for CoeffVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for CoeffVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceSpec", into = "SpaceSpec")]
pub struct SpectralSpace {
    eigenvalues: Vec<f64>,
}

impl SpectralSpace {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Domain("spectral space needs dim >= 1".into()));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Domain(
                "eigenvalues of -A must be finite and strictly positive".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "eigenvalues of -A must be strictly increasing".into(),
            ));
        }
        Ok(Self { eigenvalues })
    }

    /// `l_k = k^2 pi^2`, k = 1..=dim.
    pub fn dirichlet_laplacian_1d(dim: usize) -> Result<Self> {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        Self::new((1..=dim).map(|k| (k * k) as f64 * pi2).collect())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// First eigenvalue of `-A`.
    pub fn lambda_1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `S_t x`, componentwise `exp(-l_k t) x_k`.
    pub fn semigroup_apply(&self, t: f64, x: &[f64]) -> Result<CoeffVector> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
        }
        self.check(x)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(x)
            .map(|(l, v)| (-l * t).exp() * v)
            .collect::<Vec<_>>()
            .into())
    }

    /// `(-A)^beta x`, componentwise `l_k^beta x_k`.
    pub fn frac_power_apply(&self, beta: f64, x: &[f64]) -> Result<CoeffVector> {
        self.check(x)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(x)
            .map(|(l, v)| l.powf(beta) * v)
            .collect::<Vec<_>>()
            .into())
    }

    /// Graph norm of `V_beta`.
    pub fn graph_norm(&self, beta: f64, x: &[f64]) -> Result<f64> {
        Ok(self.frac_power_apply(beta, x)?.norm())
    }

    /// `A x`.
    pub fn apply_generator(&self, x: &[f64]) -> Result<CoeffVector> {
        self.check(x)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(x)
            .map(|(l, v)| -l * v)
            .collect::<Vec<_>>()
            .into())
    }
}

/// Serialized form: an explicit eigenvalue list or a named generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl TryFrom<SpaceSpec> for SpectralSpace {
    type Error = Error;

    fn try_from(spec: SpaceSpec) -> Result<Self> {
        match (spec.eigenvalues, spec.generator.as_deref()) {
            (Some(ev), None) => {
                if let Some(d) = spec.dim {
                    if d != ev.len() {
                        return Err(Error::Config(format!(
                            "space.dim = {d} disagrees with {} listed eigenvalues",
                            ev.len()
                        )));
                    }
                }
                SpectralSpace::new(ev)
            }
            (None, Some("dirichlet_laplacian_1d")) => {
                let d = spec.dim.ok_or_else(|| {
                    Error::Config("space.generator needs space.dim".into())
                })?;
                SpectralSpace::dirichlet_laplacian_1d(d)
            }
            (None, Some(other)) => Err(Error::Config(format!(
                "unknown space generator {other:?} (known: \"dirichlet_laplacian_1d\")"
            ))),
            (Some(_), Some(_)) => Err(Error::Config(
                "space: give either eigenvalues or generator, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "space: missing eigenvalues or generator".into(),
            )),
        }
    }
}

impl From<SpectralSpace> for SpaceSpec {
    fn from(s: SpectralSpace) -> Self {
        SpaceSpec {
            eigenvalues: Some(s.eigenvalues),
            generator: None,
            dim: None,
        }
    }
}

/// The four smoothing estimates of the analytic semigroup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SemigroupEstimate {
    /// `||S_t||_{L(V_gamma, V_sigma)} <= C t^{-(sigma-gamma)} e^{-l_1 t}`, `gamma <= sigma`.
    Smoothing { gamma: f64, sigma: f64, t: f64 },
    /// `||S_tau - id||_{L(V_{nu+mu}, V_nu)} <= C tau^mu`.
    Continuity { mu: f64, tau: f64 },
    /// `||S_{t-r} - S_{t-q}||_{L(V_nu, V_gamma)} <= C (r-q)^rho (t-r)^{-rho-gamma+nu}`.
    TimeIncrement {
        rho: f64,
        gamma: f64,
        nu: f64,
        q: f64,
        r: f64,
        t: f64,
    },
    /// `||S_{t-r} - S_{s-r} - S_{t-q} + S_{s-q}|| <= C (t-s)^rho (r-q)^nu (s-r)^{-(rho+nu)}`.
    Rectangle {
        rho: f64,
        nu: f64,
        q: f64,
        r: f64,
        s: f64,
        t: f64,
    },
}

impl SemigroupEstimate {
    pub fn name(&self) -> &'static str {
        match self {
            SemigroupEstimate::Smoothing { .. } => "smoothing",
            SemigroupEstimate::Continuity { .. } => "continuity",
            SemigroupEstimate::TimeIncrement { .. } => "time_increment",
            SemigroupEstimate::Rectangle { .. } => "rectangle",
        }
    }
}

/// Operator norm on the left over the right-hand side without `C`.
///
/// Every operator involved is diagonal, so operator norms are maxima over
/// modes. Returns `None` for degenerate instances (zero time gaps).
pub fn estimate_ratio(space: &SpectralSpace, est: SemigroupEstimate) -> Option<f64> {
    let ls = space.eigenvalues();
    let l1 = space.lambda_1();
    let max_over = |f: &dyn Fn(f64) -> f64| ls.iter().map(|&l| f(l)).fold(0.0, f64::max);
    match est {
        SemigroupEstimate::Smoothing { gamma, sigma, t } => {
            if t <= 0.0 {
                return None;
            }
            let p = sigma - gamma;
            // scale by e^{l_1 t} inside the max to avoid underflow at large t
            let lhs_scaled = max_over(&|l| l.powf(p) * (-(l - l1) * t).exp());
            Some(lhs_scaled * t.powf(p))
        }
        SemigroupEstimate::Continuity { mu, tau } => {
            if tau <= 0.0 {
                return None;
            }
            let lhs = max_over(&|l| l.powf(-mu) * (-(-l * tau).exp_m1()));
            Some(lhs / tau.powf(mu))
        }
        SemigroupEstimate::TimeIncrement {
            rho,
            gamma,
            nu,
            q,
            r,
            t,
        } => {
            if !(q < r && r < t) {
                return None;
            }
            let lhs = max_over(&|l| {
                l.powf(gamma - nu) * ((-l * (t - r)).exp() - (-l * (t - q)).exp()).abs()
            });
            Some(lhs / ((r - q).powf(rho) * (t - r).powf(-rho - gamma + nu)))
        }
        SemigroupEstimate::Rectangle {
            rho,
            nu,
            q,
            r,
            s,
            t,
        } => {
            if !(q < r && r < s && s < t) {
                return None;
            }
            // factorized form avoids cancellation between the four exponentials
            let lhs = max_over(&|l| {
                ((-l * (t - s)).exp_m1()).abs()
                    * (-l * (s - r)).exp()
                    * (-(-l * (r - q)).exp_m1())
            });
            Some(lhs / ((t - s).powf(rho) * (r - q).powf(nu) * (s - r).powf(-(rho + nu))))
        }
    }
}

/// Samples every estimate at random admissible parameters on `[0, 1]`
/// and reports the smallest constant that covers the sample.
pub fn verify_semigroup_bounds(space: &SpectralSpace, samples: usize, rng_seed: u64) -> Result<BoundReport> {
    if samples == 0 {
        return Err(Error::Domain("samples must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut entries: Vec<BoundEntry> = ["smoothing", "continuity", "time_increment", "rectangle"]
        .iter()
        .map(|n| BoundEntry::new(*n, None))
        .collect();
    for _ in 0..samples {
        let candidates = [
            {
                let gamma: f64 = rng.random();
                let sigma = gamma + (1.0 - gamma) * rng.random::<f64>();
                SemigroupEstimate::Smoothing {
                    gamma,
                    sigma,
                    t: rng.random(),
                }
            },
            SemigroupEstimate::Continuity {
                mu: rng.random(),
                tau: rng.random(),
            },
            {
                let rho = 1.0 - rng.random::<f64>();
                let gamma: f64 = rng.random();
                let nu = (gamma + rho) * rng.random::<f64>();
                let mut pts: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                pts.sort_by(f64::total_cmp);
                SemigroupEstimate::TimeIncrement {
                    rho,
                    gamma,
                    nu,
                    q: pts[0],
                    r: pts[1],
                    t: pts[2],
                }
            },
            {
                // rho + nu <= 1 keeps the factorized bound finite
                let rho = 1.0 - rng.random::<f64>();
                let nu = (1.0 - rho) * rng.random::<f64>();
                let mut pts: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
                pts.sort_by(f64::total_cmp);
                SemigroupEstimate::Rectangle {
                    rho,
                    nu,
                    q: pts[0],
                    r: pts[1],
                    s: pts[2],
                    t: pts[3],
                }
            },
        ];
        for (entry, est) in entries.iter_mut().zip(candidates) {
            // degenerate draws (coincident times) are skipped, never reported
            if let Some(ratio) = estimate_ratio(space, est) {
                entry.record(ratio);
            }
        }
    }
    Ok(BoundReport { entries })
}
