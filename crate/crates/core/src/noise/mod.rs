//! Driving noises: scalar and cylindrical fractional Brownian motion,
//! Q-Wiener processes, and the Volterra-kernel operators of the fBM's
//! Cameron–Martin space.
//!
//! fBM paths are drawn exactly from the Gaussian law by a Cholesky factor of
//! the covariance matrix. The factor is held by an [`FbmSampler`] so that it is
//! computed once per (H, grid) and shared by every replica.

mod kernel;

use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{GridPath, TimeGrid};
use crate::rng::{normals, stream, SeedTree};
use crate::spectral::SpectralSpace;

pub use kernel::{
    apply_kh, apply_kh_inverse, cm_derivative, hyp2f1, volterra_kernel, volterra_kernel_series, KhInverse,
};

/// Default cap on the number of non-trivial nodes for exact sampling.
pub const CHOLESKY_CAP: usize = 4096;

/// Hurst parameter `H` in `[1/2, 1)`.
///
/// The fBM components of the model need `H > 1/2`; the value `1/2` is accepted
/// here because several reductions (Brownian case, classical energy) are
/// evaluated through the same code. Configuration loading rejects it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if !(h >= 0.5 && h < 1.0) {
            return Err(Error::Domain(format!("Hurst parameter must lie in [1/2, 1), got {h}")));
        }
        Ok(Self(h))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_brownian(&self) -> bool {
        self.0 == 0.5
    }

    /// `c_H = [2H Gamma(3/2-H) Gamma(H+1/2) / Gamma(2-2H)]^{1/2}`.
    pub fn c_h(&self) -> f64 {
        let h = self.0;
        (2.0 * h * gamma(1.5 - h) * gamma(h + 0.5) / gamma(2.0 - 2.0 * h)).sqrt()
    }

    /// Midpoint of the admissible interval `(1-H, 1/2)` for the fractional order.
    pub fn default_alpha(&self) -> f64 {
        0.5 * (1.0 - self.0 + 0.5)
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        HurstParam::new(v)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// Eigenvalues of a covariance operator `Q` in the eigenbasis of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CovarianceSpec {
    lambdas: Vec<f64>,
}

impl CovarianceSpec {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if let Some((i, l)) = lambdas.iter().enumerate().find(|(_, l)| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Domain(format!(
                "covariance eigenvalue {i} must be finite and >= 0, got {l}"
            )));
        }
        Ok(Self { lambdas })
    }

    pub fn identity(dim: usize) -> Self {
        Self { lambdas: vec![1.0; dim] }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// `sum sqrt(l_i)`, the trace norm of `Q^{1/2}`.
    pub fn sqrt_trace(&self) -> f64 {
        self.lambdas.iter().map(|l| l.sqrt()).sum()
    }

    /// Checks `sum sqrt(l_i) <= budget`.
    pub fn check_budget(&self, budget: f64) -> Result<()> {
        let s = self.sqrt_trace();
        if s > budget {
            return Err(Error::Config(format!(
                "sum of sqrt(covariance eigenvalues) = {s} exceeds the configured budget {budget}"
            )));
        }
        Ok(())
    }

    fn check_space(&self, space: &SpectralSpace) -> Result<()> {
        if self.len() != space.dim() {
            return Err(Error::Dimension {
                expected: space.dim(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for CovarianceSpec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        CovarianceSpec::new(v)
    }
}

impl From<CovarianceSpec> for Vec<f64> {
    fn from(c: CovarianceSpec) -> Vec<f64> {
        c.lambdas
    }
}

/// `R_H(s, t) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(h: HurstParam, s: f64, t: f64) -> f64 {
    let e = 2.0 * h.value();
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// Exact fBM sampler on a fixed grid starting at 0.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    hurst: HurstParam,
    grid: TimeGrid,
    factor: DMatrix<f64>,
}

impl FbmSampler {
    pub fn new(hurst: HurstParam, grid: &TimeGrid) -> Result<Self> {
        Self::with_cap(hurst, grid, CHOLESKY_CAP)
    }

    pub fn with_cap(hurst: HurstParam, grid: &TimeGrid, cap: usize) -> Result<Self> {
        if grid.start() != 0.0 {
            return Err(Error::Grid(format!(
                "fBM grids must start at t = 0 ({} does not)",
                grid.describe()
            )));
        }
        let t = &grid.times()[1..];
        let m = t.len();
        if m > cap {
            return Err(Error::Refused(format!(
                "grid with {m} sampled nodes exceeds the exact-sampler cap of {cap}"
            )));
        }
        let cov = DMatrix::from_fn(m, m, |i, j| fbm_covariance(hurst, t[i], t[j]));
        let chol = Cholesky::new(cov).ok_or_else(|| Error::Decomposition {
            grid: grid.describe(),
            reason: format!("covariance matrix is not numerically positive definite (H = {})", hurst.value()),
        })?;
        Ok(Self {
            hurst,
            grid: grid.clone(),
            factor: chol.l(),
        })
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// One scalar path; the value at `t = 0` is 0.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let m = self.factor.nrows();
        let z = DVector::from_vec(normals(rng, m));
        let x = &self.factor * z;
        let mut out = Vec::with_capacity(m + 1);
        out.push(0.0);
        out.extend(x.iter());
        out
    }
}

/// Scalar fBM draw as a one-dimensional path.
pub fn sample_fbm_1d(sampler: &FbmSampler, rng: &mut impl Rng) -> GridPath {
    GridPath::scalar(sampler.grid.clone(), sampler.sample(rng)).expect("sampler grid and values agree")
}

/// `B^H = sum_i sqrt(l_i) e_i beta^{H,i}` with an independent scalar fBM per mode.
///
/// Mode `i` of replica `r` uses the stream `(r, i, FBM)`, so with one mode and
/// `l_1 = 1` the path equals `sample_fbm_1d` on that stream.
pub fn sample_cylindrical_fbm(
    space: &SpectralSpace,
    q: &CovarianceSpec,
    sampler: &FbmSampler,
    seeds: &SeedTree,
    replica: u64,
) -> Result<GridPath> {
    q.check_space(space)?;
    let n = sampler.grid.len();
    let modes: Vec<Vec<f64>> = q
        .lambdas()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == 0.0 {
                vec![0.0; n]
            } else {
                let mut rng = seeds.rng(replica, i as u64, stream::FBM);
                let s = l.sqrt();
                sampler.sample(&mut rng).into_iter().map(|v| s * v).collect()
            }
        })
        .collect();
    GridPath::from_modes(sampler.grid.clone(), &modes)
}

/// Q-Wiener process on `grid` (which must start at 0).
///
/// Sampled by independent Gaussian increments, which is the `H = 1/2` law of
/// [`sample_cylindrical_fbm`] without the Cholesky cap, so fast-time grids of
/// any length are supported. Mode `i` uses the stream `(r, i, WIENER)`.
pub fn sample_q_wiener(
    space: &SpectralSpace,
    q: &CovarianceSpec,
    grid: &TimeGrid,
    seeds: &SeedTree,
    replica: u64,
) -> Result<GridPath> {
    q.check_space(space)?;
    if grid.start() != 0.0 {
        return Err(Error::Grid("Wiener grids must start at t = 0".into()));
    }
    let t = grid.times();
    let modes: Vec<Vec<f64>> = q
        .lambdas()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut out = vec![0.0; t.len()];
            if l > 0.0 {
                let mut rng = seeds.rng(replica, i as u64, stream::WIENER);
                let z = normals(&mut rng, t.len() - 1);
                let s = l.sqrt();
                for k in 1..t.len() {
                    out[k] = out[k - 1] + s * (t[k] - t[k - 1]).sqrt() * z[k - 1];
                }
            }
            out
        })
        .collect();
    GridPath::from_modes(grid.clone(), &modes)
}

/// On-disk cache of sampled paths keyed by (seed, H, grid hash, replica).
#[derive(Debug, Clone)]
pub struct PathCache {
    dir: PathBuf,
}

impl PathCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn key(seed: u64, h: HurstParam, grid: &TimeGrid, replica: u64) -> String {
        format!(
            "fbm-{seed:016x}-{:016x}-{:016x}-{replica}.bin",
            h.value().to_bits(),
            grid.hash64()
        )
    }

    /// Returns the cached path or generates, stores and returns it.
    pub fn get_or_generate(&self, key: &str, generate: impl FnOnce() -> Result<GridPath>) -> Result<GridPath> {
        let file = self.dir.join(key);
        if file.exists() {
            let f = std::fs::File::open(&file)?;
            return GridPath::read_binary(std::io::BufReader::new(f));
        }
        let p = generate()?;
        let tmp = self.dir.join(format!("{key}.tmp"));
        {
            let f = std::fs::File::create(&tmp)?;
            p.write_binary(std::io::BufWriter::new(f))?;
        }
        std::fs::rename(&tmp, &file)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(fbm_covariance(h(0.7), 1.0, 1.0), 1.0);
        assert!((fbm_covariance(h(0.5), 1.0, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(fbm_covariance(h(0.8), 0.0, 3.0), 0.0);
    }

    #[test]
    fn c_h_values() {
        assert!((h(0.5).c_h() - 1.0).abs() < 1e-14);
        assert!((h(0.7).c_h() - 1.00246501664).abs() < 1e-9);
    }

    #[test]
    fn hurst_range() {
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(0.49).is_err());
        assert!(HurstParam::new(0.5).is_ok());
    }

    #[test]
    fn single_node_draw_has_unit_variance() {
        let g = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let s = FbmSampler::new(h(0.7), &g).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20000).map(|_| s.sample(&mut rng)[1]).collect();
        let (var, se) = crate::stats::variance_se(&xs);
        assert!((var - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn cap_and_origin_are_enforced() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        assert!(matches!(FbmSampler::with_cap(h(0.7), &g, 10), Err(Error::Refused(_))));
        let g = TimeGrid::new(vec![0.5, 1.0]).unwrap();
        assert!(matches!(FbmSampler::new(h(0.7), &g), Err(Error::Grid(_))));
    }

    #[test]
    fn zero_covariance_gives_zero_paths() {
        let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
        let q = CovarianceSpec::new(vec![0.0, 0.0]).unwrap();
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let s = FbmSampler::new(h(0.7), &g).unwrap();
        let seeds = SeedTree::new(1);
        assert!(sample_cylindrical_fbm(&space, &q, &s, &seeds, 0)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
        assert!(sample_q_wiener(&space, &q, &g, &seeds, 0)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn single_mode_cylindrical_equals_scalar_draw() {
        let space = SpectralSpace::new(vec![1.0]).unwrap();
        let q = CovarianceSpec::identity(1);
        let g = TimeGrid::uniform(1.0, 16).unwrap();
        let s = FbmSampler::new(h(0.7), &g).unwrap();
        let seeds = SeedTree::new(9);
        let cyl = sample_cylindrical_fbm(&space, &q, &s, &seeds, 4).unwrap();
        let one = sample_fbm_1d(&s, &mut seeds.rng(4, 0, stream::FBM));
        assert_eq!(cyl.data(), one.data());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let space = SpectralSpace::new(vec![1.0, 2.0]).unwrap();
        let q = CovarianceSpec::identity(3);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(matches!(
            sample_q_wiener(&space, &q, &g, &SeedTree::new(0), 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PathCache::new(dir.path()).unwrap();
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let s = FbmSampler::new(h(0.7), &g).unwrap();
        let key = PathCache::key(5, h(0.7), &g, 0);
        let first = cache
            .get_or_generate(&key, || Ok(sample_fbm_1d(&s, &mut ChaCha20Rng::seed_from_u64(5))))
            .unwrap();
        let second = cache.get_or_generate(&key, || panic!("must hit the cache")).unwrap();
        assert_eq!(first, second);
    }
}
