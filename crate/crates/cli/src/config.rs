//! Experiment configuration: one TOML file per experiment.
//!
//! The grammar (sections, keys, defaults) is documented in the repository
//! README. Everything is validated eagerly in [`load_config`]; errors name the
//! offending field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mfbm_core::coefficients::{CoefficientSystem, FamilyRegistry};
use mfbm_core::deviation::TerminalEvent;
use mfbm_core::grid::TimeGrid;
use mfbm_core::noise::{CovarianceSpec, HurstParam, CHOLESKY_CAP};
use mfbm_core::solver::ScaleParams;
use mfbm_core::spectral::{SpaceSpec, SpectralSpace};
use mfbm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub hurst: f64,
    /// Fractional order of the pathwise integral; default `(1 - H + 1/2) / 2`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Eigenvalues of `Q_1`; default all ones.
    #[serde(default)]
    pub q1: Option<Vec<f64>>,
    /// Eigenvalues of `Q_2`; default all ones.
    #[serde(default)]
    pub q2: Option<Vec<f64>>,
    /// Optional budget on `sum sqrt(l_i)` of `Q_1`.
    #[serde(default)]
    pub q1_budget: Option<f64>,
    #[serde(default = "default_cap")]
    pub cholesky_cap: usize,
}

fn default_cap() -> usize {
    CHOLESKY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_steps() -> usize {
    256
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesSection {
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    /// Khasminskii block length.
    #[serde(default)]
    pub block: Option<f64>,
    /// Moderate-deviation speed `h(eps) = eps^{-p}`.
    #[serde(default)]
    pub speed_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Default: all ones.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Default: zeros.
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BbarMode {
    /// Closed form when the family has one, tabulation otherwise.
    #[default]
    Auto,
    ClosedForm,
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn nodes(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        (0..self.points)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AveragingSection {
    #[serde(default)]
    pub mode: BbarMode,
    /// One axis per mode; default `[-3, 3]` with 13 points.
    #[serde(default)]
    pub axes: Option<Vec<AxisSpec>>,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    #[serde(default)]
    pub mode: usize,
    pub threshold: f64,
    #[serde(default = "default_true")]
    pub above: bool,
    /// Reference rate for the comparison; computed for the Gaussian-solvable
    /// linear family (`b_y = 0`) when absent.
    #[serde(default)]
    pub rate_reference: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl EventSection {
    pub fn event(&self) -> TerminalEvent {
        TerminalEvent {
            mode: self.mode,
            threshold: self.threshold,
            above: self.above,
        }
    }
}

/// A validated experiment description. After [`load_config`] every optional
/// field that has a default is filled in, so serializing the value echoes the
/// effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub space: SpaceSpec,
    pub noise: NoiseSection,
    pub family: FamilySection,
    #[serde(default)]
    pub grid: GridSection,
    pub scales: ScalesSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub averaging: AveragingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_replicas() -> usize {
    100
}

/// Objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub space: SpectralSpace,
    pub hurst: HurstParam,
    pub q1: CovarianceSpec,
    pub q2: CovarianceSpec,
    pub coeffs: Arc<dyn CoefficientSystem>,
    pub grid: TimeGrid,
    pub schedule: Vec<ScaleParams>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn tag(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{field}: {m}")),
        other => cfg_err(field, other),
    }
}

fn vector_or(field: &str, v: &Option<Vec<f64>>, dim: usize, fill: f64) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![fill; dim]),
        Some(v) if v.len() != dim => Err(cfg_err(field, format!("expected {dim} entries, got {}", v.len()))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => Err(cfg_err(field, "entries must be finite")),
        Some(v) => Ok(v.clone()),
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, so that scalar overrides can be applied
    /// before [`ExperimentConfig::validate`].
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {}", e.message())))
    }

    /// Fills in defaults and checks every invariant.
    pub fn validate(&mut self) -> Result<Resolved> {
        self.fill_defaults()?;
        self.resolve()
    }

    fn fill_defaults(&mut self) -> Result<()> {
        let h = self.noise.hurst;
        if !(h > 0.5 && h < 1.0) {
            return Err(cfg_err(
                "noise.hurst",
                format!("{h} outside (0.5, 1): the fBM component needs H strictly between 1/2 and 1"),
            ));
        }
        let hp = HurstParam::new(h).map_err(|e| tag("noise.hurst", e))?;
        self.noise.alpha.get_or_insert(hp.default_alpha());
        let space = SpectralSpace::try_from(self.space.clone()).map_err(|e| tag("space", e))?;
        let n = space.dim();
        self.noise.q1 = Some(vector_or("noise.q1", &self.noise.q1, n, 1.0)?);
        self.noise.q2 = Some(vector_or("noise.q2", &self.noise.q2, n, 1.0)?);
        self.initial.x0 = Some(vector_or("initial.x0", &self.initial.x0, n, 1.0)?);
        self.initial.y0 = Some(vector_or("initial.y0", &self.initial.y0, n, 0.0)?);
        if self.averaging.axes.is_none() {
            self.averaging.axes = Some(vec![
                AxisSpec {
                    lo: -3.0,
                    hi: 3.0,
                    points: 13
                };
                n
            ]);
        }
        Ok(())
    }

    /// Builds and validates every object the configuration describes.
    pub fn resolve(&self) -> Result<Resolved> {
        let h = self.noise.hurst;
        if !(h > 0.5 && h < 1.0) {
            return Err(cfg_err("noise.hurst", format!("{h} outside (0.5, 1)")));
        }
        let hurst = HurstParam::new(h).map_err(|e| tag("noise.hurst", e))?;
        if let Some(a) = self.noise.alpha {
            let lo = ((1.0 - h) * 1e12).round() / 1e12;
            if !(a > lo && a < 0.5) {
                return Err(cfg_err(
                    "noise.alpha",
                    format!("{a} outside the admissible interval (1 - H, 1/2) = ({lo}, 0.5)"),
                ));
            }
        }
        let space = SpectralSpace::try_from(self.space.clone()).map_err(|e| tag("space", e))?;
        let n = space.dim();
        let q1 = CovarianceSpec::new(vector_or("noise.q1", &self.noise.q1, n, 1.0)?).map_err(|e| tag("noise.q1", e))?;
        let q2 = CovarianceSpec::new(vector_or("noise.q2", &self.noise.q2, n, 1.0)?).map_err(|e| tag("noise.q2", e))?;
        if let Some(b) = self.noise.q1_budget {
            q1.check_budget(b).map_err(|e| tag("noise.q1_budget", e))?;
        }
        let coeffs = FamilyRegistry::default()
            .build(&self.family.name, n, &self.family.params)
            .map_err(|e| tag("family", e))?;
        let g = self.grid;
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            return Err(cfg_err("grid.horizon", format!("must be positive, got {}", g.horizon)));
        }
        if g.steps == 0 {
            return Err(cfg_err("grid.steps", "must be at least 1"));
        }
        if g.steps > self.noise.cholesky_cap {
            return Err(cfg_err(
                "grid.steps",
                format!("{} exceeds the sampler cap noise.cholesky_cap = {}", g.steps, self.noise.cholesky_cap),
            ));
        }
        let grid = TimeGrid::uniform(g.horizon, g.steps).map_err(|e| tag("grid", e))?;
        let s = &self.scales;
        if s.epsilon.is_empty() || s.epsilon.len() != s.delta.len() {
            return Err(cfg_err(
                "scales",
                format!(
                    "epsilon and delta must be non-empty lists of equal length (got {} and {})",
                    s.epsilon.len(),
                    s.delta.len()
                ),
            ));
        }
        if let Some(b) = s.block {
            if !(b >= grid.step()) {
                return Err(cfg_err(
                    "scales.block",
                    format!("{b} is smaller than the grid step {}", grid.step()),
                ));
            }
        }
        let mut schedule = Vec::with_capacity(s.epsilon.len());
        for (j, (e, d)) in s.epsilon.iter().zip(&s.delta).enumerate() {
            let mut p = ScaleParams::new(*e, *d).map_err(|err| tag(&format!("scales[{j}]"), err))?;
            if let Some(b) = s.block {
                p = p.with_block(b).map_err(|err| tag("scales.block", err))?;
            }
            if let Some(pw) = s.speed_power {
                p = p.with_power_speed(pw).map_err(|err| tag("scales.speed_power", err))?;
            }
            schedule.push(p);
        }
        let x0 = vector_or("initial.x0", &self.initial.x0, n, 1.0)?;
        let y0 = vector_or("initial.y0", &self.initial.y0, n, 0.0)?;
        if let Some(axes) = &self.averaging.axes {
            if axes.len() != n {
                return Err(cfg_err("averaging.axes", format!("expected {n} axes, got {}", axes.len())));
            }
            for (i, a) in axes.iter().enumerate() {
                let ok = a.points >= 1 && a.lo.is_finite() && a.hi.is_finite() && (a.points == 1 || a.lo < a.hi);
                if !ok {
                    return Err(cfg_err(
                        &format!("averaging.axes[{i}]"),
                        "need lo < hi and points >= 1 (lo alone when points = 1)",
                    ));
                }
            }
        }
        for (k, v) in [
            ("averaging.burn_in", self.averaging.burn_in),
            ("averaging.horizon", self.averaging.horizon),
            ("averaging.step", self.averaging.step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(cfg_err(k, format!("must be positive, got {v}")));
                }
            }
        }
        if let Some(ev) = &self.event {
            if ev.mode >= n {
                return Err(cfg_err("event.mode", format!("{} out of range for dim {n}", ev.mode)));
            }
        }
        Ok(Resolved {
            space,
            hurst,
            q1,
            q2,
            coeffs,
            grid,
            schedule,
            x0,
            y0,
        })
    }

    /// `(epsilon, delta, delta/epsilon)` per schedule entry.
    pub fn scale_pairs(&self) -> Vec<(f64, f64, f64)> {
        self.scales
            .epsilon
            .iter()
            .zip(&self.scales.delta)
            .map(|(e, d)| (*e, *d, if *e > 0.0 { d / e } else { f64::INFINITY }))
            .collect()
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[space]
eigenvalues = [1.0, 4.0]

[noise]
hurst = 0.7

[family]
name = "linear_dissipative"

[scales]
epsilon = [0.1]
delta = [0.001]
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.grid.steps, 256);
        assert_eq!(c.noise.q1.as_deref(), Some(&[1.0, 1.0][..]));
        let a = c.noise.alpha.unwrap();
        assert!(a > 0.3 && a < 0.5);
        assert_eq!(c.scale_pairs()[0].2, 0.01);
    }

    #[test]
    fn alpha_error_quotes_interval() {
        let t = MINIMAL.replace("hurst = 0.7", "hurst = 0.7\nalpha = 0.2");
        let e = ExperimentConfig::from_toml_str(&t).unwrap_err().to_string();
        assert!(e.contains("noise.alpha") && e.contains("(0.3, 0.5)"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t = format!("{MINIMAL}\n[grid]\nstepz = 3\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&t), Err(Error::Config(_))));
    }
}
