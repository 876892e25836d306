//! Scenario configuration, read from JSON and validated before any work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hida::MultiplierConvention;
use crate::paths::Scheme;
use crate::semigroup::registry;
use crate::spectral::{EigenSystem, ShiftField, ShiftMode};
use crate::stransform::QuadratureSettings;
use crate::window::window;

pub const SCHEMA_VERSION: u32 = 1;

/// The desk-scale configuration shipped with the repository.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub basis: BasisConfig,
    pub horizon: f64,
    pub observables: Vec<String>,
    pub windows: Vec<String>,
    pub shift_fields: Vec<ShiftSpec>,
    pub times: Vec<f64>,
    pub quadrature: QuadratureSettings,
    pub mc: McConfig,
    pub pathwise: PathwiseConfig,
    pub epsilon_ladder: Vec<f64>,
    pub renorm: RenormConfig,
    pub hida: HidaConfig,
    pub tolerances: Tolerances,
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub n_modes: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub name: String,
    pub modes: Vec<ShiftMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub scheme: Scheme,
    pub delta: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Modes kept when comparing the shifted and weighted estimators.
    pub n_modes: usize,
    /// `(observable, t, x, shift name)` spot checks of the shifted estimator.
    pub spot_checks: Vec<SpotCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotCheck {
    pub observable: String,
    pub t: f64,
    pub x: f64,
    pub shift: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwiseConfig {
    pub observables: Vec<String>,
    pub window: String,
    pub t: f64,
    pub epsilon: f64,
    pub n_paths: usize,
    /// Coarsest and finest steps as powers of two: `Δ = 2^-log2`.
    pub coarsest_log2: u32,
    pub finest_log2: u32,
    pub space_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenormConfig {
    pub n_modes: usize,
    pub t: f64,
    pub x_divergent: f64,
    pub x_renormalized: f64,
    /// Ladder of the ε-convergence table of the S-transform terms.
    pub table_ladder: Vec<f64>,
    pub table_observable: String,
    pub table_window: String,
    pub table_shift: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HidaConfig {
    pub points: Vec<[f64; 2]>,
    pub n_modes: usize,
    pub resolution: usize,
    pub convention: MultiplierConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub kernel: f64,
    pub heat_residual: f64,
    pub closed_form: f64,
    pub stationary_variance: f64,
    pub ito_linear: f64,
    pub ito_nonlinear: f64,
    pub mc_sigmas: f64,
    pub pathwise_slope: [f64; 2],
    pub form_agreement: f64,
    pub divergence_slope: f64,
    pub divergence_band: f64,
    pub renormalized_slope_min: f64,
    pub table_final_diff: f64,
    pub hida_stability: f64,
    pub hida_ratio_slack: f64,
    pub parseval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub format: Format,
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("`{name}` must not be empty")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("`{name}` must be positive and finite, got {v}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn default_desk() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn basis(&self) -> Result<EigenSystem> {
        EigenSystem::new(self.basis.n_modes, self.basis.kappa)
    }

    pub fn shift(&self, name: &str) -> Result<ShiftField> {
        self.shift_fields
            .iter()
            .find(|s| s.name == name)
            .map(|s| ShiftField {
                modes: s.modes.clone(),
                horizon: self.horizon,
            })
            .ok_or_else(|| Error::Config(format!("unknown shift field `{name}`")))
    }

    /// Schema-level checks; no numerics are run.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let basis = self.basis().map_err(|e| Error::Config(e.to_string()))?;
        positive("horizon", self.horizon)?;
        nonempty("observables", &self.observables)?;
        nonempty("windows", &self.windows)?;
        nonempty("shift_fields", &self.shift_fields)?;
        nonempty("times", &self.times)?;
        nonempty("epsilon_ladder", &self.epsilon_ladder)?;
        for name in self.observables.iter().chain(&self.pathwise.observables) {
            registry(name).map_err(|e| Error::Config(e.to_string()))?;
        }
        registry(&self.renorm.table_observable).map_err(|e| Error::Config(e.to_string()))?;
        for name in self.windows.iter().chain([&self.pathwise.window, &self.renorm.table_window]) {
            window(name).map_err(|e| Error::Config(e.to_string()))?;
        }
        for s in &self.shift_fields {
            self.shift(&s.name)?
                .validate(&basis)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.shift_fields.iter().enumerate().any(|(i, a)| self.shift_fields[..i].iter().any(|b| b.name == a.name)) {
            return Err(Error::Config("shift field names must be unique".into()));
        }
        for &t in &self.times {
            if !(t > 0.0 && t <= self.horizon) {
                return Err(Error::Config(format!("time {t} outside (0, horizon]")));
            }
        }
        self.quadrature.validate().map_err(|e| Error::Config(e.to_string()))?;

        let mc = &self.mc;
        positive("mc.delta", mc.delta)?;
        if mc.n_samples < 2 || mc.n_modes == 0 {
            return Err(Error::Config("mc needs n_samples >= 2 and n_modes >= 1".into()));
        }
        nonempty("mc.spot_checks", &mc.spot_checks)?;
        for s in &mc.spot_checks {
            registry(&s.observable).map_err(|e| Error::Config(e.to_string()))?;
            self.shift(&s.shift)?;
            if !(s.t > 0.0 && s.t <= self.horizon && (0.0..=1.0).contains(&s.x)) {
                return Err(Error::Config(format!("spot check at t={}, x={} out of range", s.t, s.x)));
            }
        }

        let p = &self.pathwise;
        nonempty("pathwise.observables", &p.observables)?;
        positive("pathwise.epsilon", p.epsilon)?;
        if p.coarsest_log2 >= p.finest_log2 || p.finest_log2 > 20 {
            return Err(Error::Config("pathwise needs coarsest_log2 < finest_log2 <= 20".into()));
        }
        if !(p.t > 0.0 && p.t <= self.horizon) || p.n_paths < 2 || p.space_points < 2 {
            return Err(Error::Config("pathwise t, n_paths or space_points out of range".into()));
        }
        let steps = p.t * 2f64.powi(p.coarsest_log2 as i32);
        if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::Config("pathwise t must be a multiple of the coarsest step".into()));
        }

        let r = &self.renorm;
        nonempty("renorm.table_ladder", &r.table_ladder)?;
        self.shift(&r.table_shift)?;
        positive("renorm.t", r.t)?;
        if r.n_modes == 0 {
            return Err(Error::Config("renorm.n_modes must be positive".into()));
        }

        let h = &self.hida;
        nonempty("hida.points", &h.points)?;
        if h.n_modes == 0 || h.resolution == 0 || h.convention.order == 0 {
            return Err(Error::Config("hida n_modes, resolution and order must be positive".into()));
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("kernel", t.kernel),
            ("heat_residual", t.heat_residual),
            ("closed_form", t.closed_form),
            ("stationary_variance", t.stationary_variance),
            ("ito_linear", t.ito_linear),
            ("ito_nonlinear", t.ito_nonlinear),
            ("mc_sigmas", t.mc_sigmas),
            ("form_agreement", t.form_agreement),
            ("divergence_band", t.divergence_band),
            ("table_final_diff", t.table_final_diff),
            ("hida_stability", t.hida_stability),
            ("hida_ratio_slack", t.hida_ratio_slack),
            ("parseval", t.parseval),
        ] {
            positive(&format!("tolerances.{name}"), v)?;
        }
        if !(t.pathwise_slope[0] < t.pathwise_slope[1]) {
            return Err(Error::Config("tolerances.pathwise_slope must be an increasing band".into()));
        }
        Ok(())
    }
}
