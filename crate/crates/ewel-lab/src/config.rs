//! Experiment configuration: TOML in, validated structures out.
//!
//! Configs round-trip losslessly and unknown keys are rejected. The config
//! hash is the SHA-256 of the canonical JSON serialization of the parsed
//! structure, so it is stable across platforms and whitespace.

use crate::error::{LabError, Result};
use ewel_core::coefficients::CoefficientField;
use ewel_core::weak_error::{Domain, TestFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentMeta,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<TestFunctionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollifier: Option<MollifierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametrix: Option<ParametrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMeta {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Coupled weak-error sweep over step sizes + rate fit.
    WeakErrorSweep,
    /// KDE density error against the fine reference, per step size.
    DensityErrorSweep,
    /// Mollification deviation / derivative / L^q scans over epsilon.
    MollifierScan,
    /// Parametrix density evaluation (continuous and discrete series).
    ParametrixEval,
    /// Three-way error decomposition with a fixed mollification radius.
    Decomposition,
    /// Simulate one batch and dump it (binary + summary CSV).
    Simulate,
}

/// Closed-form model zoo, keyed by name.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Constant { dim: usize, drift: Vec<f64>, sigma: Vec<f64> },
    TanhDrift { amp: f64, rate: f64, sigma: f64 },
    OrnsteinUhlenbeck { rate: f64, sigma: f64 },
    WeierstrassSigma {
        gamma: f64,
        base: u32,
        n_terms: u32,
        offset: f64,
        amp: f64,
        clip: f64,
        drift_amp: f64,
    },
    CirLike { a: f64, k: f64, vol: f64, eta: f64, cap: f64 },
    SignDrift { amp: f64, sigma: f64 },
    HyperplaneDrift { normal: Vec<f64>, offset: f64, amp: f64, sigma: f64 },
    SphereDrift { center: Vec<f64>, radius: f64, amp: f64, sigma: f64 },
    TimeLinearSigma { base: f64, slope: f64 },
}

impl ModelConfig {
    pub fn build(&self) -> Result<CoefficientField> {
        let field = match self.clone() {
            ModelConfig::Constant { dim, drift, sigma } => {
                CoefficientField::constant(dim, drift, sigma)?
            }
            ModelConfig::TanhDrift { amp, rate, sigma } => {
                CoefficientField::tanh_drift(amp, rate, sigma)
            }
            ModelConfig::OrnsteinUhlenbeck { rate, sigma } => {
                CoefficientField::ornstein_uhlenbeck(rate, sigma)
            }
            ModelConfig::WeierstrassSigma {
                gamma,
                base,
                n_terms,
                offset,
                amp,
                clip,
                drift_amp,
            } => CoefficientField::weierstrass_sigma(gamma, base, n_terms, offset, amp, clip, drift_amp)?,
            ModelConfig::CirLike { a, k, vol, eta, cap } => {
                CoefficientField::cir_like(a, k, vol, eta, cap)
            }
            ModelConfig::SignDrift { amp, sigma } => CoefficientField::sign_drift(amp, sigma),
            ModelConfig::HyperplaneDrift { normal, offset, amp, sigma } => {
                CoefficientField::hyperplane_drift(normal, offset, amp, sigma)?
            }
            ModelConfig::SphereDrift { center, radius, amp, sigma } => {
                CoefficientField::sphere_drift(center, radius, amp, sigma)?
            }
            ModelConfig::TimeLinearSigma { base, slope } => {
                CoefficientField::time_linear_sigma(base, slope)
            }
        };
        Ok(field)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelConfig::Constant { .. } => "constant",
            ModelConfig::TanhDrift { .. } => "tanh_drift",
            ModelConfig::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
            ModelConfig::WeierstrassSigma { .. } => "weierstrass_sigma",
            ModelConfig::CirLike { .. } => "cir_like",
            ModelConfig::SignDrift { .. } => "sign_drift",
            ModelConfig::HyperplaneDrift { .. } => "hyperplane_drift",
            ModelConfig::SphereDrift { .. } => "sphere_drift",
            ModelConfig::TimeLinearSigma { .. } => "time_linear_sigma",
        }
    }
}

/// Names and one-line descriptions of the built-in models.
pub fn model_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("constant", "constant drift and diffusion (any dim <= 3)"),
        ("tanh_drift", "1D bounded smooth drift amp*tanh(rate*x), constant sigma"),
        ("ornstein_uhlenbeck", "1D b = -rate*x, constant sigma"),
        (
            "weierstrass_sigma",
            "1D truly gamma-Hoelder sigma = offset + amp*clip(W(x)), tanh drift",
        ),
        ("cir_like", "1D b = a - k*x, sigma = eta + min(vol*sqrt|x|, cap)"),
        ("sign_drift", "1D piecewise drift amp*sign(x), constant sigma"),
        ("hyperplane_drift", "piecewise drift amp*n*sign(<n,x>-c), diagonal sigma"),
        ("sphere_drift", "piecewise drift amp*e1*sign(d_S(x)), diagonal sigma"),
        ("time_linear_sigma", "1D driftless, sigma(t) = base + slope*t"),
    ]
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_horizon: f64,
    pub n_list: Vec<usize>,
    #[serde(default = "default_ref_factor")]
    pub ref_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_ref_factor() -> usize {
    64
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub m: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionConfig {
    Identity,
    Cos,
    HolderPower { beta: f64 },
    IndicatorBall { center: Vec<f64>, radius: f64 },
    IndicatorHalfSpace { normal: Vec<f64>, offset: f64 },
    SmoothIndicatorBall { center: Vec<f64>, radius: f64, delta: f64 },
}

impl TestFunctionConfig {
    pub fn build(&self) -> TestFunction {
        match self.clone() {
            TestFunctionConfig::Identity => TestFunction::Identity,
            TestFunctionConfig::Cos => TestFunction::Cos,
            TestFunctionConfig::HolderPower { beta } => TestFunction::HolderPower { beta },
            TestFunctionConfig::IndicatorBall { center, radius } => {
                TestFunction::Indicator(Domain::Ball { center, radius })
            }
            TestFunctionConfig::IndicatorHalfSpace { normal, offset } => {
                TestFunction::Indicator(Domain::HalfSpace { normal, offset })
            }
            TestFunctionConfig::SmoothIndicatorBall { center, radius, delta } => {
                TestFunction::SmoothIndicator(Domain::Ball { center, radius }, delta)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunctionConfig::Identity => "identity".into(),
            TestFunctionConfig::Cos => "cos".into(),
            TestFunctionConfig::HolderPower { beta } => format!("holder_power[beta={beta}]"),
            TestFunctionConfig::IndicatorBall { radius, .. } => {
                format!("indicator_ball[r={radius}]")
            }
            TestFunctionConfig::IndicatorHalfSpace { offset, .. } => {
                format!("indicator_halfspace[c={offset}]")
            }
            TestFunctionConfig::SmoothIndicatorBall { radius, delta, .. } => {
                format!("smooth_indicator_ball[r={radius},delta={delta}]")
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MollifierConfig {
    pub epsilons: Vec<f64>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default = "default_lq_resolution")]
    pub lq_resolution: usize,
    /// Derivative orders to scan (per-axis multi-indices).
    #[serde(default)]
    pub derivative_orders: Vec<Vec<usize>>,
    #[serde(default = "default_scan_box")]
    pub scan_box: f64,
    #[serde(default = "default_scan_samples")]
    pub scan_samples: usize,
}

fn default_quad_nodes() -> usize {
    24
}
fn default_eta() -> f64 {
    0.25
}
fn default_lq_resolution() -> usize {
    1024
}
fn default_scan_box() -> f64 {
    2.0
}
fn default_scan_samples() -> usize {
    1024
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParametrixConfig {
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub y_points: Vec<Vec<f64>>,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    /// Step counts for the discrete series (empty: continuous only).
    #[serde(default)]
    pub discrete_n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_time: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_space: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc_stds: Option<f64>,
}

fn default_r_max() -> usize {
    4
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub y_points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    pub epsilon: f64,
    pub n_ref: usize,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Fitted slope must be at least this (one-sided: faster decay passes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_slope: Option<f64>,
    /// Every |error| must be within this many stderr of zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_within_stderr: Option<f64>,
    /// Errors must decrease beyond combined noise along the sweep.
    #[serde(default)]
    pub monotone_beyond_noise: bool,
    /// KDE bias bound must stay below half the smallest error.
    #[serde(default)]
    pub bias_below_half_error: bool,
    /// Ratio checks on scan quantities: value(eps_a)/value(eps_b) in range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratio_checks: Vec<RatioCheck>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RatioCheck {
    pub quantity: String,
    pub eps_a: f64,
    pub eps_b: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_horizon: 1.0,
            n_list: vec![8, 16, 32, 64],
            ref_factor: 64,
            x0: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| LabError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let field = self.model.build().map_err(LabError::from)?;
        if let Some(grid) = &self.grid {
            if grid.n_list.is_empty() {
                return Err(LabError::Config("grid.n_list must be nonempty".into()));
            }
            if !(grid.t_horizon > 0.0) {
                return Err(LabError::Config("grid.t_horizon must be positive".into()));
            }
            if let Some(x0) = &grid.x0 {
                if x0.len() != field.dim {
                    return Err(LabError::Config(format!(
                        "grid.x0 has {} coordinates, model has dim {}",
                        x0.len(),
                        field.dim
                    )));
                }
            }
        }
        if let Some(m) = &self.mollifier {
            if m.epsilons.is_empty() {
                return Err(LabError::Config("mollifier.epsilons must be nonempty".into()));
            }
            if let Some(q) = m.q {
                if q <= field.dim as f64 {
                    return Err(LabError::Config(format!(
                        "mollifier.q = {q} must exceed the dimension {}",
                        field.dim
                    )));
                }
            }
        }
        match self.experiment.kind {
            ExperimentKind::WeakErrorSweep => {
                if self.test_function.is_none() {
                    return Err(LabError::Config(
                        "weak_error_sweep wants a [test_function] block".into(),
                    ));
                }
                if self.grid.is_none() {
                    return Err(LabError::Config("weak_error_sweep wants a [grid] block".into()));
                }
                if self.paths.is_none() {
                    return Err(LabError::Config("weak_error_sweep wants a [paths] block".into()));
                }
            }
            ExperimentKind::DensityErrorSweep => {
                if self.density.is_none() {
                    return Err(LabError::Config(
                        "density_error_sweep wants a [density] block".into(),
                    ));
                }
                if self.grid.is_none() || self.paths.is_none() {
                    return Err(LabError::Config(
                        "density_error_sweep wants [grid] and [paths] blocks".into(),
                    ));
                }
            }
            ExperimentKind::MollifierScan => {
                if self.mollifier.is_none() {
                    return Err(LabError::Config(
                        "mollifier_scan wants a [mollifier] block".into(),
                    ));
                }
            }
            ExperimentKind::ParametrixEval => {
                if self.parametrix.is_none() {
                    return Err(LabError::Config(
                        "parametrix_eval wants a [parametrix] block".into(),
                    ));
                }
            }
            ExperimentKind::Decomposition => {
                if self.decomposition.is_none() || self.density.is_none() {
                    return Err(LabError::Config(
                        "decomposition wants [decomposition] and [density] blocks".into(),
                    ));
                }
                if self.grid.is_none() || self.paths.is_none() {
                    return Err(LabError::Config(
                        "decomposition wants [grid] and [paths] blocks".into(),
                    ));
                }
            }
            ExperimentKind::Simulate => {
                if self.grid.is_none() || self.paths.is_none() {
                    return Err(LabError::Config(
                        "simulate wants [grid] and [paths] blocks".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization (platform independent).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    /// Starting point: configured or the origin.
    pub fn x0(&self, dim: usize) -> Vec<f64> {
        self.grid
            .as_ref()
            .and_then(|g| g.x0.clone())
            .unwrap_or_else(|| vec![0.0; dim])
    }
}

use std::format;

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[experiment]
name = "demo"
kind = "weak_error_sweep"
seed = 42

[model]
name = "constant"
dim = 1
drift = [0.3]
sigma = [1.0]

[grid]
t_horizon = 1.0
n_list = [4, 8, 16, 32]
ref_factor = 16

[paths]
m = 1000

[test_function]
kind = "cos"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.experiment.seed, 42);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SAMPLE.replace("[paths]\nm = 1000", "[paths]\nm = 1000\nbogus = 3");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(format!("{err}").contains("bogus"), "{err}");
    }

    #[test]
    fn missing_seed_names_the_field() {
        let bad = SAMPLE.replace("seed = 42\n", "");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(format!("{err}").contains("seed"), "{err}");
    }

    #[test]
    fn q_constraint_enforced() {
        let cfg = format!(
            "{SAMPLE}\n[mollifier]\nepsilons = [0.1]\nq = 0.5\n"
        );
        let err = ExperimentConfig::from_toml_str(&cfg).unwrap_err();
        assert!(format!("{err}").contains('q'), "{err}");
    }
}
