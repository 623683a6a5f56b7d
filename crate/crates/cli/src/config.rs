//! JSON inputs of the subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sde_enet::diagnostics::{BoundCheck, SupportReport};
use sde_enet::enet::{PathResult, PenaltyConfig};
use sde_enet::study::{scenario_setup, Scenario, ScenarioSetup, SelectionRule, StudyConfig};
use sde_enet::{Error, ModelConfig, ModelSpec, ParamVector, Result};

/// `simulate`: either a built-in scenario or an explicit model and truth.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub regressors: Option<usize>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub theta: Option<ParamVector>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub n: usize,
    pub delta: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
}

fn default_seed() -> u64 {
    1
}

impl SimulateConfig {
    pub fn setup(&self) -> Result<ScenarioSetup> {
        match (self.scenario, &self.model) {
            (Some(scenario), None) => {
                let mut study = StudyConfig::new(scenario);
                if let Some(rho) = self.rho {
                    study.rho = rho;
                }
                if let Some(k) = self.regressors {
                    study.regressors = k;
                }
                study.model = None;
                let mut setup = scenario_setup(&study)?;
                if let Some(theta) = &self.theta {
                    setup.model.check_theta(theta)?;
                    setup.truth = theta.clone();
                }
                if let Some(x0) = &self.x0 {
                    setup.x0 = x0.clone();
                }
                Ok(setup)
            }
            (None, Some(mc)) => {
                let model = ModelSpec::from_config(mc)?;
                let truth = self.theta.clone().ok_or_else(|| Error::Config("`theta` is required with `model`".into()))?;
                model.check_theta(&truth)?;
                let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
                Ok(ScenarioSetup { model, truth, x0 })
            }
            (Some(_), Some(_)) => Err(Error::Config("give either `scenario` or `model`, not both".into())),
            (None, None) => Err(Error::Config("one of `scenario` or `model` is required".into())),
        }
    }
}

/// `fit` and `path`: data, model and penalty.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Path CSV; relative paths are resolved against the config file.
    pub data: PathBuf,
    pub model: ModelConfig,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub block_diagonal: bool,
    /// Start of the QMLE search; defaults to the family's neutral point.
    #[serde(default)]
    pub theta_init: Option<ParamVector>,
    /// True parameter, enabling support metrics and error bounds.
    #[serde(default)]
    pub truth: Option<ParamVector>,
}

/// `predict`: data, a fit report and the horizons.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub data: PathBuf,
    pub fit: PathBuf,
    /// Explicit horizons; otherwise `0, Δ, …, h_max`.
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default)]
    pub h_max: Option<f64>,
}

pub fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(file)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QmleSummary {
    pub theta: ParamVector,
    pub loglik: f64,
    pub iterations: usize,
    pub boundary_contact: bool,
    pub information_regularized: bool,
}

/// Output of `fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// `adaptive_lasso` for γ = 1, else `adaptive_elastic_net`.
    pub method: String,
    pub gamma_mix: f64,
    pub model: ModelConfig,
    pub param_names: Vec<String>,
    pub n: usize,
    pub delta: f64,
    pub qmle: QmleSummary,
    pub selection: SelectionRule,
    pub lambda_index: usize,
    pub lambda: f64,
    pub estimate: ParamVector,
    /// Names of the nonzero coordinates.
    pub support: Vec<String>,
    pub kkt_residual: f64,
    pub support_metrics: Option<SupportReport>,
    pub error_bounds: Option<BoundCheck>,
    pub path: PathResult,
}

/// Written in place of the report when estimation fails.
#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub stage: String,
    pub error: String,
    pub last_iterate: Vec<f64>,
}
