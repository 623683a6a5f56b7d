//! Monte-Carlo replication harness: simulate, fit QMLE, Elastic-Net and
//! adaptive LASSO, score supports, errors, bounds and forecasts.
//!
//! Replications run on the current rayon pool and are merged by index,
//! so results do not depend on the number of workers.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_error_bounds, support_metrics_flat, Summary};
use crate::enet::{adaptive_weights, fit_path, EnetProblem, PenaltyConfig, WeightSpec};
use crate::io::{fmt_f64, save_json};
use crate::model::{ar1_correlation, ModelConfig, ModelSpec, ParamVector, RegressionDiffusion, SamplePath, SamplingScheme};
use crate::predict::{calibrate_bound, horizon_grid, mae_bound_shape, one_step_predict, Calibration, ErrorNorm, MaeRow};
use crate::qmle::{default_theta_init, qmle_fit, ParamBox, QuasiLik};
use crate::sim::{derive_seed, simulate_rows, SimConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Two correlated regressors, known diffusion, `p = 7`.
    StochRegD2,
    /// `k` regressors with `ρ^{|i−j|}` noise correlation, `p = 3k + 1`.
    StochRegDgt2,
    /// Bivariate OU with full drift matrix and diagonal diffusion.
    Ou,
    /// Model, truth and start given in the config.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub n: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    Aic,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    #[serde(default = "default_h_max")]
    pub h_max: f64,
    #[serde(default)]
    pub norm: ErrorNorm,
    #[serde(default)]
    pub calibration: Calibration,
}

fn default_h_max() -> f64 {
    1.0
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            h_max: default_h_max(),
            norm: ErrorNorm::default(),
            calibration: Calibration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    #[serde(default = "default_triples")]
    pub triples: Vec<Triple>,
    /// Noise correlation for `stoch_reg_dgt2`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Number of regressors for `stoch_reg_dgt2`.
    #[serde(default = "default_regressors")]
    pub regressors: usize,
    /// Mixing levels; `1.0` is the adaptive LASSO.
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub weight_spec: WeightSpec,
    #[serde(default)]
    pub block_diagonal: bool,
    #[serde(default)]
    pub forecast: Option<ForecastConfig>,
    #[serde(default)]
    pub burn_in: usize,
    /// `custom` scenario: model, true parameter and initial state.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub truth: Option<ParamVector>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn default_triples() -> Vec<Triple> {
    vec![
        Triple { n: 250, delta: 0.1 },
        Triple { n: 1000, delta: 0.05 },
        Triple { n: 10_000, delta: 0.01 },
    ]
}

fn default_rho() -> f64 {
    0.9
}

fn default_regressors() -> usize {
    16
}

fn default_gammas() -> Vec<f64> {
    vec![0.5, 1.0]
}

fn default_replications() -> usize {
    200
}

fn default_seed() -> u64 {
    1
}

impl StudyConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            triples: default_triples(),
            rho: default_rho(),
            regressors: default_regressors(),
            gammas: default_gammas(),
            replications: default_replications(),
            seed: default_seed(),
            selection: SelectionRule::default(),
            weight_spec: WeightSpec::default(),
            block_diagonal: false,
            forecast: None,
            burn_in: 0,
            model: None,
            truth: None,
            x0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.triples.is_empty() {
            return Err(Error::config("at least one (n, delta) triple is required"));
        }
        for t in &self.triples {
            SamplingScheme::new(t.n, t.delta)?;
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::config("rho must lie in (-1, 1)"));
        }
        if self.gammas.is_empty() {
            return Err(Error::config("gammas must not be empty"));
        }
        for &g in &self.gammas {
            PenaltyConfig::new(g).validate()?;
        }
        if let Some(f) = &self.forecast {
            if !(f.h_max >= 0.0 && f.h_max.is_finite()) {
                return Err(Error::config("forecast.h_max must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Model, truth and initial state of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSetup {
    pub model: ModelSpec,
    pub truth: ParamVector,
    pub x0: Vec<f64>,
}

/// The published β-block for two regressors with noise correlation 0.9.
pub const D2_BETA_BLOCK: [f64; 4] = [0.8487, 0.5316, 0.5316, 0.8487];

pub fn scenario_setup(cfg: &StudyConfig) -> Result<ScenarioSetup> {
    match cfg.scenario {
        Scenario::StochRegD2 => {
            let block = DMatrix::from_row_slice(2, 2, &D2_BETA_BLOCK);
            let model = ModelSpec::stochastic_regression(2, None, RegressionDiffusion::Fixed { beta0: 1.0, block })?;
            let truth = ParamVector::new(vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0], vec![])?;
            Ok(ScenarioSetup {
                model,
                truth,
                x0: vec![0.0; 3],
            })
        }
        Scenario::StochRegDgt2 => {
            let k = cfg.regressors;
            if k < 2 {
                return Err(Error::config("stoch_reg_dgt2 needs at least two regressors"));
            }
            let diffusion = RegressionDiffusion::from_correlation(1.0, &ar1_correlation(k, cfg.rho))?;
            let model = ModelSpec::stochastic_regression(k, None, diffusion)?;
            let mut alpha = vec![0.0; 3 * k + 1];
            for a in alpha.iter_mut().take(k / 2) {
                *a = 1.0 / k as f64;
            }
            alpha[k] = 2.0;
            for a in alpha.iter_mut().skip(k + 1) {
                *a = 1.0;
            }
            Ok(ScenarioSetup {
                model,
                truth: ParamVector::new(alpha, vec![])?,
                x0: vec![0.0; k + 1],
            })
        }
        Scenario::Ou => {
            let model = ModelSpec::ornstein_uhlenbeck(2, true, None)?;
            Ok(ScenarioSetup {
                model,
                truth: ParamVector::new(vec![1.0, 0.0, 0.5, 1.0], vec![1.0, 1.0])?,
                x0: vec![0.0; 2],
            })
        }
        Scenario::Custom => {
            let mc = cfg.model.as_ref().ok_or_else(|| Error::config("custom scenario needs `model`"))?;
            let model = ModelSpec::from_config(mc)?;
            let truth = cfg.truth.clone().ok_or_else(|| Error::config("custom scenario needs `truth`"))?;
            model.check_theta(&truth).map_err(|e| Error::config(e.to_string()))?;
            let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
            if x0.len() != model.dim() {
                return Err(Error::config("x0 length must equal the model dimension"));
            }
            Ok(ScenarioSetup { model, truth, x0 })
        }
    }
}

/// Method label used in tables.
pub fn method_label(gamma: f64) -> String {
    if gamma == 1.0 {
        "lasso".into()
    } else {
        format!("enet_{gamma}")
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub estimate: Vec<f64>,
    pub accuracy: f64,
    pub contains_true: bool,
    pub exact_match: bool,
    pub lambda: Option<f64>,
    /// Realized and bound errors; only for block-diagonal fits.
    pub bound: Option<crate::diagnostics::BoundCheck>,
    /// Absolute forecast error per horizon.
    pub forecast_errors: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub seed: u64,
    /// `qmle` first, then one entry per γ.
    pub methods: Vec<MethodOutcome>,
    pub information_regularized: bool,
    pub boundary_contact: bool,
}

/// Simulate and fit one replication.
pub fn run_replication(cfg: &StudyConfig, setup: &ScenarioSetup, triple: Triple, seed: u64) -> Result<ReplicationOutcome> {
    let scheme = SamplingScheme::new(triple.n, triple.delta)?;
    let horizons = cfg.forecast.map(|f| horizon_grid(triple.delta, f.h_max)).unwrap_or_default();
    let extra = horizons.last().map_or(0, |h| (h / triple.delta).round() as usize);
    let sim = SimConfig::new(setup.model.clone(), setup.truth.clone(), scheme, setup.x0.clone(), seed)?.with_burn_in(cfg.burn_in);
    let rows = simulate_rows(&sim, triple.n + extra)?;
    let d = setup.model.dim();
    let observed = rows.rows(0, triple.n + 1).into_owned();
    let path = SamplePath::new(scheme, observed)?;
    let x_t = path.last_state();
    let future = |h: f64| -> Vec<f64> {
        let i = triple.n + (h / triple.delta).round() as usize;
        (0..d).map(|j| rows[(i, j)]).collect()
    };

    let ql = QuasiLik::new(&setup.model, &path)?;
    let fit = qmle_fit(&ql, &default_theta_init(&setup.model), &ParamBox::default_for(&setup.model))?;
    let truth_flat = setup.truth.to_flat();
    let p = setup.model.drift_params();
    let norm = cfg.forecast.map(|f| f.norm).unwrap_or_default();

    let score = |est: &[f64], lambda: Option<f64>, bound| -> Result<MethodOutcome> {
        let support = support_metrics_flat(est, &truth_flat, 0.0)?;
        let mut forecast_errors = Vec::with_capacity(horizons.len());
        for &h in &horizons {
            let f = one_step_predict(&setup.model, &est[..p], &x_t, h)?;
            forecast_errors.push(norm.distance(&future(h), &f.value)?);
        }
        Ok(MethodOutcome {
            estimate: est.to_vec(),
            accuracy: support.accuracy,
            contains_true: support.contains_true,
            exact_match: support.exact_match,
            lambda,
            bound,
            forecast_errors,
        })
    };

    let mut methods = vec![score(&fit.theta.to_flat(), None, None)?];
    let weights = adaptive_weights(&fit.theta, &cfg.weight_spec)?;
    for &gamma in &cfg.gammas {
        let mut penalty = PenaltyConfig::new(gamma);
        penalty.weight_spec = cfg.weight_spec;
        let problem = EnetProblem::new(fit.info.g_hat.clone(), fit.theta.clone(), weights.clone(), penalty, cfg.block_diagonal)?;
        let mut path_result = fit_path(&problem)?;
        let index = match cfg.selection {
            SelectionRule::Aic => path_result.apply_aic(&ql)?,
            SelectionRule::Median => path_result.lambda_opt_median,
        };
        let lambda = path_result.lambdas[index];
        let theta_hat = path_result.theta(index);
        let bound = if cfg.block_diagonal {
            Some(check_error_bounds(
                &problem,
                &fit.info.a_diag,
                triple.n,
                triple.delta,
                lambda,
                &theta_hat,
                &setup.truth,
            )?)
        } else {
            None
        };
        methods.push(score(&path_result.coefs[index], Some(lambda), bound)?);
    }
    Ok(ReplicationOutcome {
        index: 0,
        seed,
        methods,
        information_regularized: fit.info.regularized,
        boundary_contact: fit.boundary_contact,
    })
}

/// Aggregates of one method over the successful replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub gamma: Option<f64>,
    pub accuracy: f64,
    pub selection_contains_true: f64,
    pub selection_exact: f64,
    pub mse: Vec<f64>,
    pub estimates: Vec<Summary>,
    /// Fraction of exact zeros per coordinate.
    pub zero_frequency: Vec<f64>,
    /// Root mean squared error of the drift and diffusion blocks.
    pub rmse_alpha: f64,
    pub rmse_beta: Option<f64>,
    pub bound_checks: usize,
    pub bound_violations: usize,
    pub mae: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleReport {
    pub n: usize,
    pub delta: f64,
    pub horizon: f64,
    pub replications: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub regularized_information: usize,
    pub boundary_contacts: usize,
    pub horizons: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    /// Bound-shape overlay for the first Elastic-Net method.
    pub bound_curve: Vec<f64>,
    pub bound_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub param_names: Vec<String>,
    pub truth: Vec<f64>,
    pub drift_dim: usize,
    pub triples: Vec<TripleReport>,
}

impl StudyReport {
    pub fn total_replications(&self) -> usize {
        self.triples.iter().map(|t| t.replications).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.triples.iter().map(|t| t.failures).sum()
    }

    pub fn failure_rate(&self) -> f64 {
        self.total_failures() as f64 / self.total_replications().max(1) as f64
    }

    pub fn method<'a>(&'a self, triple: usize, name: &str) -> Option<&'a MethodSummary> {
        self.triples.get(triple)?.methods.iter().find(|m| m.method == name)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

fn summarize(label: String, gamma: Option<f64>, outcomes: &[&MethodOutcome], truth: &[f64], p: usize, n_horizons: usize) -> MethodSummary {
    let m = truth.len();
    let col = |j: usize| outcomes.iter().map(|o| o.estimate[j]).collect::<Vec<_>>();
    let mse: Vec<f64> = (0..m).map(|j| mean(col(j).into_iter().map(|v| (v - truth[j]).powi(2)))).collect();
    let estimates = (0..m)
        .map(|j| Summary::of(&col(j)).unwrap_or(Summary {
            count: 0,
            mean: f64::NAN,
            sd: f64::NAN,
            se: f64::NAN,
            min: f64::NAN,
            q1: f64::NAN,
            median: f64::NAN,
            q3: f64::NAN,
            max: f64::NAN,
        }))
        .collect();
    let zero_frequency = (0..m).map(|j| mean(outcomes.iter().map(|o| f64::from(u8::from(o.estimate[j] == 0.0))))).collect();
    let rmse_alpha = mse[..p].iter().sum::<f64>().sqrt();
    let rmse_beta = (p < m).then(|| mse[p..].iter().sum::<f64>().sqrt());
    let checks: Vec<_> = outcomes.iter().filter_map(|o| o.bound).collect();
    let mae = (0..n_horizons).map(|h| mean(outcomes.iter().map(|o| o.forecast_errors[h]))).collect();
    MethodSummary {
        method: label,
        gamma,
        accuracy: mean(outcomes.iter().map(|o| o.accuracy)),
        selection_contains_true: mean(outcomes.iter().map(|o| f64::from(u8::from(o.contains_true)))),
        selection_exact: mean(outcomes.iter().map(|o| f64::from(u8::from(o.exact_match)))),
        mse,
        estimates,
        zero_frequency,
        rmse_alpha,
        rmse_beta,
        bound_checks: checks.len(),
        bound_violations: checks.iter().filter(|c| !c.holds()).count(),
        mae,
    }
}

/// Seed of replication `k` in triple `t`.
pub fn replication_seed(master: u64, triple: usize, k: usize) -> u64 {
    derive_seed(derive_seed(master, triple as u64), k as u64)
}

/// Run every triple of the study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let setup = scenario_setup(cfg)?;
    let truth = setup.truth.to_flat();
    let p = setup.model.drift_params();
    let mut triples = Vec::with_capacity(cfg.triples.len());
    for (t, &triple) in cfg.triples.iter().enumerate() {
        let results: Vec<Result<ReplicationOutcome>> = (0..cfg.replications)
            .into_par_iter()
            .map(|k| {
                let seed = replication_seed(cfg.seed, t, k);
                run_replication(cfg, &setup, triple, seed).map(|mut r| {
                    r.index = k;
                    r
                })
            })
            .collect();
        let mut ok = Vec::new();
        let mut failure_messages = Vec::new();
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) => ok.push(r),
                Err(e) => {
                    log::warn!("replication {k} (n = {}) failed: {e}", triple.n);
                    failure_messages.push(format!("replication {k}: {e}"));
                }
            }
        }
        let horizons = cfg.forecast.map(|f| horizon_grid(triple.delta, f.h_max)).unwrap_or_default();
        let mut methods = Vec::new();
        let labels = std::iter::once(("qmle".to_string(), None)).chain(cfg.gammas.iter().map(|&g| (method_label(g), Some(g))));
        for (j, (label, gamma)) in labels.enumerate() {
            let outs: Vec<&MethodOutcome> = ok.iter().map(|r| &r.methods[j]).collect();
            methods.push(summarize(label, gamma, &outs, &truth, p, horizons.len()));
        }
        let horizon = triple.n as f64 * triple.delta;
        let (bound_curve, bound_scale) = match (&cfg.forecast, methods.iter().find(|m| m.gamma.is_some_and(|g| g < 1.0))) {
            (Some(f), Some(enet)) if !ok.is_empty() && horizons.iter().any(|&h| h > 0.0) => {
                let scale = calibrate_bound(&horizons, &enet.mae, p, horizon, f.calibration)?;
                (horizons.iter().map(|&h| mae_bound_shape(h, p, horizon, scale)).collect(), Some(scale))
            }
            _ => (Vec::new(), None),
        };
        triples.push(TripleReport {
            n: triple.n,
            delta: triple.delta,
            horizon,
            replications: cfg.replications,
            failures: failure_messages.len(),
            failure_messages,
            regularized_information: ok.iter().filter(|r| r.information_regularized).count(),
            boundary_contacts: ok.iter().filter(|r| r.boundary_contact).count(),
            horizons,
            methods,
            bound_curve,
            bound_scale,
        });
    }
    Ok(StudyReport {
        config: cfg.clone(),
        param_names: setup.model.param_names().to_vec(),
        truth,
        drift_dim: p,
        triples,
    })
}

/// Support table: one row per (n, method).
pub fn write_selection_csv<W: std::io::Write>(report: &StudyReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "delta",
        "T",
        "method",
        "gamma",
        "accuracy",
        "selection_contains_true",
        "selection_exact",
        "replications",
        "failures",
    ])?;
    for t in &report.triples {
        for m in &t.methods {
            w.write_record([
                t.n.to_string(),
                fmt_f64(t.delta),
                fmt_f64(t.horizon),
                m.method.clone(),
                m.gamma.map(fmt_f64).unwrap_or_else(|| "NA".into()),
                fmt_f64(m.accuracy),
                fmt_f64(m.selection_contains_true),
                fmt_f64(m.selection_exact),
                t.replications.to_string(),
                t.failures.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Estimate distribution table: MSE, mean, SD, SE and quartiles per parameter.
pub fn write_distribution_csv<W: std::io::Write>(report: &StudyReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n", "delta", "method", "param", "true", "mse", "avg", "sd", "se", "q25", "median", "q75", "zero_freq",
    ])?;
    for t in &report.triples {
        for m in &t.methods {
            for (j, name) in report.param_names.iter().enumerate() {
                let s = &m.estimates[j];
                w.write_record([
                    t.n.to_string(),
                    fmt_f64(t.delta),
                    m.method.clone(),
                    name.clone(),
                    fmt_f64(report.truth[j]),
                    fmt_f64(m.mse[j]),
                    fmt_f64(s.mean),
                    fmt_f64(s.sd),
                    fmt_f64(s.se),
                    fmt_f64(s.q1),
                    fmt_f64(s.median),
                    fmt_f64(s.q3),
                    fmt_f64(m.zero_frequency[j]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// MAE rows for one triple: the first Elastic-Net method, the LASSO and
/// the QMLE. Missing methods are written as NaN.
pub fn mae_rows(report: &TripleReport) -> Vec<MaeRow> {
    let find = |pred: &dyn Fn(&MethodSummary) -> bool| report.methods.iter().find(|m| pred(m));
    let enet = find(&|m| m.gamma.is_some_and(|g| g < 1.0));
    let lasso = find(&|m| m.gamma == Some(1.0));
    let qmle = find(&|m| m.gamma.is_none());
    let at = |m: Option<&MethodSummary>, i: usize| m.map_or(f64::NAN, |m| m.mae[i]);
    (0..report.horizons.len())
        .map(|i| MaeRow {
            h: report.horizons[i],
            mae_enet: at(enet, i),
            mae_lasso: at(lasso, i),
            mae_qmle: at(qmle, i),
            bound: report.bound_curve.get(i).copied().unwrap_or(f64::NAN),
        })
        .collect()
}

/// Write `summary.json`, `selection.csv`, `distribution.csv` and one
/// `mae_n<n>.csv` per triple when forecasts were requested.
pub fn write_study_outputs(report: &StudyReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let summary = dir.join("summary.json");
    save_json(report, &summary)?;
    written.push(summary);
    let sel = dir.join("selection.csv");
    write_selection_csv(report, std::fs::File::create(&sel)?)?;
    written.push(sel);
    let dist = dir.join("distribution.csv");
    write_distribution_csv(report, std::fs::File::create(&dist)?)?;
    written.push(dist);
    if report.config.forecast.is_some() {
        for t in &report.triples {
            let file = dir.join(format!("mae_n{}.csv", t.n));
            crate::predict::write_mae_csv(&mae_rows(t), std::fs::File::create(&file)?)?;
            written.push(file);
        }
    }
    Ok(written)
}
