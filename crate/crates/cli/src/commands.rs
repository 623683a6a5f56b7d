use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};

use sde_enet::diagnostics::{check_error_bounds, support_metrics};
use sde_enet::enet::{adaptive_weights, fit_path, EnetProblem, PathResult};
use sde_enet::io::{fmt_f64, load_json, load_path_csv, save_json, write_path_csv};
use sde_enet::predict::{horizon_grid, rolling_forecast};
use sde_enet::qmle::{default_theta_init, qmle_fit, ParamBox, QmleFit, QuasiLik};
use sde_enet::sim::{euler_path, SimConfig};
use sde_enet::study::{run_study, write_study_outputs, SelectionRule, StudyConfig};
use sde_enet::{Error, ModelSpec, SamplePath, SamplingScheme};

use crate::config::{resolve, FailureReport, FitConfig, FitReport, PredictConfig, QmleSummary, SimulateConfig};

/// Raised when estimation itself fails, as opposed to bad input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct EstimationFailure(pub String);

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn simulate(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimulateConfig = load_json(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let setup = cfg.setup()?;
    let scheme = SamplingScheme::new(cfg.n, cfg.delta)?;
    let sim = SimConfig::new(setup.model, setup.truth, scheme, setup.x0, cfg.seed)?.with_burn_in(cfg.burn_in);
    let path = euler_path(&sim).map_err(|e| match e {
        Error::Simulation { .. } => anyhow::Error::new(EstimationFailure(e.to_string())),
        other => other.into(),
    })?;
    let mut w = output(out)?;
    write_path_csv(&path, &mut w)?;
    w.flush()?;
    let summary = format!(
        "n = {}, delta = {}, T = {}, d = {}",
        path.n(),
        path.delta(),
        path.n() as f64 * path.delta(),
        path.dim()
    );
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

struct Fitted {
    model: ModelSpec,
    data: SamplePath,
    qmle: QmleFit,
    problem: EnetProblem,
    path: PathResult,
    index: usize,
}

fn write_failure(out: Option<&Path>, stage: &str, err: &Error) {
    let last = match err {
        Error::Estimation { best, .. } => best.clone(),
        Error::Solver { last, .. } => last.clone(),
        _ => Vec::new(),
    };
    let report = FailureReport {
        stage: stage.into(),
        error: err.to_string(),
        last_iterate: last,
    };
    if let Some(p) = out {
        if let Err(e) = save_json(&report, p) {
            warn!("could not write diagnostics to {}: {e}", p.display());
        }
    } else if let Ok(text) = serde_json::to_string_pretty(&report) {
        eprintln!("{text}");
    }
}

fn estimation_failure(out: Option<&Path>, stage: &str, err: Error) -> anyhow::Error {
    match err {
        Error::Estimation { .. } | Error::Solver { .. } | Error::Model(_) => {
            write_failure(out, stage, &err);
            anyhow::Error::new(EstimationFailure(format!("{stage}: {err}")))
        }
        other => other.into(),
    }
}

fn run_fit(config: &Path, cfg: &FitConfig, out: Option<&Path>) -> Result<Fitted> {
    let data_file = resolve(config, &cfg.data);
    let data = load_path_csv(&data_file).with_context(|| format!("reading {}", data_file.display()))?;
    let model = ModelSpec::from_config(&cfg.model)?;
    if data.dim() != model.dim() {
        return Err(Error::Config(format!("data has {} state columns, model expects {}", data.dim(), model.dim())).into());
    }
    let init = match &cfg.theta_init {
        Some(t) => {
            model.check_theta(t)?;
            t.clone()
        }
        None => default_theta_init(&model),
    };
    let ql = QuasiLik::new(&model, &data)?;
    let qmle = qmle_fit(&ql, &init, &ParamBox::default_for(&model)).map_err(|e| estimation_failure(out, "qmle", e))?;
    info!("QMLE converged in {} iterations, loglik {}", qmle.iterations, qmle.loglik);
    let weights = adaptive_weights(&qmle.theta, &cfg.penalty.weight_spec)?;
    let problem = EnetProblem::new(
        qmle.info.g_hat.clone(),
        qmle.theta.clone(),
        weights,
        cfg.penalty.clone(),
        cfg.block_diagonal,
    )?;
    let mut path = fit_path(&problem).map_err(|e| estimation_failure(out, "path", e))?;
    // A one-point grid needs no selection, and AIC may not exist there
    // (θ = 0 often has a degenerate diffusion).
    let index = match cfg.selection {
        _ if path.len() == 1 => 0,
        SelectionRule::Aic => path.apply_aic(&ql).map_err(|e| estimation_failure(out, "aic", e))?,
        SelectionRule::Median => path.lambda_opt_median,
    };
    Ok(Fitted {
        model,
        data,
        qmle,
        problem,
        path,
        index,
    })
}

pub fn fit(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: FitConfig = load_json(config).with_context(|| format!("reading {}", config.display()))?;
    let f = run_fit(config, &cfg, out)?;
    let estimate = f.path.theta(f.index);
    let lambda = f.path.lambdas[f.index];
    let names = f.model.param_names();
    let flat = estimate.to_flat();
    let support = (0..flat.len()).filter(|&k| flat[k] != 0.0).map(|k| names[k].clone()).collect();
    let (support_metrics, error_bounds) = match &cfg.truth {
        Some(truth) => {
            f.model.check_theta(truth)?;
            let metrics = support_metrics(&estimate, truth, 0.0)?;
            let bounds = if cfg.block_diagonal {
                Some(check_error_bounds(
                    &f.problem,
                    &f.qmle.info.a_diag,
                    f.data.n(),
                    f.data.delta(),
                    lambda,
                    &estimate,
                    truth,
                )?)
            } else {
                info!("error bounds are reported for block-diagonal fits only");
                None
            };
            (Some(metrics), bounds)
        }
        None => (None, None),
    };
    let gamma = cfg.penalty.gamma_mix;
    let report = FitReport {
        method: if gamma == 1.0 { "adaptive_lasso" } else { "adaptive_elastic_net" }.into(),
        gamma_mix: gamma,
        model: cfg.model.clone(),
        param_names: names.to_vec(),
        n: f.data.n(),
        delta: f.data.delta(),
        qmle: QmleSummary {
            theta: f.qmle.theta.clone(),
            loglik: f.qmle.loglik,
            iterations: f.qmle.iterations,
            boundary_contact: f.qmle.boundary_contact,
            information_regularized: f.qmle.info.regularized,
        },
        selection: cfg.selection,
        lambda_index: f.index,
        lambda,
        kkt_residual: f.path.kkt_residual[f.index],
        estimate,
        support,
        support_metrics,
        error_bounds,
        path: f.path,
    };
    match out {
        Some(p) => save_json(&report, p)?,
        None => {
            let mut w = output(None)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    println_or_err(out, &format!("{}: lambda = {}, support = {:?}", report.method, report.lambda, report.support));
    Ok(())
}

fn println_or_err(out: Option<&Path>, msg: &str) {
    if out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
}

pub fn path(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: FitConfig = load_json(config).with_context(|| format!("reading {}", config.display()))?;
    let f = run_fit(config, &cfg, out)?;
    let mut w = output(out)?;
    f.path.write_csv(&mut w)?;
    w.flush()?;
    println_or_err(out, &format!("{} grid points, selected index {}", f.path.len(), f.index));
    Ok(())
}

pub fn predict(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: PredictConfig = load_json(config).with_context(|| format!("reading {}", config.display()))?;
    let data_file = resolve(config, &cfg.data);
    let data = load_path_csv(&data_file).with_context(|| format!("reading {}", data_file.display()))?;
    let fit_file = resolve(config, &cfg.fit);
    let report: FitReport = load_json(&fit_file).with_context(|| format!("reading {}", fit_file.display()))?;
    let model = ModelSpec::from_config(&report.model)?;
    let horizons = match (&cfg.horizons, cfg.h_max) {
        (Some(h), None) => h.clone(),
        (None, Some(h_max)) => horizon_grid(data.delta(), h_max),
        (None, None) => horizon_grid(data.delta(), 1.0),
        (Some(_), Some(_)) => return Err(Error::Config("give either `horizons` or `h_max`, not both".into()).into()),
    };
    if horizons.iter().any(|&h| h > 1.0) {
        warn!("horizons beyond 1.0 requested; the one-step predictor degrades with h");
    }
    let forecasts = rolling_forecast(&model, &report.estimate.alpha, &data, &horizons)?;
    let mut w = output(out)?;
    let mut header = vec!["h".to_string()];
    header.extend((1..=data.dim()).map(|j| format!("x{j}")));
    writeln!(w, "{}", header.join(","))?;
    for f in &forecasts {
        let row: Vec<String> = std::iter::once(f.horizon).chain(f.value.iter().copied()).map(fmt_f64).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Failure share above which `mc` exits nonzero.
const MAX_FAILURE_RATE: f64 = 0.05;

pub fn mc(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: StudyConfig = load_json(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.unwrap_or(Path::new("mc_output"));
    let report = run_study(&cfg)?;
    let files = write_study_outputs(&report, dir).with_context(|| format!("writing into {}", dir.display()))?;
    for t in &report.triples {
        println!("n = {}, delta = {}: {} replications, {} failed", t.n, t.delta, t.replications, t.failures);
        for m in &t.methods {
            println!(
                "  {:<12} accuracy {:.3}  selection {:.3}  exact {:.3}",
                m.method, m.accuracy, m.selection_contains_true, m.selection_exact
            );
        }
    }
    for f in &files {
        info!("wrote {}", f.display());
    }
    let rate = report.failure_rate();
    if rate > MAX_FAILURE_RATE {
        return Err(EstimationFailure(format!(
            "{} of {} replications failed ({:.1}%)",
            report.total_failures(),
            report.total_replications(),
            100.0 * rate
        ))
        .into());
    }
    Ok(())
}
