//! One-step Euler-mean forecasts and their prediction-error curves.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::{ModelSpec, SamplePath};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub horizon: f64,
    pub base: Vec<f64>,
    pub value: Vec<f64>,
}

/// `X̂_{T+h} = x_T + h b(x_T, α̂)`.
///
/// `h = 0` is accepted and returns `x_T`, which is convenient for curves
/// that start at the origin.
pub fn one_step_predict(model: &ModelSpec, alpha_hat: &[f64], x_t: &[f64], h: f64) -> Result<Forecast> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::arg(format!("horizon must be finite and non-negative, got {h}")));
    }
    let drift = model.drift_eval(x_t, alpha_hat)?;
    let value: Vec<f64> = x_t.iter().zip(drift.iter()).map(|(x, b)| x + h * b).collect();
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::model("forecast is not finite"));
    }
    Ok(Forecast {
        horizon: h,
        base: x_t.to_vec(),
        value,
    })
}

/// Forecasts from the last observation at each horizon; each is a single
/// Euler-mean step of size `h`, not an iterated one.
pub fn rolling_forecast(model: &ModelSpec, alpha_hat: &[f64], path: &SamplePath, horizons: &[f64]) -> Result<Vec<Forecast>> {
    let delta = path.delta();
    for &h in horizons {
        let steps = h / delta;
        if !(h >= 0.0) || (steps - steps.round()).abs() > 1e-8 * steps.max(1.0) {
            return Err(Error::arg(format!("horizon {h} is not a non-negative multiple of delta = {delta}")));
        }
    }
    let x_t = path.last_state();
    horizons.iter().map(|&h| one_step_predict(model, alpha_hat, &x_t, h)).collect()
}

/// Horizons `0, Δ, 2Δ, …` up to and including `h_max`.
pub fn horizon_grid(delta: f64, h_max: f64) -> Vec<f64> {
    let steps = (h_max / delta + 1e-9).floor() as usize;
    (0..=steps).map(|k| k as f64 * delta).collect()
}

/// Norm used for absolute prediction errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ErrorNorm {
    #[default]
    Euclidean,
    /// Absolute error of a single state coordinate (0-based).
    Coordinate(usize),
}

impl ErrorNorm {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::arg("states have different lengths"));
        }
        match *self {
            ErrorNorm::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
            ErrorNorm::Coordinate(j) => {
                if j >= a.len() {
                    return Err(Error::arg(format!("coordinate {j} out of range")));
                }
                Ok((a[j] - b[j]).abs())
            }
        }
    }
}

/// `(1/N) Σ_k |X^{(k)} − X̂^{(k)}|` for one horizon.
pub fn empirical_mae(truths: &[Vec<f64>], preds: &[Forecast], norm: ErrorNorm) -> Result<f64> {
    if truths.len() != preds.len() {
        return Err(Error::arg(format!(
            "{} truths but {} forecasts",
            truths.len(),
            preds.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::arg("no forecasts to score"));
    }
    let mut total = 0.0;
    for (t, f) in truths.iter().zip(preds) {
        total += norm.distance(t, &f.value)?;
    }
    Ok(total / truths.len() as f64)
}

/// `scale (√h + h√p/√T + T^{−1/2})`.
pub fn mae_bound_shape(h: f64, p: usize, t_n: f64, scale: f64) -> f64 {
    scale * shape_unit(h, p, t_n)
}

fn shape_unit(h: f64, p: usize, t_n: f64) -> f64 {
    h.sqrt() + h * (p as f64).sqrt() / t_n.sqrt() + 1.0 / t_n.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Match the empirical curve at the first positive horizon.
    #[default]
    Anchor,
    /// Least squares of the curve on the shape.
    LeastSquares,
    /// Smallest scale that dominates the curve at every positive horizon.
    Envelope,
}

/// Scale constant for [`mae_bound_shape`] fitted to an empirical curve.
pub fn calibrate_bound(horizons: &[f64], mae: &[f64], p: usize, t_n: f64, method: Calibration) -> Result<f64> {
    if horizons.len() != mae.len() || horizons.is_empty() {
        return Err(Error::arg("horizons and MAE values must align and be non-empty"));
    }
    match method {
        Calibration::Anchor => {
            let i = horizons
                .iter()
                .position(|&h| h > 0.0)
                .ok_or_else(|| Error::arg("no positive horizon to anchor the bound"))?;
            Ok(mae[i] / shape_unit(horizons[i], p, t_n))
        }
        Calibration::Envelope => horizons
            .iter()
            .zip(mae)
            .filter(|(&h, _)| h > 0.0)
            .map(|(&h, &m)| m / shape_unit(h, p, t_n))
            .reduce(f64::max)
            .ok_or_else(|| Error::arg("no positive horizon to calibrate the bound")),
        Calibration::LeastSquares => {
            let s = DVector::from_iterator(horizons.len(), horizons.iter().map(|&h| shape_unit(h, p, t_n)));
            let y = DVector::from_column_slice(mae);
            Ok(s.dot(&y) / s.dot(&s))
        }
    }
}

/// One row of a forecast table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub h: f64,
    pub mae_enet: f64,
    pub mae_lasso: f64,
    pub mae_qmle: f64,
    pub bound: f64,
}

/// CSV with header `h,mae_enet,mae_lasso,mae_qmle,bound`.
pub fn write_mae_csv<W: std::io::Write>(rows: &[MaeRow], out: W) -> Result<()> {
    use crate::io::fmt_f64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "mae_enet", "mae_lasso", "mae_qmle", "bound"])?;
    for r in rows {
        w.write_record([r.h, r.mae_enet, r.mae_lasso, r.mae_qmle, r.bound].map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}
