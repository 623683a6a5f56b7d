//! Support recovery, Monte-Carlo error summaries and the deterministic
//! error bounds of the block-diagonal Elastic-Net estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::enet::EnetProblem;
use crate::linalg::{eigen_extremes, spd_cholesky};
use crate::model::ParamVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub estimated: Vec<usize>,
    pub truth: Vec<usize>,
    /// Fraction of coordinates classified correctly as zero or nonzero.
    pub accuracy: f64,
    /// Every true nonzero is selected.
    pub contains_true: bool,
    /// Selected set equals the true support.
    pub exact_match: bool,
}

/// Compare supports; `|θ̂_k| > zero_tol` counts as selected.
pub fn support_metrics(theta_hat: &ParamVector, theta_true: &ParamVector, zero_tol: f64) -> Result<SupportReport> {
    support_metrics_flat(&theta_hat.to_flat(), &theta_true.to_flat(), zero_tol)
}

pub fn support_metrics_flat(hat: &[f64], truth: &[f64], zero_tol: f64) -> Result<SupportReport> {
    if hat.len() != truth.len() {
        return Err(Error::arg(format!("estimate has {} coordinates, truth {}", hat.len(), truth.len())));
    }
    if hat.is_empty() {
        return Err(Error::arg("empty parameter vector"));
    }
    let estimated: Vec<usize> = (0..hat.len()).filter(|&k| hat[k].abs() > zero_tol).collect();
    let true_set: Vec<usize> = (0..truth.len()).filter(|&k| truth[k] != 0.0).collect();
    let correct = (0..hat.len())
        .filter(|&k| (hat[k].abs() > zero_tol) == (truth[k] != 0.0))
        .count();
    let contains_true = true_set.iter().all(|k| estimated.contains(k));
    Ok(SupportReport {
        exact_match: estimated == true_set,
        estimated,
        truth: true_set,
        accuracy: correct as f64 / hat.len() as f64,
        contains_true,
    })
}

/// Per-coordinate `(1/N) Σ_k (θ̂^{(k)}_j − θ_{0,j})²`.
pub fn empirical_mse(estimates: &[ParamVector], theta_true: &ParamVector) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = estimates.iter().map(ParamVector::to_flat).collect();
    empirical_mse_flat(&rows, &theta_true.to_flat())
}

pub fn empirical_mse_flat(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::arg("no estimates"));
    }
    let mut mse = vec![0.0; truth.len()];
    for est in estimates {
        if est.len() != truth.len() {
            return Err(Error::arg("estimate and truth lengths differ"));
        }
        for (j, (e, t)) in est.iter().zip(truth).enumerate() {
            mse[j] += (e - t) * (e - t);
        }
    }
    let n = estimates.len() as f64;
    Ok(mse.into_iter().map(|v| v / n).collect())
}

/// Mean, standard error and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sd = var.sqrt();
        Some(Self {
            count: n,
            mean,
            sd,
            se: sd / (n as f64).sqrt(),
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[n - 1],
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `2/(r τ_min + l2) · (l2|θ₀| + r τ_max |θ̃ − θ₀| + l1 |w|)` with `r` the
/// block rate (`nΔ` for drift, `n` for diffusion).
#[allow(clippy::too_many_arguments)]
fn block_bound(d_hat: &DMatrix<f64>, rate: f64, l1: f64, l2: f64, weights: &[f64], theta0: &[f64], theta_tilde: &[f64]) -> Result<f64> {
    let k = d_hat.nrows();
    if d_hat.ncols() != k || weights.len() != k || theta0.len() != k || theta_tilde.len() != k {
        return Err(Error::arg("bound inputs have inconsistent dimensions"));
    }
    if spd_cholesky(d_hat).is_none() {
        return Err(Error::arg("scaled information block is not positive definite"));
    }
    if !(l1 >= 0.0 && l2 >= 0.0 && rate > 0.0) {
        return Err(Error::arg("penalty levels must be non-negative and the rate positive"));
    }
    let (tmin, tmax) = eigen_extremes(d_hat);
    let num = l2 * norm(theta0) + rate * tmax * diff_norm(theta_tilde, theta0) + l1 * norm(weights);
    Ok(2.0 * num / (rate * tmin + l2))
}

/// Drift-block error bound; `lambda1 · κ` are the LASSO levels and
/// `lambda2` the Ridge level of the block.
#[allow(clippy::too_many_arguments)]
pub fn error_bound_alpha(
    d_hat_aa: &DMatrix<f64>,
    n: usize,
    delta: f64,
    lambda1: f64,
    lambda2: f64,
    kappa: &[f64],
    alpha0: &[f64],
    alpha_tilde: &[f64],
) -> Result<f64> {
    block_bound(d_hat_aa, n as f64 * delta, lambda1, lambda2, kappa, alpha0, alpha_tilde)
}

/// Diffusion-block error bound with levels `gamma1 · π` and `gamma2`.
#[allow(clippy::too_many_arguments)]
pub fn error_bound_beta(
    d_hat_bb: &DMatrix<f64>,
    n: usize,
    gamma1: f64,
    gamma2: f64,
    pi: &[f64],
    beta0: &[f64],
    beta_tilde: &[f64],
) -> Result<f64> {
    block_bound(d_hat_bb, n as f64, gamma1, gamma2, pi, beta0, beta_tilde)
}

/// Realized errors and bounds for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub alpha_error: f64,
    pub alpha_bound: f64,
    pub beta_error: Option<f64>,
    pub beta_bound: Option<f64>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.alpha_error <= self.alpha_bound
            && match (self.beta_error, self.beta_bound) {
                (Some(e), Some(b)) => e <= b,
                _ => true,
            }
    }
}

/// Evaluate both block bounds for the solution at `lambda`.
///
/// `a_diag` is the rate scaling used for `D̂ = A Ĝ A`; the Gram of
/// `problem` is the one the bound refers to.
pub fn check_error_bounds(
    problem: &EnetProblem,
    a_diag: &DVector<f64>,
    n: usize,
    delta: f64,
    lambda: f64,
    theta_hat: &ParamVector,
    theta0: &ParamVector,
) -> Result<BoundCheck> {
    let p = problem.drift_dim();
    let m = problem.dim();
    if a_diag.len() != m || theta_hat.len() != m || theta0.len() != m {
        return Err(Error::arg("dimensions do not match the problem"));
    }
    let g = problem.gram();
    let (l1, l2) = problem.levels(lambda);
    let tilde = problem.theta_tilde.to_flat();
    let hat = theta_hat.to_flat();
    let truth = theta0.to_flat();
    let d_block = |lo: usize, hi: usize| DMatrix::from_fn(hi - lo, hi - lo, |i, j| a_diag[lo + i] * g[(lo + i, lo + j)] * a_diag[lo + j]);
    // λ₁|κ| is the norm of the per-coordinate LASSO levels; pass them as
    // weights with unit multiplier.
    let block_l2 = |lo: usize, hi: usize| -> Result<f64> {
        let lv: Vec<f64> = (lo..hi).map(|k| l2[k]).collect();
        let first = lv[0];
        if lv.iter().any(|v| (v - first).abs() > 1e-15 * first.abs().max(1.0)) {
            return Err(Error::arg("bounds need one Ridge level per block"));
        }
        Ok(first)
    };
    let alpha_bound = error_bound_alpha(
        &d_block(0, p),
        n,
        delta,
        1.0,
        block_l2(0, p)?,
        &l1.as_slice()[..p],
        &truth[..p],
        &tilde[..p],
    )?;
    let alpha_error = diff_norm(&hat[..p], &truth[..p]);
    let (beta_error, beta_bound) = if p < m {
        let b = error_bound_beta(&d_block(p, m), n, 1.0, block_l2(p, m)?, &l1.as_slice()[p..], &truth[p..], &tilde[p..])?;
        (Some(diff_norm(&hat[p..], &truth[p..])), Some(b))
    } else {
        (None, None)
    };
    Ok(BoundCheck {
        alpha_error,
        alpha_bound,
        beta_error,
        beta_bound,
    })
}
