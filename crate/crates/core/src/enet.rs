//! Adaptive Elastic-Net on the least-squares approximation of the contrast.
//!
//! For a penalty level λ the solvers minimize
//!
//! ```text
//! F(θ) = ½ (θ − θ̃)ᵀ Ĝ (θ − θ̃) + Σ_k l1_k |θ_k| + ½ Σ_k l2_k θ_k²
//! l1_k = λ γ s_k w_k,    l2_k = λ (1 − γ)   (or a fixed per-block level)
//! ```
//!
//! where `w` holds the adaptive weights and `s_k` an optional per-block
//! LASSO scale. Coordinates with `w_k = 0` are left unpenalized.
//! The coordinate update is
//! `θ_k ← S_{l1_k}(Ĝ_kk θ_k − [Ĝ(θ − θ̃)]_k) / (Ĝ_kk + l2_k)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{eigen_extremes, power_iteration, spd_cholesky};
use crate::model::ParamVector;
use crate::qmle::QuasiLik;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// `1 / |θ̃_k|^δ`
    PlainPower,
    /// `1 / (|θ̃_k| + a)^δ`
    Shifted,
    /// `1 / max(|θ̃_k|, a)^δ`
    Floored,
}

/// Adaptive weight recipe. `delta1`/`a_n` apply to drift coordinates,
/// `delta2`/`b_n` to diffusion coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub variant: WeightVariant,
    #[serde(default = "one")]
    pub delta1: f64,
    #[serde(default = "one")]
    pub delta2: f64,
    #[serde(default)]
    pub a_n: f64,
    #[serde(default)]
    pub b_n: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            variant: WeightVariant::PlainPower,
            delta1: 1.0,
            delta2: 1.0,
            a_n: 0.0,
            b_n: 0.0,
        }
    }
}

/// Separate levels for the α and β blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockLevels {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    CoordinateDescent,
    ProximalGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    /// γ ∈ (0, 1]; γ = 1 is the adaptive LASSO.
    pub gamma_mix: f64,
    #[serde(default)]
    pub weight_spec: WeightSpec,
    /// Strictly decreasing λ values; empty means an automatic grid.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    /// Fixed Ridge levels `(λ₂, γ₂)` replacing `λ(1 − γ)` per block.
    #[serde(default)]
    pub ridge_split: Option<BlockLevels>,
    /// Multipliers of `λγ` per block for the LASSO part.
    #[serde(default)]
    pub lasso_split: Option<BlockLevels>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_min_ratio")]
    pub lambda_min_ratio: f64,
    /// Flat indices excluded from both penalties.
    #[serde(default)]
    pub unpenalized: Vec<usize>,
    #[serde(default)]
    pub solver: SolverKind,
}

fn default_grid_size() -> usize {
    100
}

fn default_min_ratio() -> f64 {
    1e-4
}

impl PenaltyConfig {
    pub fn new(gamma_mix: f64) -> Self {
        Self {
            gamma_mix,
            weight_spec: WeightSpec::default(),
            lambda_grid: Vec::new(),
            ridge_split: None,
            lasso_split: None,
            grid_size: default_grid_size(),
            lambda_min_ratio: default_min_ratio(),
            unpenalized: Vec::new(),
            solver: SolverKind::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_mix > 0.0 && self.gamma_mix <= 1.0) {
            return Err(Error::config(format!("gamma_mix must lie in (0, 1], got {}", self.gamma_mix)));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::config("lambda_grid entries must be positive and finite"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("lambda_grid must be strictly decreasing"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("grid_size must be at least 1"));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::config("lambda_min_ratio must lie in (0, 1)"));
        }
        let ws = &self.weight_spec;
        if !(ws.delta1 > 0.0 && ws.delta2 > 0.0) {
            return Err(Error::config("weight exponents delta1, delta2 must be positive"));
        }
        if !(ws.a_n >= 0.0 && ws.b_n >= 0.0) {
            return Err(Error::config("weight stabilizers a_n, b_n must be non-negative"));
        }
        for levels in [self.ridge_split, self.lasso_split].into_iter().flatten() {
            if !(levels.alpha >= 0.0 && levels.beta >= 0.0 && levels.alpha.is_finite() && levels.beta.is_finite()) {
                return Err(Error::config("block levels must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Adaptive weights `W = diag(κ, π)` without the global λ factor.
pub fn adaptive_weights(theta_tilde: &ParamVector, spec: &WeightSpec) -> Result<DVector<f64>> {
    let p = theta_tilde.p();
    let flat = theta_tilde.to_flat();
    let mut w = DVector::zeros(flat.len());
    for (k, &v) in flat.iter().enumerate() {
        let (delta, stab) = if k < p { (spec.delta1, spec.a_n) } else { (spec.delta2, spec.b_n) };
        let base = match spec.variant {
            WeightVariant::PlainPower => {
                if v == 0.0 {
                    return Err(Error::config(format!(
                        "initial estimate coordinate {k} is exactly zero; plain_power weights are undefined, use the shifted or floored variant"
                    )));
                }
                v.abs()
            }
            WeightVariant::Shifted => v.abs() + stab,
            WeightVariant::Floored => v.abs().max(stab),
        };
        if base <= 0.0 {
            return Err(Error::config(format!(
                "weight base for coordinate {k} is zero; increase the stabilizer"
            )));
        }
        w[k] = base.powf(-delta);
    }
    Ok(w)
}

/// `sign(z) (|z| − μ)_+`, with `0` at `|z| = μ`.
pub fn soft_threshold(z: f64, mu: f64) -> f64 {
    if z > mu {
        z - mu
    } else if z < -mu {
        z + mu
    } else {
        0.0
    }
}

/// Minimizer of `½(x − u)² + λγws|u| + ½λ(1−γ)s u²`.
pub fn prox_enet(x: f64, s: f64, lambda: f64, gamma_mix: f64, w: f64) -> f64 {
    soft_threshold(x, lambda * gamma_mix * s * w) / (1.0 + lambda * s * (1.0 - gamma_mix))
}

/// One Elastic-Net problem around a fixed centre.
#[derive(Debug, Clone)]
pub struct EnetProblem {
    pub g_hat: DMatrix<f64>,
    pub theta_tilde: ParamVector,
    pub weights: DVector<f64>,
    pub penalty: PenaltyConfig,
    /// Drop the αβ cross blocks of `Ĝ`.
    pub block_diagonal: bool,
    gram: DMatrix<f64>,
}

impl EnetProblem {
    pub fn new(
        g_hat: DMatrix<f64>,
        theta_tilde: ParamVector,
        weights: DVector<f64>,
        penalty: PenaltyConfig,
        block_diagonal: bool,
    ) -> Result<Self> {
        penalty.validate()?;
        let m = theta_tilde.len();
        if g_hat.nrows() != m || g_hat.ncols() != m {
            return Err(Error::arg(format!("G_hat must be {m}x{m}")));
        }
        if weights.len() != m {
            return Err(Error::arg(format!("weights must have length {m}")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("weights must be finite and non-negative"));
        }
        if g_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("G_hat has non-finite entries"));
        }
        if let Some(&k) = penalty.unpenalized.iter().find(|&&k| k >= m) {
            return Err(Error::arg(format!("unpenalized index {k} out of range")));
        }
        let p = theta_tilde.p();
        let mut gram = g_hat.clone();
        if block_diagonal {
            for i in 0..m {
                for j in 0..m {
                    if (i < p) != (j < p) {
                        gram[(i, j)] = 0.0;
                    }
                }
            }
        }
        let mut weights = weights;
        for &k in &penalty.unpenalized {
            weights[k] = 0.0;
        }
        Ok(Self {
            g_hat,
            theta_tilde,
            weights,
            penalty,
            block_diagonal,
            gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_tilde.len()
    }

    pub fn drift_dim(&self) -> usize {
        self.theta_tilde.p()
    }

    /// `Ĝ` with cross blocks removed when block-diagonal.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn center(&self) -> DVector<f64> {
        self.theta_tilde.to_dvector()
    }

    fn is_penalized(&self, k: usize) -> bool {
        self.weights[k] > 0.0
    }

    /// Per-coordinate LASSO and Ridge levels at λ.
    pub fn levels(&self, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.dim();
        let p = self.drift_dim();
        let g = self.penalty.gamma_mix;
        let mut l1 = DVector::zeros(m);
        let mut l2 = DVector::zeros(m);
        for k in (0..m).filter(|&k| self.is_penalized(k)) {
            let alpha_block = k < p;
            let scale = self
                .penalty
                .lasso_split
                .map_or(1.0, |s| if alpha_block { s.alpha } else { s.beta });
            l1[k] = lambda * g * scale * self.weights[k];
            l2[k] = match self.penalty.ridge_split {
                Some(r) => {
                    if alpha_block {
                        r.alpha
                    } else {
                        r.beta
                    }
                }
                None => lambda * (1.0 - g),
            };
        }
        (l1, l2)
    }

    /// Objective at θ for penalty level λ.
    pub fn objective(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let (l1, l2) = self.levels(lambda);
        objective_with(&self.gram, &self.center(), &l1, &l2, theta)
    }

    /// Largest KKT violation at θ.
    pub fn kkt_residual(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let (l1, l2) = self.levels(lambda);
        kkt_with(&self.gram, &self.center(), &l1, &l2, theta)
    }

    /// Goodness-of-fit term `(θ − θ̃)ᵀ Ĝ (θ − θ̃)`.
    pub fn quadratic_loss(&self, theta: &DVector<f64>) -> f64 {
        let e = theta - self.center();
        e.dot(&(&self.gram * &e))
    }

    /// Gram and linear term of the equivalent LASSO-only problem
    /// `½θᵀ(Ĝ + C)θ − θᵀĜθ̃ + Σ l1_k|θ_k|`, `C = diag(l2)`.
    pub fn stabilized_gram(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (l1, l2) = self.levels(lambda);
        let mut q = self.gram.clone();
        for k in 0..self.dim() {
            q[(k, k)] += l2[k];
        }
        (q, &self.gram * self.center(), l1)
    }
}

fn objective_with(g: &DMatrix<f64>, c: &DVector<f64>, l1: &DVector<f64>, l2: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let e = x - c;
    let mut f = 0.5 * e.dot(&(g * &e));
    for k in 0..x.len() {
        f += l1[k] * x[k].abs() + 0.5 * l2[k] * x[k] * x[k];
    }
    f
}

fn kkt_with(g: &DMatrix<f64>, c: &DVector<f64>, l1: &DVector<f64>, l2: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let r = g * (x - c);
    (0..x.len())
        .map(|k| {
            if x[k] != 0.0 {
                (r[k] + l1[k] * x[k].signum() + l2[k] * x[k]).abs()
            } else {
                (r[k].abs() - l1[k]).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest λ with an all-zero penalized solution.
///
/// Unpenalized coordinates are first profiled out, so with every weight
/// positive this is `‖(γ s W)⁻¹ Ĝ θ̃‖_∞`.
pub fn lambda_max(problem: &EnetProblem) -> Result<f64> {
    let m = problem.dim();
    let pen: Vec<usize> = (0..m).filter(|&k| problem.is_penalized(k)).collect();
    if pen.is_empty() {
        return Err(Error::arg("lambda_max is undefined: no coordinate is penalized"));
    }
    let free: Vec<usize> = (0..m).filter(|&k| !problem.is_penalized(k)).collect();
    let g = problem.gram();
    let c = problem.center();
    let x = unpenalized_profile(g, &c, &free)?;
    let r = g * (&x - &c);
    let (unit, _) = problem.levels(1.0);
    for &k in &pen {
        if unit[k] <= 0.0 {
            return Err(Error::arg(format!(
                "lambda_max is undefined: coordinate {k} has a zero LASSO scale"
            )));
        }
    }
    let mut lmax = pen.iter().map(|&k| r[k].abs() / unit[k]).fold(0.0, f64::max);
    if lmax == 0.0 {
        return Err(Error::arg("lambda_max is zero: the centre is already sparse"));
    }
    // Nudge up so that λ_max·γ·s·w_k ≥ |r_k| holds in floating point.
    while pen.iter().any(|&k| lmax * unit[k] < r[k].abs()) {
        lmax = lmax.next_up();
    }
    Ok(lmax)
}

/// Minimizer over the free coordinates with all others at zero.
fn unpenalized_profile(g: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    let m = c.len();
    let mut x = DVector::zeros(m);
    if free.is_empty() {
        return Ok(x);
    }
    // G_FF (x_F − c_F) = G_FP c_P
    let gff = DMatrix::from_fn(free.len(), free.len(), |i, j| g[(free[i], free[j])]);
    let pen: Vec<usize> = (0..m).filter(|k| !free.contains(k)).collect();
    let rhs = DVector::from_fn(free.len(), |i, _| pen.iter().map(|&j| g[(free[i], j)] * c[j]).sum::<f64>());
    let chol = spd_cholesky(&gff).ok_or_else(|| Error::arg("unpenalized block of G_hat is not positive definite"))?;
    let shift = chol.solve(&rhs);
    for (i, &k) in free.iter().enumerate() {
        x[k] = c[k] + shift[i];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the largest coordinate change is `≤ tol (1 + ‖θ‖_∞)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub theta: DVector<f64>,
    pub iterations: usize,
    /// Objective after each accepted proximal-gradient step.
    pub trace: Vec<f64>,
}

fn check_start(problem: &EnetProblem, start: &ParamVector) -> Result<()> {
    if start.p() != problem.drift_dim() || start.len() != problem.dim() {
        return Err(Error::arg("starting point has the wrong block dimensions"));
    }
    Ok(())
}

/// Cyclic coordinate descent.
pub fn cd_solve(problem: &EnetProblem, lambda: f64, start: &ParamVector) -> Result<ParamVector> {
    let out = cd_solve_with(problem, lambda, start, SolverOptions::default())?;
    ParamVector::from_flat(out.theta.as_slice(), problem.drift_dim())
}

pub fn cd_solve_with(problem: &EnetProblem, lambda: f64, start: &ParamVector, opts: SolverOptions) -> Result<SolveOutcome> {
    check_start(problem, start)?;
    check_lambda(lambda)?;
    let (l1, l2) = problem.levels(lambda);
    coordinate_descent(problem.gram(), &problem.center(), &l1, &l2, start.to_dvector(), opts)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::arg(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(())
}

fn coordinate_descent(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    l1: &DVector<f64>,
    l2: &DVector<f64>,
    mut x: DVector<f64>,
    opts: SolverOptions,
) -> Result<SolveOutcome> {
    let m = c.len();
    if let Some(k) = (0..m).find(|&k| !(g[(k, k)] > 0.0)) {
        return Err(Error::Solver {
            message: format!("G_hat diagonal entry {k} is not positive"),
            last: x.as_slice().to_vec(),
            grid_index: None,
        });
    }
    if l1.iter().chain(l2.iter()).all(|&v| v == 0.0) {
        return Ok(SolveOutcome {
            theta: c.clone(),
            iterations: 0,
            trace: Vec::new(),
        });
    }
    for sweep in 1..=opts.max_iter {
        let mut r = g * (&x - c);
        let mut max_change: f64 = 0.0;
        for k in 0..m {
            let gkk = g[(k, k)];
            let z = gkk * x[k] - r[k];
            let new = soft_threshold(z, l1[k]) / (gkk + l2[k]);
            let step = new - x[k];
            if step != 0.0 {
                r.axpy(step, &g.column(k), 1.0);
                x[k] = new;
                max_change = max_change.max(step.abs());
            }
        }
        if max_change <= opts.tol * (1.0 + x.amax()) {
            return Ok(SolveOutcome {
                theta: x,
                iterations: sweep,
                trace: Vec::new(),
            });
        }
    }
    Err(Error::Solver {
        message: format!("coordinate descent did not converge in {} sweeps", opts.max_iter),
        last: x.as_slice().to_vec(),
        grid_index: None,
    })
}

/// Monotone accelerated proximal gradient with adaptive restart.
pub fn pgd_solve(problem: &EnetProblem, lambda: f64, start: &ParamVector) -> Result<ParamVector> {
    let out = pgd_solve_with(problem, lambda, start, SolverOptions::default())?;
    ParamVector::from_flat(out.theta.as_slice(), problem.drift_dim())
}

pub fn pgd_solve_with(problem: &EnetProblem, lambda: f64, start: &ParamVector, opts: SolverOptions) -> Result<SolveOutcome> {
    check_start(problem, start)?;
    check_lambda(lambda)?;
    let (l1, l2) = problem.levels(lambda);
    proximal_gradient(problem.gram(), &problem.center(), &l1, &l2, start.to_dvector(), opts)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lipschitz_constant(g: &DMatrix<f64>) -> f64 {
    power_iteration(g, 50, 1e-10).unwrap_or_else(|| eigen_extremes(g).1)
}

fn proximal_gradient(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    l1: &DVector<f64>,
    l2: &DVector<f64>,
    start: DVector<f64>,
    opts: SolverOptions,
) -> Result<SolveOutcome> {
    let m = c.len();
    if l1.iter().chain(l2.iter()).all(|&v| v == 0.0) {
        return Ok(SolveOutcome {
            theta: c.clone(),
            iterations: 0,
            trace: Vec::new(),
        });
    }
    let lip = lipschitz_constant(g);
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(Error::Solver {
            message: "G_hat has no positive eigenvalue".into(),
            last: start.as_slice().to_vec(),
            grid_index: None,
        });
    }
    // The smooth part ½⟨Ĝ,(θ−θ̃)^⊗2⟩ has Lipschitz gradient with constant τ_max.
    let s = 1.0 / lip;
    let prox = |v: &DVector<f64>| DVector::from_fn(m, |k, _| soft_threshold(v[k], s * l1[k]) / (1.0 + s * l2[k]));

    let mut x = start;
    let mut fx = objective_with(g, c, l1, l2, &x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut trace = vec![fx];
    for iter in 1..=opts.max_iter {
        let grad = g * (&y - c);
        let z = prox(&(&y - grad * s));
        let fz = objective_with(g, c, l1, l2, &z);
        let gap = (&z - &y).amax();
        if gap <= opts.tol * (1.0 + z.amax()) {
            // `z` is the prox-gradient fixed point up to tolerance.
            let (theta, f) = if fz <= fx { (z, fz) } else { (x, fx) };
            trace.push(f);
            return Ok(SolveOutcome {
                theta,
                iterations: iter,
                trace,
            });
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // A plain prox-gradient step from `x` always descends in exact
        // arithmetic, so a rise there is rounding noise and is accepted.
        let plain = y == x;
        let descent = fz <= fx || plain;
        let x_new = if descent { z.clone() } else { x.clone() };
        let f_new = if descent { fz } else { fx };
        // Restart momentum when it points uphill.
        let uphill = (&y - &z).dot(&(&z - &x)) > 0.0;
        if !descent || uphill {
            t = 1.0;
            y = x_new.clone();
        } else {
            y = &x_new + (&z - &x_new) * (t / t_next) + (&x_new - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_new;
        fx = f_new;
        trace.push(fx);
    }
    Err(Error::Solver {
        message: format!("proximal gradient did not converge in {} iterations", opts.max_iter),
        last: x.as_slice().to_vec(),
        grid_index: None,
    })
}

/// Plain weighted-LASSO coordinate descent on `½θᵀQθ − bᵀθ + Σ l1_k|θ_k|`,
/// recomputing each partial residual from scratch. Kept deliberately
/// simple so it can serve as an independent baseline.
pub fn lasso_reference(q: &DMatrix<f64>, b: &DVector<f64>, l1: &DVector<f64>, tol: f64, max_sweeps: usize) -> Result<DVector<f64>> {
    let m = b.len();
    let mut x: DVector<f64> = DVector::zeros(m);
    for _ in 0..max_sweeps {
        let mut change: f64 = 0.0;
        for k in 0..m {
            let mut z = b[k];
            for j in 0..m {
                if j != k {
                    z -= q[(k, j)] * x[j];
                }
            }
            let new = soft_threshold(z, l1[k]) / q[(k, k)];
            change = change.max((new - x[k]).abs());
            x[k] = new;
        }
        if change <= tol * (1.0 + x.amax()) {
            return Ok(x);
        }
    }
    Err(Error::Solver {
        message: "reference LASSO did not converge".into(),
        last: x.as_slice().to_vec(),
        grid_index: None,
    })
}

/// Log-spaced grid from `λ_max` down to `ratio · λ_max`.
pub fn auto_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (size - 1) as f64;
    (0..size)
        .map(|k| if k == 0 { lambda_max } else { lambda_max * (step * k as f64).exp() })
        .collect()
}

/// Solutions along a decreasing λ grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    /// One row per grid point, flat `(α, β)` order.
    pub coefs: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    /// Quadratic loss `⟨Ĝ, (θ̂ − θ̃)^⊗2⟩`.
    pub loss: Vec<f64>,
    pub df: Vec<usize>,
    /// `None` where ℓ_n could not be evaluated or AIC was not computed.
    pub aic: Vec<Option<f64>>,
    pub kkt_residual: Vec<f64>,
    pub iterations: Vec<usize>,
    pub lambda_max: Option<f64>,
    pub lambda_opt_aic: Option<usize>,
    pub lambda_opt_median: usize,
    pub gamma_mix: f64,
    pub block_diagonal: bool,
    pub drift_dim: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PathResult {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn theta(&self, index: usize) -> ParamVector {
        ParamVector::from_flat(&self.coefs[index], self.drift_dim).expect("rows have model dimensions")
    }

    /// CSV with header `lambda,coef_1..coef_m,objective,aic,df`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        use crate::io::fmt_f64;
        let m = self.coefs.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["lambda".to_string()];
        header.extend((1..=m).map(|k| format!("coef_{k}")));
        header.extend(["objective", "aic", "df"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.lambdas[i])];
            row.extend(self.coefs[i].iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(self.objective[i]));
            row.push(self.aic[i].map(fmt_f64).unwrap_or_else(|| "NA".into()));
            row.push(self.df[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fill AIC values and the AIC-selected index.
    pub fn apply_aic(&mut self, ql: &QuasiLik<'_>) -> Result<usize> {
        let sel = select_lambda_aic(self, ql)?;
        self.aic = sel.values;
        self.warnings.extend(sel.warnings);
        self.lambda_opt_aic = Some(sel.index);
        Ok(sel.index)
    }
}

fn solve_block(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    l1: &DVector<f64>,
    l2: &DVector<f64>,
    start: DVector<f64>,
    solver: SolverKind,
) -> Result<SolveOutcome> {
    let opts = SolverOptions::default();
    match solver {
        SolverKind::CoordinateDescent => coordinate_descent(g, c, l1, l2, start, opts),
        SolverKind::ProximalGradient => proximal_gradient(g, c, l1, l2, start, opts),
    }
}

fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

fn sub_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Solve the whole λ path with warm starts.
pub fn fit_path(problem: &EnetProblem) -> Result<PathResult> {
    let m = problem.dim();
    let p = problem.drift_dim();
    let (grid, lmax) = if problem.penalty.lambda_grid.is_empty() {
        let lmax = lambda_max(problem)?;
        (auto_grid(lmax, problem.penalty.grid_size, problem.penalty.lambda_min_ratio), Some(lmax))
    } else {
        (problem.penalty.lambda_grid.clone(), lambda_max(problem).ok())
    };

    let blocks: Vec<Vec<usize>> = if problem.block_diagonal && p < m {
        vec![(0..p).collect(), (p..m).collect()]
    } else {
        vec![(0..m).collect()]
    };
    let center = problem.center();
    let grams: Vec<_> = blocks.iter().map(|b| sub_matrix(problem.gram(), b)).collect();
    let centers: Vec<_> = blocks.iter().map(|b| sub_vector(&center, b)).collect();

    // Cold start: zero penalized part, unpenalized part profiled.
    let free: Vec<usize> = (0..m).filter(|&k| !problem.is_penalized(k)).collect();
    let mut current = unpenalized_profile(problem.gram(), &center, &free)?;

    let mut out = PathResult {
        lambdas: grid.clone(),
        coefs: Vec::with_capacity(grid.len()),
        objective: Vec::with_capacity(grid.len()),
        loss: Vec::with_capacity(grid.len()),
        df: Vec::with_capacity(grid.len()),
        aic: vec![None; grid.len()],
        kkt_residual: Vec::with_capacity(grid.len()),
        iterations: Vec::with_capacity(grid.len()),
        lambda_max: lmax,
        lambda_opt_aic: None,
        lambda_opt_median: 0,
        gamma_mix: problem.penalty.gamma_mix,
        block_diagonal: problem.block_diagonal,
        drift_dim: p,
        warnings: Vec::new(),
    };
    for (i, &lambda) in grid.iter().enumerate() {
        let (l1, l2) = problem.levels(lambda);
        let mut iters = 0;
        for (b, idx) in blocks.iter().enumerate() {
            let sol = solve_block(
                &grams[b],
                &centers[b],
                &sub_vector(&l1, idx),
                &sub_vector(&l2, idx),
                sub_vector(&current, idx),
                problem.penalty.solver,
            )
            .map_err(|e| e.at_grid_index(i))?;
            iters += sol.iterations;
            for (j, &k) in idx.iter().enumerate() {
                current[k] = sol.theta[j];
            }
        }
        out.objective.push(objective_with(problem.gram(), &center, &l1, &l2, &current));
        out.kkt_residual.push(kkt_with(problem.gram(), &center, &l1, &l2, &current));
        out.loss.push(problem.quadratic_loss(&current));
        out.df.push(current.iter().filter(|v| **v != 0.0).count());
        out.iterations.push(iters);
        out.coefs.push(current.as_slice().to_vec());
    }
    for i in 1..out.len() {
        if out.df[i] < out.df[i - 1] {
            let msg = format!("active set shrank from {} to {} at grid point {i}", out.df[i - 1], out.df[i]);
            log::debug!("{msg}");
        }
    }
    out.lambda_opt_median = select_lambda_median(&out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AicSelection {
    pub index: usize,
    pub values: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// `AIC(λ) = −2 ℓ_n(θ̂(λ)) + 2 df(λ)`, minimized with ties going to the
/// larger λ. Grid points where ℓ_n fails are skipped with a warning.
pub fn select_lambda_aic(path: &PathResult, ql: &QuasiLik<'_>) -> Result<AicSelection> {
    if path.is_empty() {
        return Err(Error::arg("empty path"));
    }
    let mut values = Vec::with_capacity(path.len());
    let mut warnings = Vec::new();
    for i in 0..path.len() {
        match ql.quasi_loglik(&path.theta(i)) {
            Ok(l) if l.is_finite() => values.push(Some(-2.0 * l + 2.0 * path.df[i] as f64)),
            Ok(_) | Err(_) => {
                warnings.push(format!("quasi-likelihood not evaluable at grid point {i}; excluded from AIC"));
                values.push(None);
            }
        }
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    let index = argmin_first(&values).ok_or_else(|| Error::Solver {
        message: "AIC could not be evaluated at any grid point".into(),
        last: path.coefs.last().cloned().unwrap_or_default(),
        grid_index: None,
    })?;
    Ok(AicSelection { index, values, warnings })
}

/// First index of the minimum; the grid is decreasing so this prefers larger λ.
fn argmin_first(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Median-range rule on the path's quadratic loss.
pub fn select_lambda_median(path: &PathResult) -> usize {
    median_rule(&path.lambdas, &path.loss)
}

/// Largest λ whose loss is within the median gap of the minimum loss.
pub fn median_rule(lambdas: &[f64], losses: &[f64]) -> usize {
    assert_eq!(lambdas.len(), losses.len(), "lambdas and losses must align");
    assert!(!lambdas.is_empty(), "median rule needs at least one point");
    let l_min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gaps: Vec<f64> = losses.iter().map(|l| l - l_min).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    let median = if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    };
    (0..n)
        .filter(|&i| losses[i] <= l_min + median)
        .max_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]))
        .expect("the minimizer always qualifies")
}
