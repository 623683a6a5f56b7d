#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use sde_enet::model::{CustomModel, RegressionDiffusion};
use sde_enet::qmle::QuasiLik;
use sde_enet::sim::{ensemble, euler_path, SimConfig};
use sde_enet::{ModelSpec, ParamVector, SamplePath, SamplingScheme};

pub fn ou2() -> ModelSpec {
    ModelSpec::ornstein_uhlenbeck(2, true, None).unwrap()
}

pub fn ou2_path(n: usize, delta: f64, seed: u64) -> SamplePath {
    let theta = ParamVector::new(vec![1.0, 0.0, 0.5, 1.0], vec![1.0, 1.0]).unwrap();
    let cfg = SimConfig::new(ou2(), theta, SamplingScheme::new(n, delta).unwrap(), vec![0.3, -0.2], seed).unwrap();
    euler_path(&cfg).unwrap()
}

pub fn regression_d2() -> ModelSpec {
    let block = DMatrix::from_row_slice(2, 2, &[0.8487, 0.5316, 0.5316, 0.8487]);
    ModelSpec::stochastic_regression(2, None, RegressionDiffusion::Fixed { beta0: 1.0, block }).unwrap()
}

pub fn regression_path(n: usize, delta: f64, seed: u64) -> SamplePath {
    let theta = ParamVector::new(vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0], vec![]).unwrap();
    let cfg = SimConfig::new(regression_d2(), theta, SamplingScheme::new(n, delta).unwrap(), vec![0.0; 3], seed).unwrap();
    euler_path(&cfg).unwrap()
}

/// `dX = (a0 − a1 X) dt + e^{b0} √(1 + b1 X²) dW`, nonlinear in β and
/// state dependent, with no Jacobians supplied.
#[derive(Debug)]
pub struct Heteroscedastic;

impl CustomModel for Heteroscedastic {
    fn dim(&self) -> usize {
        1
    }
    fn drift_params(&self) -> usize {
        2
    }
    fn diffusion_params(&self) -> usize {
        2
    }
    fn drift(&self, x: &[f64], a: &[f64]) -> DVector<f64> {
        DVector::from_element(1, a[0] - a[1] * x[0])
    }
    fn diffusion(&self, x: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, b[0].exp() * (1.0 + b[1] * x[0] * x[0]).sqrt())
    }
}

pub fn hetero() -> ModelSpec {
    ModelSpec::custom(Arc::new(Heteroscedastic)).unwrap()
}

pub fn hetero_path(n: usize, seed: u64) -> SamplePath {
    let theta = ParamVector::new(vec![0.5, 1.0], vec![-0.2, 0.3]).unwrap();
    let cfg = SimConfig::new(hetero(), theta, SamplingScheme::new(n, 0.05).unwrap(), vec![0.5], seed).unwrap();
    euler_path(&cfg).unwrap()
}

// Hand-written contrasts, sharing nothing with the library evaluators.

pub fn oracle_ou2(path: &SamplePath, theta: &ParamVector) -> f64 {
    let (b, s) = (&theta.alpha, &theta.beta);
    let dt = path.delta();
    let v = path.values();
    let (s1, s2) = (s[0] * s[0], s[1] * s[1]);
    let mut total = 0.0;
    for i in 1..=path.n() {
        let (x, y) = (v[(i - 1, 0)], v[(i - 1, 1)]);
        let r1 = v[(i, 0)] - x + dt * (b[0] * x + b[1] * y);
        let r2 = v[(i, 1)] - y + dt * (b[2] * x + b[3] * y);
        total += (s1 * s2).ln() + (r1 * r1 / s1 + r2 * r2 / s2) / dt;
    }
    -0.5 * total
}

pub fn oracle_regression(path: &SamplePath, alpha: &[f64]) -> f64 {
    let dt = path.delta();
    let v = path.values();
    let (b11, b12) = (0.8487_f64, 0.5316_f64);
    // Lower block of σσᵀ and its inverse, by hand.
    let (g11, g12) = (b11 * b11 + b12 * b12, 2.0 * b11 * b12);
    let det = g11 * g11 - g12 * g12;
    let (i11, i12) = (g11 / det, -g12 / det);
    let mut total = 0.0;
    for i in 1..=path.n() {
        let (y, x1, x2) = (v[(i - 1, 0)], v[(i - 1, 1)], v[(i - 1, 2)]);
        let b0 = alpha[0] * x1 + alpha[1] * x2 - alpha[2] * y;
        let b1 = alpha[3] - alpha[5] * x1;
        let b2 = alpha[4] - alpha[6] * x2;
        let r0 = v[(i, 0)] - y - dt * b0;
        let r1 = v[(i, 1)] - x1 - dt * b1;
        let r2 = v[(i, 2)] - x2 - dt * b2;
        let quad = r0 * r0 + i11 * (r1 * r1 + r2 * r2) + 2.0 * i12 * r1 * r2;
        total += det.ln() + quad / dt;
    }
    -0.5 * total
}

pub fn oracle_hetero(path: &SamplePath, theta: &ParamVector) -> f64 {
    let (a, b) = (&theta.alpha, &theta.beta);
    let dt = path.delta();
    let v = path.values();
    let mut total = 0.0;
    for i in 1..=path.n() {
        let x = v[(i - 1, 0)];
        let var = (2.0 * b[0]).exp() * (1.0 + b[1] * x * x);
        let r = v[(i, 0)] - x - dt * (a[0] - a[1] * x);
        total += var.ln() + r * r / (var * dt);
    }
    -0.5 * total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn fd_gradient(ql: &QuasiLik<'_>, theta: &ParamVector) -> DVector<f64> {
    let flat = theta.to_flat();
    let p = theta.p();
    DVector::from_iterator(
        flat.len(),
        (0..flat.len()).map(|k| {
            let h = 1e-5 * (1.0 + flat[k].abs());
            let mut up = flat.clone();
            let mut down = flat.clone();
            up[k] += h;
            down[k] -= h;
            let fu = ql.quasi_loglik(&ParamVector::from_flat(&up, p).unwrap()).unwrap();
            let fd = ql.quasi_loglik(&ParamVector::from_flat(&down, p).unwrap()).unwrap();
            (fu - fd) / (2.0 * h)
        }),
    )
}

pub fn fd_hessian(ql: &QuasiLik<'_>, theta: &ParamVector) -> DMatrix<f64> {
    let flat = theta.to_flat();
    let p = theta.p();
    let m = flat.len();
    let mut h = DMatrix::zeros(m, m);
    for k in 0..m {
        let step = 1e-5 * (1.0 + flat[k].abs());
        let mut up = flat.clone();
        let mut down = flat.clone();
        up[k] += step;
        down[k] -= step;
        let gu = ql.quasi_grad(&ParamVector::from_flat(&up, p).unwrap()).unwrap();
        let gd = ql.quasi_grad(&ParamVector::from_flat(&down, p).unwrap()).unwrap();
        h.set_column(k, &((gu - gd) / (2.0 * step)));
    }
    h
}

/// Relative max-abs deviations of the analytic gradient and Hessian from
/// central differences.
pub fn derivative_errors(ql: &QuasiLik<'_>, theta: &ParamVector) -> (f64, f64) {
    let g = ql.quasi_grad(theta).unwrap();
    let g_fd = fd_gradient(ql, theta);
    let h = ql.quasi_hessian(theta).unwrap();
    let h_fd = fd_hessian(ql, theta);
    (
        (&g - &g_fd).amax() / g_fd.amax().max(1.0),
        (&h - &h_fd).amax() / h_fd.amax().max(1.0),
    )
}


/// Least-squares slope of `ln y` on `ln x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy)]
pub struct StationaryCheck {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
    pub mean_ok: bool,
    pub var_ok: bool,
}

/// Compare a sample with N(0, 1/2) using batch-means standard errors, which
/// account for serial correlation along a path.
pub fn ou_stationary_check(xs: &[f64], batches: usize) -> StationaryCheck {
    let len = xs.len() / batches;
    let stats: Vec<(f64, f64)> = (0..batches)
        .map(|b| {
            let chunk = &xs[b * len..(b + 1) * len];
            let m = chunk.iter().sum::<f64>() / len as f64;
            let v = chunk.iter().map(|x| x * x).sum::<f64>() / len as f64;
            (m, v)
        })
        .collect();
    let se = |v: &[f64]| -> (f64, f64) {
        let k = v.len() as f64;
        let m = v.iter().sum::<f64>() / k;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
        (m, (s2 / k).sqrt())
    };
    let (mean, mean_se) = se(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
    let (second, var_se) = se(&stats.iter().map(|s| s.1).collect::<Vec<_>>());
    let var = second - mean * mean;
    StationaryCheck {
        mean,
        mean_se,
        var,
        var_se,
        mean_ok: mean.abs() <= 3.0 * mean_se,
        var_ok: (var - 0.5).abs() <= 3.0 * var_se,
    }
}

/// Cross-sectional mean and variance of `X_T` over an OU ensemble started
/// at 0, with their i.i.d. standard errors under the N(0, 1/2) law.
pub fn ou_ensemble_check(replications: usize, n: usize, delta: f64, seed: u64) -> StationaryCheck {
    let model = ModelSpec::ornstein_uhlenbeck(1, true, None).unwrap();
    let theta = ParamVector::new(vec![1.0], vec![1.0]).unwrap();
    let cfg = SimConfig::new(model, theta, SamplingScheme::new(n, delta).unwrap(), vec![0.0], seed).unwrap();
    let last: Vec<f64> = ensemble(&cfg, replications).unwrap().iter().map(|p| p.last_state()[0]).collect();
    let k = last.len() as f64;
    let mean = last.iter().sum::<f64>() / k;
    let var = last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let mean_se = (0.5 / k).sqrt();
    let var_se = 0.5 * (2.0 / (k - 1.0)).sqrt();
    StationaryCheck {
        mean,
        mean_se,
        var,
        var_se,
        mean_ok: mean.abs() <= 3.0 * mean_se,
        var_ok: (var - 0.5).abs() <= 3.0 * var_se,
    }
}

/// One-step mean and variance errors of the simulated Euler transition of
/// `dX = −X dt + dW` from `x = 1`, against the exact law
/// `N(e^{−Δ}, (1 − e^{−2Δ})/2)`. The exact draw is coupled to the
/// simulator's own Gaussian increment, so Monte-Carlo noise cancels.
pub fn euler_weak_errors(deltas: &[f64], paths: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let model = ModelSpec::ornstein_uhlenbeck(1, true, None).unwrap();
    let theta = ParamVector::new(vec![1.0], vec![1.0]).unwrap();
    let mut mean_err = Vec::new();
    let mut var_err = Vec::new();
    for &dt in deltas {
        let cfg = SimConfig::new(model.clone(), theta.clone(), SamplingScheme::new(1, dt).unwrap(), vec![1.0], seed).unwrap();
        let euler: Vec<f64> = ensemble(&cfg, paths).unwrap().iter().map(|p| p.values()[(1, 0)]).collect();
        let s = ((1.0 - (-2.0 * dt).exp()) / 2.0).sqrt();
        let exact: Vec<f64> = euler
            .iter()
            .map(|x| {
                let z = (x - (1.0 - dt)) / dt.sqrt();
                (-dt).exp() + s * z
            })
            .collect();
        let moments = |v: &[f64]| {
            let k = v.len() as f64;
            let m = v.iter().sum::<f64>() / k;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0))
        };
        let (me, ve) = moments(&euler);
        let (mx, vx) = moments(&exact);
        mean_err.push((me - mx).abs());
        var_err.push((ve - vx).abs());
    }
    (mean_err, var_err)
}

/// Euler path of `model` at `theta`.
pub fn simulate(model: &ModelSpec, theta: ParamVector, n: usize, delta: f64, x0: Vec<f64>, seed: u64) -> SamplePath {
    let cfg = SimConfig::new(model.clone(), theta, SamplingScheme::new(n, delta).unwrap(), x0, seed).unwrap();
    euler_path(&cfg).unwrap()
}

// Random Elastic-Net instances and the solver checks run on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sde_enet::enet::{
    cd_solve, cd_solve_with, lambda_max, lasso_reference, pgd_solve, pgd_solve_with, EnetProblem, PenaltyConfig,
    SolverOptions,
};

pub const GAMMAS: [f64; 3] = [0.25, 0.5, 1.0];

/// A random problem with `m` coordinates, `p` of them drift, SPD Gram
/// `AᵀA/m + εI`, centre entries N(0, 4) and weights in [0.2, 3].
pub fn random_problem(seed: u64, m: usize, gamma: f64) -> EnetProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut g = a.transpose() * &a / m as f64;
    for k in 0..m {
        g[(k, k)] += 0.05 + 0.5 * rng.random::<f64>();
    }
    let p = rng.random_range(0..=m);
    let flat: Vec<f64> = (0..m).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let theta = ParamVector::from_flat(&flat, p).unwrap();
    let w = DVector::from_fn(m, |_, _| rng.random_range(0.2..3.0));
    EnetProblem::new(g, theta, w, PenaltyConfig::new(gamma), false).unwrap()
}

fn zeros_like(problem: &EnetProblem) -> ParamVector {
    ParamVector::zeros(problem.drift_dim(), problem.dim() - problem.drift_dim())
}

#[derive(Debug, Clone, Default)]
pub struct SolverCheck {
    pub cd_vs_pgd: f64,
    pub kkt: f64,
    pub zero_above_max: bool,
    pub nonzero_below_max: bool,
    /// Only for γ = 1.
    pub lasso_ref: Option<f64>,
    pub stabilized: f64,
    pub probe_ok: bool,
    pub pgd_monotone: bool,
}

pub fn tight() -> SolverOptions {
    SolverOptions {
        tol: 1e-12,
        max_iter: 100_000,
    }
}

/// Run every solver-level property at `λ = frac · λ_max`.
pub fn check_solvers(problem: &EnetProblem, frac: f64, probe_seed: u64) -> SolverCheck {
    let lmax = lambda_max(problem).unwrap();
    let lambda = frac * lmax;
    let start = zeros_like(problem);
    let cd = cd_solve(problem, lambda, &start).unwrap().to_dvector();
    let pgd = pgd_solve(problem, lambda, &start).unwrap().to_dvector();
    let kkt = problem.kkt_residual(&cd, lambda).max(problem.kkt_residual(&pgd, lambda));

    let above = cd_solve(problem, 1.01 * lmax, &start).unwrap().to_dvector();
    let above_pgd = pgd_solve(problem, lmax, &start).unwrap().to_dvector();
    let at_max = cd_solve(problem, lmax, &start).unwrap().to_dvector();
    let zero_above_max = above.iter().chain(above_pgd.iter()).chain(at_max.iter()).all(|&v| v == 0.0);
    let below = cd_solve(problem, 0.9 * lmax, &start).unwrap().to_dvector();
    let nonzero_below_max = below.iter().any(|&v| v != 0.0);

    let precise = cd_solve_with(problem, lambda, &start, tight()).unwrap().theta;
    let lasso_ref = (problem.penalty.gamma_mix == 1.0).then(|| {
        let (l1, _) = problem.levels(lambda);
        let b = problem.gram() * problem.center();
        let r = lasso_reference(problem.gram(), &b, &l1, 1e-12, 100_000).unwrap();
        (r - &precise).amax()
    });
    let (q, b, l1) = problem.stabilized_gram(lambda);
    let stab = lasso_reference(&q, &b, &l1, 1e-12, 100_000).unwrap();
    let stabilized = (stab - &precise).amax();

    let f_hat = problem.objective(&precise, lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let m = problem.dim();
    let probe_ok = (0..1000).all(|_| {
        let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius = 0.1 * rng.random::<f64>().powf(1.0 / m as f64);
        let probe = &precise + dir.normalize() * radius;
        f_hat <= problem.objective(&probe, lambda) + 1e-12 * (1.0 + f_hat.abs())
    });

    let trace = pgd_solve_with(problem, lambda, &start, SolverOptions::default()).unwrap().trace;
    let pgd_monotone = trace.windows(2).all(|w| w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs()));

    SolverCheck {
        cd_vs_pgd: (&cd - &pgd).amax(),
        kkt,
        zero_above_max,
        nonzero_below_max,
        lasso_ref,
        stabilized,
        probe_ok,
        pgd_monotone,
    }
}

/// Zooming grid search for a 2-d objective: a lattice over a box that
/// contains the minimizer, then ever finer lattices around the best point.
/// Every lattice contains the axes, where the kinks are.
pub fn grid_minimizer_2d(problem: &EnetProblem, lambda: f64) -> DVector<f64> {
    assert_eq!(problem.dim(), 2);
    let c = problem.center();
    let radius = c.amax() + 1.0;
    let search = |centre: (f64, f64), half: f64, step: f64| -> (f64, f64) {
        let k = (half / step).ceil() as i64;
        let (i0, j0) = ((centre.0 / step).round() as i64, (centre.1 / step).round() as i64);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in (i0 - k)..=(i0 + k) {
            for j in (j0 - k)..=(j0 + k) {
                let x = DVector::from_column_slice(&[i as f64 * step, j as f64 * step]);
                let f = problem.objective(&x, lambda);
                if f < best.0 {
                    best = (f, x[0], x[1]);
                }
            }
        }
        (best.1, best.2)
    };
    // Zoom in: each level re-grids a window a few cells wide around the
    // previous best point.
    let mut half = radius;
    let mut best = search((0.0, 0.0), half, half / 40.0);
    while half / 40.0 > 2e-5 {
        half = 4.0 * half / 40.0;
        best = search(best, half, half / 40.0);
    }
    DVector::from_column_slice(&[best.0, best.1])
}
