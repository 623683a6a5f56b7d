//! Gaussian quasi-log-likelihood of the Euler scheme and the initial
//! estimator θ̃ that maximizes it.
//!
//! ```text
//! ℓ_n(θ) = −½ Σᵢ { log det Σ(X_{i−1}, β) + Δ⁻¹ rᵢᵀ Σ⁻¹(X_{i−1}, β) rᵢ },
//! rᵢ = X_i − X_{i−1} − Δ b(X_{i−1}, α).
//! ```
//!
//! Derivatives are analytic whenever the model is linear in its
//! parameters (both built-in families). Other models get an analytic
//! gradient from their Jacobians and a finite-difference Hessian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{eigen_extremes, spd_cholesky, symmetrize};
use crate::model::{gram_of, ModelSpec, ParamVector, SamplePath};
use crate::{Error, Result};

/// Contrast of a model on one observed path.
#[derive(Debug, Clone, Copy)]
pub struct QuasiLik<'a> {
    model: &'a ModelSpec,
    path: &'a SamplePath,
}

/// Per-state diffusion quantities shared by value and derivatives.
struct DiffusionTerms {
    sigma_inv: DMatrix<f64>,
    logdet: f64,
    /// `∂σ/∂β_k`.
    dsigma: Vec<DMatrix<f64>>,
    /// `∂Σ/∂β_k = E_k σᵀ + σ E_kᵀ`.
    dgram: Vec<DMatrix<f64>>,
    /// `tr(Σ⁻¹ ∂_kΣ)`.
    trace_p: Vec<f64>,
    /// `tr(Σ⁻¹ ∂²_{kl}Σ) − tr(Σ⁻¹∂_lΣ Σ⁻¹∂_kΣ)`, filled only for Hessians.
    trace_hess: Option<DMatrix<f64>>,
}

impl DiffusionTerms {
    fn new(model: &ModelSpec, x: &[f64], beta: &[f64], order: u8) -> Result<Self> {
        let sigma = model.diffusion_unchecked(x, beta);
        let gram = gram_of(&sigma);
        let chol = spd_cholesky(&gram).ok_or_else(|| {
            Error::model("diffusion matrix sigma*sigma^T is not positive definite along the path")
        })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut sigma_inv = chol.inverse();
        symmetrize(&mut sigma_inv);
        let q = model.diffusion_params();
        let (dsigma, dgram, trace_p) = if order >= 1 && q > 0 {
            let dsigma = model.diffusion_jacobian_unchecked(x, beta);
            let dgram: Vec<_> = dsigma
                .iter()
                .map(|e| {
                    let mut m = e * sigma.transpose();
                    m += m.transpose();
                    m
                })
                .collect();
            let trace_p = dgram.iter().map(|dg| sigma_inv.dot(dg)).collect();
            (dsigma, dgram, trace_p)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let trace_hess = (order >= 2 && q > 0).then(|| {
            let p: Vec<DMatrix<f64>> = dgram.iter().map(|dg| &sigma_inv * dg).collect();
            let si_e: Vec<DMatrix<f64>> = dsigma.iter().map(|e| &sigma_inv * e).collect();
            DMatrix::from_fn(q, q, |k, l| {
                // tr(Σ⁻¹(E_k E_lᵀ + E_l E_kᵀ)) = 2 ⟨Σ⁻¹E_k, E_l⟩
                let second = 2.0 * si_e[k].dot(&dsigma[l]);
                let cross = p[l].tr_mul(&p[k].transpose()).trace();
                second - cross
            })
        });
        Ok(Self {
            sigma_inv,
            logdet,
            dsigma,
            dgram,
            trace_p,
            trace_hess,
        })
    }
}

/// Value, gradient and Hessian of ℓ_n, as requested.
struct Evaluation {
    value: f64,
    grad: Option<DVector<f64>>,
    hess: Option<DMatrix<f64>>,
}

impl<'a> QuasiLik<'a> {
    pub fn new(model: &'a ModelSpec, path: &'a SamplePath) -> Result<Self> {
        if model.dim() != path.dim() {
            return Err(Error::arg(format!(
                "path has dimension {} but the model has d = {}",
                path.dim(),
                model.dim()
            )));
        }
        Ok(Self { model, path })
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn path(&self) -> &SamplePath {
        self.path
    }

    /// ℓ_n(θ).
    pub fn quasi_loglik(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(theta, 0)?.value)
    }

    /// ∇ℓ_n(θ), flat `(α, β)` order.
    pub fn quasi_grad(&self, theta: &ParamVector) -> Result<DVector<f64>> {
        Ok(self.evaluate(theta, 1)?.grad.expect("order 1 computes a gradient"))
    }

    /// ∇²ℓ_n(θ), symmetric by construction.
    pub fn quasi_hessian(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        if self.model.linear_in_params() {
            return Ok(self.evaluate(theta, 2)?.hess.expect("order 2 computes a Hessian"));
        }
        let p = self.model.drift_params();
        let flat = theta.to_flat();
        let m = flat.len();
        let mut hess = DMatrix::zeros(m, m);
        let mut probe = flat.clone();
        for k in 0..m {
            let h = 1e-6 * (1.0 + flat[k].abs());
            probe[k] = flat[k] + h;
            let up = self.quasi_grad(&ParamVector::from_flat(&probe, p)?)?;
            probe[k] = flat[k] - h;
            let down = self.quasi_grad(&ParamVector::from_flat(&probe, p)?)?;
            probe[k] = flat[k];
            hess.set_column(k, &((up - down) / (2.0 * h)));
        }
        symmetrize(&mut hess);
        Ok(hess)
    }

    fn evaluate(&self, theta: &ParamVector, order: u8) -> Result<Evaluation> {
        self.model.check_theta(theta)?;
        let model = self.model;
        let values = self.path.values();
        let dt = self.path.delta();
        let (d, p, q) = (model.dim(), model.drift_params(), model.diffusion_params());
        let m = p + q;
        let alpha = &theta.alpha;
        let beta = &theta.beta;

        let shared = if model.diffusion_state_independent() {
            Some(DiffusionTerms::new(model, &self.path.state(0), beta, order)?)
        } else {
            None
        };

        let mut value = 0.0;
        let mut grad = DVector::zeros(if order >= 1 { m } else { 0 });
        let mut hess = DMatrix::zeros(if order >= 2 { m } else { 0 }, if order >= 2 { m } else { 0 });
        let mut x = vec![0.0; d];
        let mut r = DVector::zeros(d);
        for i in 1..=self.path.n() {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = values[(i - 1, j)];
            }
            let local;
            let terms = match &shared {
                Some(t) => t,
                None => {
                    local = DiffusionTerms::new(model, &x, beta, order)?;
                    &local
                }
            };
            let drift = model.drift_unchecked(&x, alpha);
            for j in 0..d {
                r[j] = values[(i, j)] - values[(i - 1, j)] - dt * drift[j];
            }
            let u = &terms.sigma_inv * &r;
            value -= 0.5 * (terms.logdet + r.dot(&u) / dt);
            if order == 0 {
                continue;
            }

            let jac = model.drift_jacobian_unchecked(&x, alpha);
            let ga = jac.tr_mul(&u);
            let mut head = grad.rows_mut(0, p);
            head += &ga;
            let v: Vec<DVector<f64>> = terms.dgram.iter().map(|dg| dg * &u).collect();
            for k in 0..q {
                grad[p + k] -= 0.5 * (terms.trace_p[k] - u.dot(&v[k]) / dt);
            }
            if order < 2 {
                continue;
            }

            let si_j = &terms.sigma_inv * &jac;
            let haa = jac.tr_mul(&si_j) * dt;
            let mut block = hess.view_mut((0, 0), (p, p));
            block -= &haa;
            if q == 0 {
                continue;
            }
            let w: Vec<DVector<f64>> = v.iter().map(|vk| &terms.sigma_inv * vk).collect();
            for k in 0..q {
                let col = jac.tr_mul(&w[k]);
                for j in 0..p {
                    hess[(j, p + k)] -= col[j];
                }
            }
            let e: Vec<DVector<f64>> = terms.dsigma.iter().map(|ek| ek.tr_mul(&u)).collect();
            let trace_hess = terms.trace_hess.as_ref().expect("order 2 computes trace terms");
            for k in 0..q {
                for l in 0..=k {
                    let quad = -2.0 * v[l].dot(&w[k]) + 2.0 * e[k].dot(&e[l]);
                    let h = -0.5 * (trace_hess[(k, l)] - quad / dt);
                    hess[(p + k, p + l)] += h;
                }
            }
        }

        if order >= 2 {
            // Mirror the filled lower ββ triangle and the αβ block.
            for a in 0..m {
                for b in 0..a {
                    if a >= p {
                        let v = if b >= p { hess[(a, b)] } else { hess[(b, a)] };
                        hess[(a, b)] = v;
                        hess[(b, a)] = v;
                    }
                }
            }
            symmetrize(&mut hess);
        }
        Ok(Evaluation {
            value,
            grad: (order >= 1).then_some(grad),
            hess: (order >= 2).then_some(hess),
        })
    }
}

/// Box constraints for the initial estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    /// Wide box: `|α_j| ≤ 1e4`, diffusion scales in `[1e-6, 1e4]`, other
    /// diffusion entries in `[−1e4, 1e4]`.
    pub fn default_for(model: &ModelSpec) -> Self {
        let mut lower = vec![-1e4; model.n_params()];
        let upper = vec![1e4; model.n_params()];
        for (k, is_scale) in model.scale_params().iter().enumerate() {
            if *is_scale {
                lower[model.drift_params() + k] = 1e-6;
            }
        }
        Self { lower, upper }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.lower.len() != m || self.upper.len() != m {
            return Err(Error::arg(format!("parameter box must have {m} bounds per side")));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::arg("parameter box has lower > upper"));
        }
        Ok(())
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    fn project(&self, x: &mut DVector<f64>) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Default starting point: zero drift, unit diffusion scales.
pub fn default_theta_init(model: &ModelSpec) -> ParamVector {
    let beta = model.scale_params().iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    ParamVector {
        alpha: vec![0.0; model.drift_params()],
        beta,
    }
}

/// Curvature of the contrast at θ̃ and its rate-scaled version.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrices {
    /// `Ĝ_n = −∇²ℓ_n(θ̃)`, possibly lifted to be positive definite.
    pub g_hat: DMatrix<f64>,
    /// `D̂_n = A_n Ĝ_n A_n`.
    pub d_hat: DMatrix<f64>,
    /// Diagonal of `A_n`: `1/√(nΔ)` on α slots, `1/√n` on β slots.
    pub a_diag: DVector<f64>,
    /// Smallest eigenvalue of `−∇²ℓ_n(θ̃)` before any lift.
    pub min_eigenvalue: f64,
    /// True when `Ĝ_n` was shifted by `(1e-10 − τ_min) I`.
    pub regularized: bool,
}

pub const MIN_INFO_EIGENVALUE: f64 = 1e-10;

impl InfoMatrices {
    /// Build from the Hessian of ℓ_n at θ̃.
    pub fn from_hessian(hessian: &DMatrix<f64>, p: usize, n: usize, delta: f64) -> Self {
        let mut g_hat = -hessian;
        symmetrize(&mut g_hat);
        let (min_eigenvalue, _) = eigen_extremes(&g_hat);
        let regularized = min_eigenvalue < MIN_INFO_EIGENVALUE;
        if regularized {
            let shift = MIN_INFO_EIGENVALUE - min_eigenvalue;
            for k in 0..g_hat.nrows() {
                g_hat[(k, k)] += shift;
            }
        }
        let m = g_hat.nrows();
        let alpha_scale = 1.0 / (n as f64 * delta).sqrt();
        let beta_scale = 1.0 / (n as f64).sqrt();
        let a_diag = DVector::from_fn(m, |k, _| if k < p { alpha_scale } else { beta_scale });
        let d_hat = scale_info(&g_hat, &a_diag);
        Self {
            g_hat,
            d_hat,
            a_diag,
            min_eigenvalue,
            regularized,
        }
    }
}

/// `diag(a) · G · diag(a)`.
pub fn scale_info(g: &DMatrix<f64>, a: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| a[i] * g[(i, j)] * a[j])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmleOptions {
    pub max_iter: usize,
    /// Convergence when `‖P(θ − ∇f) − θ‖_∞ ≤ grad_tol · (1 + |ℓ_n|)`.
    pub grad_tol: f64,
}

impl Default for QmleOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QmleFit {
    pub theta: ParamVector,
    pub loglik: f64,
    pub info: InfoMatrices,
    pub iterations: usize,
    /// Projected-gradient norm at θ̃.
    pub kkt_residual: f64,
    /// Some coordinate of θ̃ sits on the box boundary.
    pub boundary_contact: bool,
}

const STALL_GRAD_TOL: f64 = 1e-5;

/// Maximize ℓ_n over the box by projected BFGS.
pub fn qmle_fit(ql: &QuasiLik<'_>, theta_init: &ParamVector, bounds: &ParamBox) -> Result<QmleFit> {
    qmle_fit_with(ql, theta_init, bounds, QmleOptions::default())
}

pub fn qmle_fit_with(
    ql: &QuasiLik<'_>,
    theta_init: &ParamVector,
    bounds: &ParamBox,
    opts: QmleOptions,
) -> Result<QmleFit> {
    let model = ql.model();
    model.check_theta(theta_init)?;
    let p = model.drift_params();
    let m = model.n_params();
    bounds.validate(m)?;
    if !bounds.contains(&theta_init.to_flat()) {
        return Err(Error::arg("initial parameter lies outside the box"));
    }

    // Minimize f = −ℓ_n.
    let objective = |x: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let theta = ParamVector::from_flat(x.as_slice(), p).ok()?;
        let eval = ql.evaluate(&theta, 1).ok()?;
        eval.value.is_finite().then(|| (-eval.value, -eval.grad.expect("order 1")))
    };

    let mut x = theta_init.to_dvector();
    let (mut f, mut g) = objective(&x).ok_or_else(|| Error::Estimation {
        message: "contrast is not finite at the initial point".into(),
        best: x.as_slice().to_vec(),
    })?;

    let initial_inverse = |x: &DVector<f64>| -> DMatrix<f64> {
        let theta = ParamVector::from_flat(x.as_slice(), p).expect("dimension checked");
        if let Ok(h) = ql.quasi_hessian(&theta) {
            let neg = -h;
            if let Some(chol) = spd_cholesky(&neg) {
                let mut inv = chol.inverse();
                symmetrize(&mut inv);
                return inv;
            }
            return DMatrix::from_diagonal(&neg.diagonal().map(|v| 1.0 / v.abs().max(1e-8)));
        }
        DMatrix::identity(m, m)
    };
    let mut h_inv = initial_inverse(&x);

    let projected_gradient = |x: &DVector<f64>, g: &DVector<f64>| -> f64 {
        let mut y = x - g;
        bounds.project(&mut y);
        (y - x).amax()
    };

    let at_bound = |i: usize, x: &DVector<f64>, g: &DVector<f64>| -> bool {
        let tol = 1e-12 * (1.0 + x[i].abs());
        (x[i] <= bounds.lower[i] + tol && g[i] > 0.0) || (x[i] >= bounds.upper[i] - tol && g[i] < 0.0)
    };

    let mut iterations = 0;
    let mut resets = 0;
    loop {
        let pg = projected_gradient(&x, &g);
        if pg <= opts.grad_tol * (1.0 + f.abs()) {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::Estimation {
                message: format!("no convergence after {iterations} iterations (projected gradient {pg:.3e})"),
                best: x.as_slice().to_vec(),
            });
        }
        iterations += 1;

        let free: Vec<bool> = (0..m).map(|i| !at_bound(i, &x, &g)).collect();
        let mut dir = DVector::zeros(m);
        for i in (0..m).filter(|&i| free[i]) {
            dir[i] = -(0..m).filter(|&j| free[j]).map(|j| h_inv[(i, j)] * g[j]).sum::<f64>();
        }
        if g.dot(&dir) >= 0.0 {
            h_inv = DMatrix::from_diagonal(&initial_inverse(&x).diagonal().map(f64::abs));
            for i in 0..m {
                dir[i] = if free[i] { -h_inv[(i, i)] * g[i] } else { 0.0 };
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = &x + &dir * step;
            bounds.project(&mut trial);
            if let Some((ft, gt)) = objective(&trial) {
                if ft <= f + 1e-4 * g.dot(&(&trial - &x)) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if resets < 2 {
                resets += 1;
                h_inv = DMatrix::from_diagonal(&initial_inverse(&x).diagonal().map(f64::abs));
                continue;
            }
            return Err(Error::Estimation {
                message: format!("line search failed (projected gradient {pg:.3e})"),
                best: x.as_slice().to_vec(),
            });
        };

        let s = &x_new - &x;
        // Steps below rounding level with a small gradient mean the gradient
        // has reached its floating-point noise floor.
        let stalled = s.amax() <= 1e-12 * (1.0 + x.amax()) && pg <= STALL_GRAD_TOL * (1.0 + f.abs());
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += &s * s.transpose() * (rho * rho * yhy + rho);
            symmetrize(&mut h_inv);
        }
        x = x_new;
        f = f_new;
        g = g_new;
        if stalled {
            break;
        }
    }

    let theta = ParamVector::from_flat(x.as_slice(), p)?;
    let hessian = ql.quasi_hessian(&theta)?;
    let scheme = ql.path().scheme();
    let info = InfoMatrices::from_hessian(&hessian, p, scheme.n, scheme.delta);
    let boundary_contact = (0..m).any(|i| {
        let tol = 1e-10 * (1.0 + x[i].abs());
        x[i] <= bounds.lower[i] + tol || x[i] >= bounds.upper[i] - tol
    });
    if info.regularized {
        log::warn!(
            "information matrix lifted to be positive definite (min eigenvalue {:.3e})",
            info.min_eigenvalue
        );
    }
    Ok(QmleFit {
        theta,
        loglik: -f,
        kkt_residual: projected_gradient(&x, &g),
        info,
        iterations,
        boundary_contact,
    })
}

/// JSON-friendly summary of a QMLE fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QmleReport {
    pub theta: ParamVector,
    pub loglik: f64,
    pub g_hat: Vec<Vec<f64>>,
    pub d_hat: Vec<Vec<f64>>,
    pub a_diag: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub boundary_contact: bool,
    pub information_regularized: bool,
    pub min_information_eigenvalue: f64,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl From<&QmleFit> for QmleReport {
    fn from(fit: &QmleFit) -> Self {
        Self {
            theta: fit.theta.clone(),
            loglik: fit.loglik,
            g_hat: matrix_rows(&fit.info.g_hat),
            d_hat: matrix_rows(&fit.info.d_hat),
            a_diag: fit.info.a_diag.iter().copied().collect(),
            converged: true,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
            boundary_contact: fit.boundary_contact,
            information_regularized: fit.info.regularized,
            min_information_eigenvalue: fit.info.min_eigenvalue,
        }
    }
}
