//! Parametric diffusion models `dX = b(X, α) dt + σ(X, β) dW`.
//!
//! Two built-in families are represented by an affine [`LinearStructure`]:
//! every entry of the drift offset, the drift matrix and the (state
//! independent) diffusion matrix is either a fixed constant or a scaled
//! parameter. User-defined models plug in through [`CustomModel`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{spd_cholesky, sym_sqrt, symmetrize};
use crate::{Error, Result};

/// θ = (α, β). Everywhere in the crate the flat order is `α₁..α_p, β₁..β_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParamVector {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::arg("parameter vector has non-finite entries"));
        }
        Ok(Self { alpha, beta })
    }

    /// Split a flat `(α, β)` slice after `p` drift entries.
    pub fn from_flat(flat: &[f64], p: usize) -> Result<Self> {
        if p > flat.len() {
            return Err(Error::arg(format!(
                "cannot split {} entries after {p} drift parameters",
                flat.len()
            )));
        }
        Self::new(flat[..p].to_vec(), flat[p..].to_vec())
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            alpha: vec![0.0; p],
            beta: vec![0.0; q],
        }
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_flat())
    }

    /// Indices (flat order) of the non-zero coordinates.
    pub fn support(&self) -> Vec<usize> {
        self.to_flat()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Equispaced sampling: `n` increments of size `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub n: usize,
    pub delta: f64,
}

impl SamplingScheme {
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("sampling scheme needs n >= 1"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::arg(format!("step size must be positive, got {delta}")));
        }
        Ok(Self { n, delta })
    }

    /// Observation horizon `T = nΔ`.
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.delta
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }
}

/// Discrete observations `X_{t_0}, …, X_{t_n}`; row `i` is `X_{t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    scheme: SamplingScheme,
    values: DMatrix<f64>,
}

impl SamplePath {
    pub fn new(scheme: SamplingScheme, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != scheme.n + 1 {
            return Err(Error::arg(format!(
                "path has {} rows but the scheme needs n + 1 = {}",
                values.nrows(),
                scheme.n + 1
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::arg("path has no state columns"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let row = pos % values.nrows();
            return Err(Error::arg(format!("non-finite observation in row {row}")));
        }
        Ok(Self { scheme, values })
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n(&self) -> usize {
        self.scheme.n
    }

    pub fn delta(&self) -> f64 {
        self.scheme.delta
    }

    /// Observation at index `i` as an owned vector.
    pub fn state(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn last_state(&self) -> Vec<f64> {
        self.state(self.scheme.n)
    }
}

/// Which built-in family a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearDriftConstDiffusion,
    StochasticRegression,
    Custom,
}

/// One entry of a structured drift or diffusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Fixed(f64),
    /// `scale · θ[index]`, with `index` local to the α or β block.
    Param { index: usize, scale: f64 },
}

impl Slot {
    fn value(&self, params: &[f64]) -> f64 {
        match *self {
            Slot::Fixed(v) => v,
            Slot::Param { index, scale } => scale * params[index],
        }
    }

    fn param(index: usize) -> Self {
        Slot::Param { index, scale: 1.0 }
    }

    fn neg_param(index: usize) -> Self {
        Slot::Param { index, scale: -1.0 }
    }
}

/// Affine drift `b(x, α) = c(α) + M(α) x` with constant diffusion `σ(β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStructure {
    /// `c`, length `d`, α-indexed.
    pub offset: Vec<Slot>,
    /// `M`, `d × d` row-major, α-indexed.
    pub drift: Vec<Vec<Slot>>,
    /// `σ`, `d × r` row-major, β-indexed.
    pub diffusion: Vec<Vec<Slot>>,
}

impl LinearStructure {
    fn validate(&self, p: usize, q: usize) -> Result<(usize, usize)> {
        let d = self.offset.len();
        if d == 0 || self.drift.len() != d || self.diffusion.len() != d {
            return Err(Error::config("linear structure rows must all have length d >= 1"));
        }
        if self.drift.iter().any(|row| row.len() != d) {
            return Err(Error::config("drift matrix must be d x d"));
        }
        let r = self.diffusion[0].len();
        if r == 0 || self.diffusion.iter().any(|row| row.len() != r) {
            return Err(Error::config("diffusion matrix rows must share a length r >= 1"));
        }
        let mut alpha_seen = vec![0usize; p];
        let mut beta_seen = vec![0usize; q];
        let drift_slots = self.offset.iter().chain(self.drift.iter().flatten());
        for slot in drift_slots {
            if let Slot::Param { index, .. } = *slot {
                *alpha_seen
                    .get_mut(index)
                    .ok_or_else(|| Error::config(format!("drift slot uses alpha index {index} >= p = {p}")))? += 1;
            }
        }
        for slot in self.diffusion.iter().flatten() {
            if let Slot::Param { index, .. } = *slot {
                *beta_seen
                    .get_mut(index)
                    .ok_or_else(|| Error::config(format!("diffusion slot uses beta index {index} >= q = {q}")))? += 1;
            }
        }
        if let Some(k) = alpha_seen.iter().position(|&c| c == 0) {
            return Err(Error::config(format!("drift parameter {k} is not used by any slot")));
        }
        if let Some(k) = beta_seen.iter().position(|&c| c == 0) {
            return Err(Error::config(format!("diffusion parameter {k} is not used by any slot")));
        }
        Ok((d, r))
    }
}

/// Extension point for models outside the built-in families.
///
/// Jacobians are optional; when absent the crate falls back to central
/// finite differences with step `1e-6 · (1 + |θ_k|)`.
pub trait CustomModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn drift_params(&self) -> usize;
    fn diffusion_params(&self) -> usize;
    fn noise_dim(&self) -> usize {
        self.dim()
    }
    fn drift(&self, x: &[f64], alpha: &[f64]) -> DVector<f64>;
    fn diffusion(&self, x: &[f64], beta: &[f64]) -> DMatrix<f64>;
    /// `∂b/∂α`, a `d × p` matrix.
    fn drift_jacobian(&self, _x: &[f64], _alpha: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// `∂σ/∂β_k` for each `k`, each `d × r`.
    fn diffusion_jacobian(&self, _x: &[f64], _beta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// True when `b` is linear in α and `σ` linear in β, so second
    /// parameter derivatives of `b` and `σ` vanish.
    fn linear_in_params(&self) -> bool {
        false
    }
    fn diffusion_state_independent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Linear(LinearStructure),
    Custom(Arc<dyn CustomModel>),
}

/// A parametric diffusion model. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    family: Family,
    d: usize,
    p: usize,
    q: usize,
    r: usize,
    kind: Kind,
    names: Vec<String>,
    /// β coordinates that act as scales (diagonal entries of σ).
    scale_params: Vec<bool>,
    config: Option<ModelConfig>,
}

const FD_STEP: f64 = 1e-6;

impl ModelSpec {
    /// Build a model from an explicit affine structure.
    pub fn linear(family: Family, p: usize, q: usize, structure: LinearStructure, names: Vec<String>) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("a model needs at least one drift parameter"));
        }
        let (d, r) = structure.validate(p, q)?;
        if names.len() != p + q {
            return Err(Error::config(format!("expected {} parameter names, got {}", p + q, names.len())));
        }
        let mut scale_params = vec![false; q];
        for (i, row) in structure.diffusion.iter().enumerate() {
            if let Some(Slot::Param { index, .. }) = row.get(i) {
                scale_params[*index] = true;
            }
        }
        Ok(Self {
            family,
            d,
            p,
            q,
            r,
            kind: Kind::Linear(structure),
            names,
            scale_params,
            config: None,
        })
    }

    pub fn custom(model: Arc<dyn CustomModel>) -> Result<Self> {
        let (d, p, q, r) = (model.dim(), model.drift_params(), model.diffusion_params(), model.noise_dim());
        if d == 0 || p == 0 || r == 0 {
            return Err(Error::config("custom model needs d >= 1, p >= 1 and r >= 1"));
        }
        let names = (1..=p)
            .map(|i| format!("alpha_{i}"))
            .chain((1..=q).map(|i| format!("beta_{i}")))
            .collect();
        Ok(Self {
            family: Family::Custom,
            d,
            p,
            q,
            r,
            kind: Kind::Custom(model),
            names,
            scale_params: vec![false; q],
            config: None,
        })
    }

    /// Multivariate OU-type model `b(x) = −B x`, `σ` constant.
    ///
    /// With `full_drift` every entry of `B` is a parameter (row-major),
    /// otherwise only its diagonal. With `fixed_sigma = None` the diffusion is
    /// `diag(β)`; otherwise it is the given constant matrix and `q = 0`.
    pub fn ornstein_uhlenbeck(d: usize, full_drift: bool, fixed_sigma: Option<DMatrix<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("OU model needs d >= 1"));
        }
        let mut names = Vec::new();
        let mut drift = vec![vec![Slot::Fixed(0.0); d]; d];
        let mut p = 0;
        for (i, row) in drift.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                if full_drift || i == j {
                    *slot = Slot::neg_param(p);
                    names.push(format!("b_{}{}", i + 1, j + 1));
                    p += 1;
                }
            }
        }
        let (diffusion, q) = match &fixed_sigma {
            Some(s) => {
                if s.nrows() != d || s.ncols() == 0 {
                    return Err(Error::config("fixed sigma must have d rows"));
                }
                let rows = (0..d)
                    .map(|i| (0..s.ncols()).map(|j| Slot::Fixed(s[(i, j)])).collect())
                    .collect();
                (rows, 0)
            }
            None => {
                let mut rows = vec![vec![Slot::Fixed(0.0); d]; d];
                for (i, row) in rows.iter_mut().enumerate() {
                    row[i] = Slot::param(i);
                    names.push(format!("sigma_{}", i + 1));
                }
                (rows, d)
            }
        };
        let structure = LinearStructure {
            offset: vec![Slot::Fixed(0.0); d],
            drift,
            diffusion,
        };
        Self::linear(Family::LinearDriftConstDiffusion, p, q, structure, names)
    }

    /// Stochastic regression of `Y` on `k` mean-reverting regressors.
    ///
    /// State is `(y, x_1, …, x_k)`, so `d = k + 1`. Drift:
    /// `b_0 = Σ α_j x_j − α_{k+1} y`, `b_j = α_{0j} − α_{1j} x_j`.
    /// Drift parameters are ordered `α_1..α_{k+1}, α_{01}..α_{0k}, α_{11}..α_{1k}`
    /// unless `known_regressor_drift` fixes the regressor equations.
    pub fn stochastic_regression(
        k: usize,
        known_regressor_drift: Option<(Vec<f64>, Vec<f64>)>,
        diffusion: RegressionDiffusion,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("stochastic regression needs at least one regressor"));
        }
        let d = k + 1;
        let mut names: Vec<String> = (1..=k + 1).map(|j| format!("alpha_{j}")).collect();
        let mut offset = vec![Slot::Fixed(0.0); d];
        let mut drift = vec![vec![Slot::Fixed(0.0); d]; d];
        for j in 1..=k {
            drift[0][j] = Slot::param(j - 1);
        }
        drift[0][0] = Slot::neg_param(k);
        let mut p = k + 1;
        match known_regressor_drift {
            Some((a0, a1)) => {
                if a0.len() != k || a1.len() != k {
                    return Err(Error::config("known regressor drift needs k offsets and k rates"));
                }
                for j in 1..=k {
                    offset[j] = Slot::Fixed(a0[j - 1]);
                    drift[j][j] = Slot::Fixed(-a1[j - 1]);
                }
            }
            None => {
                for j in 1..=k {
                    offset[j] = Slot::param(p);
                    names.push(format!("alpha0_{j}"));
                    p += 1;
                }
                for j in 1..=k {
                    drift[j][j] = Slot::neg_param(p);
                    names.push(format!("alpha1_{j}"));
                    p += 1;
                }
            }
        }
        let mut sigma = vec![vec![Slot::Fixed(0.0); d]; d];
        let q = match diffusion {
            RegressionDiffusion::Fixed { beta0, block } => {
                if block.nrows() != k || block.ncols() != k {
                    return Err(Error::config(format!("diffusion block must be {k} x {k}")));
                }
                sigma[0][0] = Slot::Fixed(beta0);
                for i in 0..k {
                    for j in 0..k {
                        sigma[i + 1][j + 1] = Slot::Fixed(block[(i, j)]);
                    }
                }
                0
            }
            RegressionDiffusion::Symmetric => {
                sigma[0][0] = Slot::param(0);
                names.push("beta0".into());
                let mut idx = 1;
                for i in 0..k {
                    for j in i..k {
                        sigma[i + 1][j + 1] = Slot::param(idx);
                        sigma[j + 1][i + 1] = Slot::param(idx);
                        names.push(format!("beta_{}{}", i + 1, j + 1));
                        idx += 1;
                    }
                }
                idx
            }
        };
        let structure = LinearStructure {
            offset,
            drift,
            diffusion: sigma,
        };
        Self::linear(Family::StochasticRegression, p, q, structure, names)
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let mut spec = config.build()?;
        spec.config = Some(config.clone());
        Ok(spec)
    }

    /// The JSON configuration this model was built from, if any.
    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn drift_params(&self) -> usize {
        self.p
    }

    pub fn diffusion_params(&self) -> usize {
        self.q
    }

    pub fn n_params(&self) -> usize {
        self.p + self.q
    }

    pub fn noise_dim(&self) -> usize {
        self.r
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Which β coordinates sit on the diagonal of σ.
    pub fn scale_params(&self) -> &[bool] {
        &self.scale_params
    }

    pub fn linear_structure(&self) -> Option<&LinearStructure> {
        match &self.kind {
            Kind::Linear(s) => Some(s),
            Kind::Custom(_) => None,
        }
    }

    pub fn linear_in_params(&self) -> bool {
        match &self.kind {
            Kind::Linear(_) => true,
            Kind::Custom(m) => m.linear_in_params(),
        }
    }

    pub fn diffusion_state_independent(&self) -> bool {
        match &self.kind {
            Kind::Linear(_) => true,
            Kind::Custom(m) => m.diffusion_state_independent(),
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::arg(format!("state has length {} but d = {}", x.len(), self.d)));
        }
        Ok(())
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.p {
            return Err(Error::arg(format!("alpha has length {} but p = {}", alpha.len(), self.p)));
        }
        Ok(())
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.q {
            return Err(Error::arg(format!("beta has length {} but q = {}", beta.len(), self.q)));
        }
        Ok(())
    }

    pub fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        self.check_alpha(&theta.alpha)?;
        self.check_beta(&theta.beta)
    }

    /// `b(x, α)`.
    pub fn drift_eval(&self, x: &[f64], alpha: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_alpha(alpha)?;
        Ok(self.drift_unchecked(x, alpha))
    }

    pub(crate) fn drift_unchecked(&self, x: &[f64], alpha: &[f64]) -> DVector<f64> {
        match &self.kind {
            Kind::Linear(s) => DVector::from_fn(self.d, |i, _| {
                s.offset[i].value(alpha)
                    + s.drift[i]
                        .iter()
                        .zip(x)
                        .map(|(slot, xj)| match *slot {
                            Slot::Fixed(v) if v == 0.0 => 0.0,
                            _ => slot.value(alpha) * xj,
                        })
                        .sum::<f64>()
            }),
            Kind::Custom(m) => m.drift(x, alpha),
        }
    }

    /// `σ(x, β)`, a `d × r` matrix.
    pub fn diffusion_matrix(&self, x: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        self.check_beta(beta)?;
        Ok(self.diffusion_unchecked(x, beta))
    }

    pub(crate) fn diffusion_unchecked(&self, x: &[f64], beta: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            Kind::Linear(s) => DMatrix::from_fn(self.d, self.r, |i, j| s.diffusion[i][j].value(beta)),
            Kind::Custom(m) => m.diffusion(x, beta),
        }
    }

    /// `Σ(x, β) = σσᵀ`, rejected unless its Cholesky pivots exceed `1e-12`.
    pub fn sigma_gram(&self, x: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
        let sigma = self.diffusion_matrix(x, beta)?;
        let gram = gram_of(&sigma);
        if spd_cholesky(&gram).is_none() {
            return Err(Error::model("diffusion matrix sigma*sigma^T is not positive definite"));
        }
        Ok(gram)
    }

    /// `∂b/∂α` at `(x, α)`, a `d × p` matrix.
    pub fn drift_jacobian(&self, x: &[f64], alpha: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        self.check_alpha(alpha)?;
        Ok(self.drift_jacobian_unchecked(x, alpha))
    }

    pub(crate) fn drift_jacobian_unchecked(&self, x: &[f64], alpha: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            Kind::Linear(s) => {
                let mut jac = DMatrix::zeros(self.d, self.p);
                for i in 0..self.d {
                    if let Slot::Param { index, scale } = s.offset[i] {
                        jac[(i, index)] += scale;
                    }
                    for (j, slot) in s.drift[i].iter().enumerate() {
                        if let Slot::Param { index, scale } = *slot {
                            jac[(i, index)] += scale * x[j];
                        }
                    }
                }
                jac
            }
            Kind::Custom(m) => m.drift_jacobian(x, alpha).unwrap_or_else(|| {
                let mut jac = DMatrix::zeros(self.d, self.p);
                let mut a = alpha.to_vec();
                for k in 0..self.p {
                    let h = FD_STEP * (1.0 + alpha[k].abs());
                    a[k] = alpha[k] + h;
                    let up = m.drift(x, &a);
                    a[k] = alpha[k] - h;
                    let down = m.drift(x, &a);
                    a[k] = alpha[k];
                    jac.set_column(k, &((up - down) / (2.0 * h)));
                }
                jac
            }),
        }
    }

    /// `∂σ/∂β_k` for `k = 1..q`.
    pub fn diffusion_jacobian(&self, x: &[f64], beta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_state(x)?;
        self.check_beta(beta)?;
        Ok(self.diffusion_jacobian_unchecked(x, beta))
    }

    pub(crate) fn diffusion_jacobian_unchecked(&self, x: &[f64], beta: &[f64]) -> Vec<DMatrix<f64>> {
        match &self.kind {
            Kind::Linear(s) => {
                let mut out = vec![DMatrix::zeros(self.d, self.r); self.q];
                for (i, row) in s.diffusion.iter().enumerate() {
                    for (j, slot) in row.iter().enumerate() {
                        if let Slot::Param { index, scale } = *slot {
                            out[index][(i, j)] += scale;
                        }
                    }
                }
                out
            }
            Kind::Custom(m) => m.diffusion_jacobian(x, beta).unwrap_or_else(|| {
                let mut b = beta.to_vec();
                (0..self.q)
                    .map(|k| {
                        let h = FD_STEP * (1.0 + beta[k].abs());
                        b[k] = beta[k] + h;
                        let up = m.diffusion(x, &b);
                        b[k] = beta[k] - h;
                        let down = m.diffusion(x, &b);
                        b[k] = beta[k];
                        (up - down) / (2.0 * h)
                    })
                    .collect()
            }),
        }
    }
}

/// `σσᵀ`, exactly symmetric.
pub(crate) fn gram_of(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let mut gram = sigma * sigma.transpose();
    symmetrize(&mut gram);
    gram
}

/// Diffusion of the stochastic regression family.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressionDiffusion {
    /// Known `β₀` and `k × k` block; contributes no parameters.
    Fixed { beta0: f64, block: DMatrix<f64> },
    /// `β₀` plus the upper triangle of a symmetric block are parameters.
    Symmetric,
}

impl RegressionDiffusion {
    /// Fixed diffusion whose regressor block is `C^{1/2}` for a noise
    /// correlation matrix `C`.
    pub fn from_correlation(beta0: f64, correlation: &DMatrix<f64>) -> Result<Self> {
        let block = sym_sqrt(correlation).ok_or_else(|| Error::config("noise correlation must be PSD"))?;
        Ok(RegressionDiffusion::Fixed { beta0, block })
    }
}

/// `ρ^{|i−j|}` correlation matrix.
pub fn ar1_correlation(k: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// JSON model description: `{"family": ..., "d": ..., "fixed": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// State dimension.
    pub d: usize,
    /// OU drift layout: `"full"` (default) or `"diagonal"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftLayout>,
    #[serde(default, skip_serializing_if = "FixedEntries::is_empty")]
    pub fixed: FixedEntries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLayout {
    Full,
    Diagonal,
}

/// Structural constants that are not estimated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedEntries {
    /// OU: constant diffusion matrix (`d × r`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Regression: response noise scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    /// Regression: regressor diffusion block (`k × k`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_block: Option<Vec<Vec<f64>>>,
    /// Regression: regressor noise correlation, alternative to `beta_block`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_correlation: Option<Vec<Vec<f64>>>,
    /// Regression: known regressor offsets `α_{0j}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<Vec<f64>>,
    /// Regression: known regressor rates `α_{1j}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<Vec<f64>>,
}

impl FixedEntries {
    pub fn is_empty(&self) -> bool {
        *self == FixedEntries::default()
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("fixed.{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelConfig {
    fn build(&self) -> Result<ModelSpec> {
        let f = &self.fixed;
        match self.family {
            Family::LinearDriftConstDiffusion => {
                if f.beta0.is_some() || f.beta_block.is_some() || f.alpha0.is_some() || f.alpha1.is_some() {
                    return Err(Error::config(
                        "fixed: only `sigma` applies to family linear_drift_const_diffusion",
                    ));
                }
                let sigma = f.sigma.as_deref().map(|s| matrix_from_rows(s, "sigma")).transpose()?;
                let full = self.drift.unwrap_or(DriftLayout::Full) == DriftLayout::Full;
                ModelSpec::ornstein_uhlenbeck(self.d, full, sigma)
            }
            Family::StochasticRegression => {
                if self.d < 2 {
                    return Err(Error::config("d: stochastic_regression needs d >= 2"));
                }
                if self.drift.is_some() || f.sigma.is_some() {
                    return Err(Error::config("drift/fixed.sigma do not apply to stochastic_regression"));
                }
                let k = self.d - 1;
                let known = match (&f.alpha0, &f.alpha1) {
                    (Some(a0), Some(a1)) => Some((a0.clone(), a1.clone())),
                    (None, None) => None,
                    _ => return Err(Error::config("fixed.alpha0 and fixed.alpha1 must be given together")),
                };
                let diffusion = match (f.beta0, &f.beta_block, &f.noise_correlation) {
                    (None, None, None) => RegressionDiffusion::Symmetric,
                    (Some(beta0), Some(block), None) => RegressionDiffusion::Fixed {
                        beta0,
                        block: matrix_from_rows(block, "beta_block")?,
                    },
                    (Some(beta0), None, Some(corr)) => {
                        RegressionDiffusion::from_correlation(beta0, &matrix_from_rows(corr, "noise_correlation")?)?
                    }
                    _ => {
                        return Err(Error::config(
                            "fixed.beta0 needs exactly one of fixed.beta_block / fixed.noise_correlation",
                        ))
                    }
                };
                ModelSpec::stochastic_regression(k, known, diffusion)
            }
            Family::Custom => Err(Error::config(
                "family: custom models are code-defined and cannot be built from JSON",
            )),
        }
    }
}
