//! Sparse estimation of discretely observed diffusion processes.
//!
//! The crate fits parametric SDEs `dX = b(X, α) dt + σ(X, β) dW` from
//! equispaced observations. A quasi-maximum-likelihood fit supplies the
//! centre `θ̃` and the curvature `Ĝ`; an adaptive Elastic-Net is then solved
//! on the quadratic approximation of the contrast along a λ path.
//!
//! Module map:
//!
//! * [`model`]: drift/diffusion families, parameter vectors, sample paths.
//! * [`sim`]: Euler–Maruyama simulation and seeded ensembles.
//! * [`qmle`]: quasi-log-likelihood, derivatives, initial estimator.
//! * [`enet`]: penalty weights, coordinate descent, accelerated proximal
//!   gradient, λ paths and λ selection.
//! * [`predict`]: one-step forecasts and prediction-error curves.
//! * [`diagnostics`]: support recovery metrics, MSE, error bounds.
//! * [`study`]: Monte-Carlo replication harness.
//! * [`io`]: CSV/JSON formats shared by the command-line tool.

pub mod diagnostics;
pub mod enet;
mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod qmle;
pub mod sim;
pub mod study;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelSpec, ParamVector, SamplePath, SamplingScheme};
