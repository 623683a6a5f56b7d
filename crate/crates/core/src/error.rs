use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Wrong dimensions or out-of-domain arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The model cannot be evaluated, e.g. a singular diffusion matrix.
    #[error("model error: {0}")]
    Model(String),

    #[error("simulation diverged at step {step}: {message}")]
    Simulation { step: usize, message: String },

    /// The initial estimator did not converge; `best` holds the best iterate.
    #[error("estimation failed: {message}")]
    Estimation { message: String, best: Vec<f64> },

    /// A penalized solver gave up; `last` holds the final iterate.
    #[error("solver failed{}: {message}", grid_index.map(|i| format!(" at grid point {i}")).unwrap_or_default())]
    Solver {
        message: String,
        last: Vec<f64>,
        grid_index: Option<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a path grid index to a solver error.
    pub fn at_grid_index(self, index: usize) -> Self {
        match self {
            Error::Solver { message, last, .. } => Error::Solver {
                message,
                last,
                grid_index: Some(index),
            },
            other => other,
        }
    }
}
