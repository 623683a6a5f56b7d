//! Euler–Maruyama simulation with reproducible seeding.
//!
//! Each path owns a ChaCha8 stream. Ensemble replication `k` uses the seed
//! [`derive_seed`]`(master, k)`, so replications are independent streams
//! and can be generated in any order or in parallel.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{ModelSpec, ParamVector, SamplePath, SamplingScheme};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub theta: ParamVector,
    pub scheme: SamplingScheme,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Initial Euler steps discarded before the first recorded observation.
    pub burn_in: usize,
}

impl SimConfig {
    pub fn new(model: ModelSpec, theta: ParamVector, scheme: SamplingScheme, x0: Vec<f64>, seed: u64) -> Result<Self> {
        let cfg = Self {
            model,
            theta,
            scheme,
            x0,
            seed,
            burn_in: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.x0.len() != self.model.dim() {
            return Err(Error::arg(format!(
                "x0 has length {} but d = {}",
                self.x0.len(),
                self.model.dim()
            )));
        }
        self.model.check_theta(&self.theta)
    }
}

/// SplitMix64 finalizer applied to `(master, k)`.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    let mut z = master ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One path of `n + 1` observations.
pub fn euler_path(cfg: &SimConfig) -> Result<SamplePath> {
    let values = simulate_rows(cfg, cfg.scheme.n)?;
    SamplePath::new(cfg.scheme, values)
}

/// Simulate `steps` recorded Euler steps at the configured `Δ`, returning a
/// `(steps + 1) × d` matrix. Used directly when held-out continuation rows
/// past the observation window are needed.
pub fn simulate_rows(cfg: &SimConfig, steps: usize) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let model = &cfg.model;
    let d = model.dim();
    let r = model.noise_dim();
    let dt = cfg.scheme.delta;
    let sqrt_dt = dt.sqrt();
    let alpha = &cfg.theta.alpha;
    let beta = &cfg.theta.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let constant_sigma = model
        .diffusion_state_independent()
        .then(|| model.diffusion_unchecked(&cfg.x0, beta));

    let mut values = DMatrix::zeros(steps + 1, d);
    let mut x = DVector::from_column_slice(&cfg.x0);
    let mut z = DVector::zeros(r);
    let total = cfg.burn_in + steps;
    for step in 0..=total {
        if step >= cfg.burn_in {
            values.set_row(step - cfg.burn_in, &x.transpose());
        }
        if step == total {
            break;
        }
        let drift = model.drift_unchecked(x.as_slice(), alpha);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let noise = match &constant_sigma {
            Some(s) => s * &z,
            None => model.diffusion_unchecked(x.as_slice(), beta) * &z,
        };
        x += drift * dt + noise * sqrt_dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                step: step + 1,
                message: "state became non-finite".into(),
            });
        }
    }
    Ok(values)
}

/// `replications` independent paths; path `k` is
/// `euler_path(cfg.with_seed(derive_seed(cfg.seed, k)))`.
pub fn ensemble(cfg: &SimConfig, replications: usize) -> Result<Vec<SamplePath>> {
    if replications == 0 {
        return Err(Error::arg("ensemble needs at least one replication"));
    }
    (0..replications as u64)
        .into_par_iter()
        .map(|k| euler_path(&cfg.clone().with_seed(derive_seed(cfg.seed, k))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou1(sigma: f64, n: usize, delta: f64, x0: f64, seed: u64) -> SimConfig {
        let model = ModelSpec::ornstein_uhlenbeck(1, true, None).unwrap();
        SimConfig::new(
            model,
            ParamVector::new(vec![1.0], vec![sigma]).unwrap(),
            SamplingScheme::new(n, delta).unwrap(),
            vec![x0],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_euler_step() {
        let path = euler_path(&ou1(0.0, 1, 0.1, 1.0, 0)).unwrap();
        assert!((path.values()[(1, 0)] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_drift_zero_noise_is_constant() {
        let model = ModelSpec::ornstein_uhlenbeck(2, false, Some(DMatrix::zeros(2, 2))).unwrap();
        let cfg = SimConfig::new(
            model,
            ParamVector::new(vec![0.0, 0.0], vec![]).unwrap(),
            SamplingScheme::new(20, 0.1).unwrap(),
            vec![0.5, -2.0],
            3,
        )
        .unwrap();
        let path = euler_path(&cfg).unwrap();
        for i in 0..=20 {
            assert_eq!(path.state(i), vec![0.5, -2.0]);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let a = euler_path(&ou1(1.0, 100, 0.01, 0.0, 42)).unwrap();
        let b = euler_path(&ou1(1.0, 100, 0.01, 0.0, 42)).unwrap();
        assert_eq!(a, b);
        let c = euler_path(&ou1(1.0, 100, 0.01, 0.0, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ensemble_of_one_uses_derived_seed() {
        let cfg = ou1(1.0, 50, 0.01, 0.0, 9);
        let paths = ensemble(&cfg, 1).unwrap();
        let direct = euler_path(&cfg.clone().with_seed(derive_seed(9, 0))).unwrap();
        assert_eq!(paths[0], direct);
        let two = ensemble(&cfg, 2).unwrap();
        assert_ne!(two[0], two[1]);
    }

    #[test]
    fn burn_in_drops_leading_steps() {
        let cfg = ou1(1.0, 10, 0.01, 0.0, 5);
        let long = simulate_rows(&cfg, 15).unwrap();
        let burned = euler_path(&cfg.clone().with_burn_in(5)).unwrap();
        for i in 0..=10 {
            assert_eq!(burned.values()[(i, 0)], long[(i + 5, 0)]);
        }
    }

    #[test]
    fn explosion_reports_step() {
        let model = ModelSpec::ornstein_uhlenbeck(1, true, None).unwrap();
        let cfg = SimConfig::new(
            model,
            ParamVector::new(vec![-1e200], vec![1.0]).unwrap(),
            SamplingScheme::new(10, 1.0).unwrap(),
            vec![1e200],
            1,
        )
        .unwrap();
        match euler_path(&cfg) {
            Err(Error::Simulation { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn x0_dimension_is_checked() {
        let model = ModelSpec::ornstein_uhlenbeck(2, true, None).unwrap();
        let res = SimConfig::new(
            model,
            ParamVector::new(vec![1.0; 4], vec![1.0; 2]).unwrap(),
            SamplingScheme::new(10, 0.1).unwrap(),
            vec![0.0],
            1,
        );
        assert!(matches!(res, Err(Error::Argument(_))));
    }
}
