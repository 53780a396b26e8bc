use nalgebra::DVector;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of `w_0 = x_0`: independent Gaussians per state entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Disturbance sequences with finite support: `w_0` from [`InitialCondition`],
/// then white noise on `1..=process_support`, zero afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub initial: InitialCondition,
    #[serde(default)]
    pub process_std: f64,
    #[serde(default)]
    pub process_support: usize,
}

impl NoiseModel {
    pub fn state_dim(&self) -> usize {
        self.initial.mean.len()
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.initial.mean.len() != state_dim || self.initial.std.len() != state_dim {
            return Err(Error::Config(format!(
                "initial condition needs {state_dim} mean and std entries, got {} and {}",
                self.initial.mean.len(),
                self.initial.std.len()
            )));
        }
        if self.initial.std.iter().chain([&self.process_std]).any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        Ok(())
    }

    /// Draws `w_0, ..., w_horizon`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, horizon: usize) -> Vec<DVector<f64>> {
        let n = self.state_dim();
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(DVector::from_fn(n, |k, _| {
            let e: f64 = rng.sample(StandardNormal);
            self.initial.mean[k] + self.initial.std[k] * e
        }));
        for t in 1..=horizon {
            if t <= self.process_support && self.process_std > 0.0 {
                out.push(DVector::from_fn(n, |_, _| {
                    let e: f64 = rng.sample(StandardNormal);
                    self.process_std * e
                }));
            } else {
                out.push(DVector::zeros(n));
            }
        }
        out
    }

    /// `w = 0` over the whole horizon.
    pub fn zero(state_dim: usize, horizon: usize) -> Vec<DVector<f64>> {
        vec![DVector::zeros(state_dim); horizon + 1]
    }
}
