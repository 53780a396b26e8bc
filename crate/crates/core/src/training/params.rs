use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{allocate_gains, AgentStructure, GainAllocation, InterconnectionSpec};
use crate::plant::ControllerNetwork;
use crate::ren::{build_ren, Activation, RenDims, RenTheta};

/// Hidden-state and neuron counts of one agent's cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellShape {
    pub state: usize,
    pub neurons: usize,
}

/// Free parameters `{theta_i, b_i}` of the whole controller plus the network gain `gamma_R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableParams {
    pub shapes: Vec<CellShape>,
    pub theta: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub gamma_r: f64,
}

impl TrainableParams {
    pub fn ren_dims(&self, spec: &InterconnectionSpec) -> Result<Vec<RenDims>> {
        if self.shapes.len() != spec.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "cell shapes",
                expected: spec.n_agents(),
                actual: self.shapes.len(),
            });
        }
        self.shapes
            .iter()
            .zip(&spec.agents)
            .map(|(s, a)| RenDims::new(s.state, s.neurons, a.ren_input, a.ren_output))
            .collect()
    }

    pub fn zeros(spec: &InterconnectionSpec, shapes: Vec<CellShape>, gamma_r: f64) -> Result<Self> {
        let mut p = Self {
            theta: Vec::new(),
            b: vec![0.0; spec.n_agents()],
            shapes,
            gamma_r,
        };
        p.theta = p.ren_dims(spec)?.iter().map(|d| vec![0.0; d.theta_len()]).collect();
        Ok(p)
    }

    /// `theta ~ N(0, theta_std^2)`, `b ~ N(0, b_std^2)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        spec: &InterconnectionSpec,
        shapes: Vec<CellShape>,
        gamma_r: f64,
        theta_std: f64,
        b_std: f64,
    ) -> Result<Self> {
        let mut p = Self::zeros(spec, shapes, gamma_r)?;
        for th in &mut p.theta {
            for x in th.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *x = theta_std * e;
            }
        }
        for b in &mut p.b {
            let e: f64 = rng.sample(StandardNormal);
            *b = b_std * e;
        }
        Ok(p)
    }

    pub fn check(&self, spec: &InterconnectionSpec) -> Result<Vec<RenDims>> {
        let dims = self.ren_dims(spec)?;
        if self.theta.len() != dims.len() || self.b.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                context: "agent parameters",
                expected: dims.len(),
                actual: self.theta.len().min(self.b.len()),
            });
        }
        for (th, d) in self.theta.iter().zip(&dims) {
            if th.len() != d.theta_len() {
                return Err(Error::DimensionMismatch {
                    context: "theta length",
                    expected: d.theta_len(),
                    actual: th.len(),
                });
            }
        }
        Ok(dims)
    }

    pub fn gains(&self, structure: &[AgentStructure]) -> Result<GainAllocation> {
        allocate_gains(structure, &self.b, self.gamma_r)
    }

    /// Builds every cell at its allocated gain.
    pub fn controller(
        &self,
        spec: &InterconnectionSpec,
        structure: &[AgentStructure],
        activation: Activation,
    ) -> Result<ControllerNetwork> {
        let dims = self.check(spec)?;
        let gains = self.gains(structure)?;
        let cells = dims
            .iter()
            .zip(&self.theta)
            .zip(&gains.agents)
            .map(|((d, th), g)| build_ren(&RenTheta::new(th.clone(), g.gamma)?, d))
            .collect::<Result<Vec<_>>>()?;
        ControllerNetwork::new(spec.clone(), cells, gains, activation)
    }

    /// Number of entries of [`Self::to_flat`].
    pub fn flat_len(&self, with_gamma_r: bool) -> usize {
        self.theta.iter().map(Vec::len).sum::<usize>() + self.b.len() + usize::from(with_gamma_r)
    }

    /// `[theta_0, ..., theta_{N-1}, b, (ln gamma_R)]`.
    pub fn to_flat(&self, with_gamma_r: bool) -> Vec<f64> {
        let mut out: Vec<f64> = self.theta.iter().flatten().copied().collect();
        out.extend_from_slice(&self.b);
        if with_gamma_r {
            out.push(self.gamma_r.ln());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64], with_gamma_r: bool) -> Result<()> {
        if flat.len() != self.flat_len(with_gamma_r) {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: self.flat_len(with_gamma_r),
                actual: flat.len(),
            });
        }
        let mut k = 0;
        for th in &mut self.theta {
            let len = th.len();
            th.copy_from_slice(&flat[k..k + len]);
            k += len;
        }
        let n = self.b.len();
        self.b.copy_from_slice(&flat[k..k + n]);
        k += n;
        if with_gamma_r {
            self.gamma_r = flat[k].exp();
        }
        Ok(())
    }
}
