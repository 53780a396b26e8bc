use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{empirical_loss, grad_params, CellShape, Optimizer, OptimizerKind, Problem, TrainableParams};
use crate::error::{Error, Result};
use crate::network::{certify, LmiReport, LMI_TOL};
use crate::plant::NoiseModel;

const PARAM_STREAM: u64 = 0;
const FIXED_SAMPLE_STREAM: u64 = 1;
const RESAMPLE_STREAM_BASE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
    pub cell: CellShape,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Draw a fresh sample set every epoch instead of reusing one.
    #[serde(default)]
    pub resample: bool,
    /// Also descend on `ln gamma_R`.
    #[serde(default)]
    pub train_gamma_r: bool,
    /// Check the network certificate at every epoch.
    #[serde(default)]
    pub debug_certify: bool,
    #[serde(default = "default_theta_std")]
    pub theta_std: f64,
    #[serde(default = "default_b_std")]
    pub b_std: f64,
}

fn default_theta_std() -> f64 {
    0.02
}

fn default_b_std() -> f64 {
    1.0
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be nonnegative".into()));
        }
        if self.samples == 0 || self.horizon == 0 {
            return Err(Error::Config("samples and horizon must be at least 1".into()));
        }
        if self.cell.state == 0 || self.cell.neurons == 0 {
            return Err(Error::Config("cell sizes must be positive".into()));
        }
        if !(self.theta_std >= 0.0 && self.b_std >= 0.0) {
            return Err(Error::Config("initialization scales must be nonnegative".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Disturbance samples used at `epoch`.
    pub fn sample_set(&self, noise: &NoiseModel, epoch: usize) -> Vec<Vec<DVector<f64>>> {
        let stream = if self.resample {
            RESAMPLE_STREAM_BASE + epoch as u64
        } else {
            FIXED_SAMPLE_STREAM
        };
        let mut rng = self.rng(stream);
        (0..self.samples).map(|_| noise.sample(&mut rng, self.horizon)).collect()
    }
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub params: TrainableParams,
    pub optimizer: Optimizer,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Loss before each completed update.
    pub loss_history: Vec<f64>,
    /// Agent gains used at each completed epoch.
    pub gain_history: Vec<Vec<f64>>,
    /// Largest certificate eigenvalue per epoch (only with `debug_certify`).
    #[serde(default)]
    pub certificate_history: Vec<f64>,
}

impl TrainingState {
    pub fn initial(problem: &Problem, cfg: &TrainingConfig, gamma_r: f64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = cfg.rng(PARAM_STREAM);
        let shapes = vec![cfg.cell; problem.spec.n_agents()];
        let params = TrainableParams::random(&mut rng, problem.spec, shapes, gamma_r, cfg.theta_std, cfg.b_std)?;
        Ok(Self::from_params(params, cfg.optimizer))
    }

    pub fn from_params(params: TrainableParams, optimizer: OptimizerKind) -> Self {
        Self {
            params,
            optimizer: Optimizer::new(optimizer),
            epoch: 0,
            loss_history: Vec::new(),
            gain_history: Vec::new(),
            certificate_history: Vec::new(),
        }
    }

    /// `epoch,loss,gamma[0],...` rows.
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let n = self.params.b.len();
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        header.extend((0..n).map(|i| format!("gamma[{i}]")));
        if !self.certificate_history.is_empty() {
            header.push("max_eigenvalue".into());
        }
        wr.write_record(&header)?;
        for (e, loss) in self.loss_history.iter().enumerate() {
            let mut row = vec![e.to_string(), format!("{loss:.16e}")];
            row.extend(self.gain_history[e].iter().map(|g| format!("{g:.16e}")));
            if let Some(l) = self.certificate_history.get(e) {
                row.push(format!("{l:.16e}"));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub state: TrainingState,
    /// Loss after the last update.
    pub final_loss: f64,
    /// Certificate of the final parameters.
    pub certificate: LmiReport,
}

/// Runs epochs `state.epoch .. cfg.epochs`. `observer` sees the state after every epoch.
pub fn train(
    problem: &Problem,
    noise: &NoiseModel,
    cfg: &TrainingConfig,
    mut state: TrainingState,
    observer: &mut dyn FnMut(&TrainingState) -> Result<()>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    noise.validate(problem.spec.w_blocks().total())?;
    let with_gr = cfg.train_gamma_r;
    for epoch in state.epoch..cfg.epochs {
        let samples = cfg.sample_set(noise, epoch);
        let gains = state.params.gains(problem.structure)?;
        if cfg.debug_certify {
            let rep = certify(problem.spec, &gains, LMI_TOL)?;
            if !rep.feasible {
                return Err(Error::CertificationFailed {
                    epoch,
                    max_eigenvalue: rep.max_eigenvalue,
                });
            }
            state.certificate_history.push(rep.max_eigenvalue);
        }
        let grad = grad_params(problem, &state.params, &samples).map_err(|e| match e {
            Error::TrainingDiverged { sample, t, norm, .. } => Error::TrainingDiverged {
                epoch,
                sample,
                t,
                norm,
            },
            e => e,
        })?;
        if !grad.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                sample: 0,
                t: 0,
                norm: f64::NAN,
            });
        }
        state.loss_history.push(grad.loss);
        state.gain_history.push(gains.gammas());
        let mut flat = state.params.to_flat(with_gr);
        let g = grad.to_flat(with_gr, state.params.gamma_r);
        state.optimizer.apply(&mut flat, &g, cfg.learning_rate);
        state.params.set_flat(&flat, with_gr)?;
        state.epoch = epoch + 1;
        observer(&state)?;
    }
    let samples = cfg.sample_set(noise, cfg.epochs);
    let final_loss = empirical_loss(problem, &state.params, &samples).map_err(|e| match e {
        Error::TrainingDiverged { sample, t, norm, .. } => Error::TrainingDiverged {
            epoch: cfg.epochs,
            sample,
            t,
            norm,
        },
        e => e,
    })?;
    let certificate = certify(problem.spec, &state.params.gains(problem.structure)?, LMI_TOL)?;
    Ok(TrainingOutcome {
        state,
        final_loss,
        certificate,
    })
}

/// Persisted training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    /// Digest of the experiment configuration the run belongs to.
    pub config_hash: String,
    pub state: TrainingState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
