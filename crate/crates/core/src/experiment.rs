//! Experiment description shared by the command line and the test suites.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::blkdiag;
use crate::network::{
    build_from_topology, gain_structure, AgentDims, AgentStructure, InterconnectionFile,
    InterconnectionSpec, Topology,
};
use crate::plant::{InitialCondition, NoiseModel, Spring, VehicleFleet, VehicleParams};
use crate::ren::Activation;
use crate::training::{
    CellShape, FormationEdge, LossConfig, Obstacle, OptimizerKind, Problem, StageLoss,
    TrainingConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub agents: usize,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

/// Complete experiment. Only the interconnection part is needed for gain
/// allocation and certification; simulation and training also need the
/// plant, noise and loss sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gamma_r: f64,
    #[serde(default)]
    pub activation: Activation,
    /// Free gain scalars used when no checkpoint is given.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    /// Per-agent dimensions for the default interconnection.
    #[serde(default)]
    pub agents: Vec<AgentDims>,
    /// Scale applied to the `M_vz` entries of the default interconnection.
    #[serde(default = "unit")]
    pub coupling_gain: f64,
    /// Explicit matrices; replaces the default interconnection.
    #[serde(default)]
    pub interconnection: Option<InterconnectionFile>,
    #[serde(default)]
    pub vehicles: Option<VehicleParams>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn unit() -> f64 {
    1.0
}

/// Resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: InterconnectionSpec,
    pub structure: Vec<AgentStructure>,
}

/// Experiment with a plant and a loss, ready to simulate or train.
#[derive(Debug, Clone)]
pub struct PlantExperiment {
    pub base: Experiment,
    pub fleet: VehicleFleet,
    pub noise: NoiseModel,
    pub loss: StageLoss,
}

impl ExperimentConfig {
    /// Resolves the interconnection and checks every structural condition.
    pub fn build(&self) -> Result<Experiment> {
        if !(self.gamma_r > 0.0 && self.gamma_r.is_finite()) {
            return Err(Error::NonPositiveGain(self.gamma_r));
        }
        let spec = match &self.interconnection {
            Some(file) => {
                let mut file = file.clone();
                if let Some(t) = &self.topology {
                    if file.edges.is_empty() {
                        file.edges = t.edges.clone();
                    }
                }
                file.into_spec()?
            }
            None => {
                let t = self
                    .topology
                    .as_ref()
                    .ok_or_else(|| Error::Config("either topology or interconnection is required".into()))?;
                let topology = Topology::new(t.agents, t.edges.iter().copied())?;
                let mut spec = build_from_topology(&topology, &self.agents)?;
                spec.m_vz *= self.coupling_gain;
                spec
            }
        };
        let spec = spec.validated()?;
        if let Some(b) = &self.b {
            if b.len() != spec.n_agents() {
                return Err(Error::Config(format!(
                    "b has {} entries for {} agents",
                    b.len(),
                    spec.n_agents()
                )));
            }
        }
        let structure = gain_structure(&spec);
        Ok(Experiment {
            config: self.clone(),
            spec,
            structure,
        })
    }

    pub fn build_plant(&self) -> Result<PlantExperiment> {
        let base = self.build()?;
        let missing = |s: &str| Error::Config(format!("section [{s}] is required for this command"));
        let vehicles = self.vehicles.clone().ok_or_else(|| missing("vehicles"))?;
        let fleet = VehicleFleet::new(vehicles, base.spec.topology.clone())?;
        let agents = fleet.params.agents();
        for (i, a) in base.spec.agents.iter().enumerate() {
            if a.state != VehicleFleet::STATE || a.input != VehicleFleet::INPUT {
                return Err(Error::Config(format!(
                    "agent {i} must have state 4 and input 2 for the vehicle plant"
                )));
            }
        }
        let noise = self.noise.clone().ok_or_else(|| missing("noise"))?;
        noise.validate(VehicleFleet::STATE * agents)?;
        let mut loss = self.loss.clone().ok_or_else(|| missing("loss"))?;
        if loss.targets.is_empty() {
            loss.targets = fleet.params.targets.clone();
        }
        let loss = loss.compile(VehicleFleet::STATE * agents, VehicleFleet::INPUT * agents)?;
        Ok(PlantExperiment {
            base,
            fleet,
            noise,
            loss,
        })
    }

    pub fn training(&self) -> Result<&TrainingConfig> {
        self.training
            .as_ref()
            .ok_or_else(|| Error::Config("section [training] is required for this command".into()))
    }

    /// The four-vehicle formation benchmark. Controller coupling is kept weak
    /// so the allocation leaves room for large local gains.
    pub fn benchmark() -> Self {
        let n = 4;
        let targets = vec![[-2.0, -2.25], [2.0, -2.25], [2.0, -3.75], [-2.0, -3.75]];
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let delta = [4.0, 1.5, 4.0, 1.5];
        let springs: Vec<Spring> = edges
            .iter()
            .zip(delta)
            .map(|(&(a, b), distance)| Spring {
                a,
                b,
                stiffness: 1.0,
                distance,
            })
            .collect();
        let q = blkdiag(&[
            DMatrix::identity(16, 16),
            DMatrix::identity(8, 8) * 0.01,
        ]);
        let mut mean = vec![0.0; 16];
        for i in 0..n {
            mean[4 * i + 1] = 6.0;
        }
        let mut std = vec![0.0; 16];
        for i in 0..n {
            std[4 * i] = 0.5;
            std[4 * i + 1] = 0.5;
        }
        Self {
            gamma_r: 100.0,
            activation: Activation::Tanh,
            b: None,
            topology: Some(TopologyConfig {
                agents: n,
                edges: edges.clone(),
            }),
            agents: vec![
                AgentDims {
                    state: 4,
                    input: 2,
                    ren_input: 8,
                    ren_output: 2,
                };
                n
            ],
            coupling_gain: 1e-4,
            interconnection: None,
            vehicles: Some(VehicleParams {
                mass: vec![1.0; n],
                friction: vec![1.0; n],
                sampling_time: 0.05,
                reference_gain: vec![1.0; n],
                targets,
                springs: springs.clone(),
            }),
            noise: Some(NoiseModel {
                initial: InitialCondition { mean, std },
                process_std: 0.0,
                process_support: 0,
            }),
            loss: Some(LossConfig {
                q,
                targets: Vec::new(),
                position_stride: 4,
                collision_distance: 0.5,
                collision_weight: 100.0,
                obstacles: vec![
                    Obstacle {
                        center: [-3.5, 0.5],
                        shape: [[6.25, 0.0], [0.0, 0.49]],
                    },
                    Obstacle {
                        center: [3.5, 0.5],
                        shape: [[6.25, 0.0], [0.0, 0.49]],
                    },
                ],
                obstacle_weight: 100.0,
                formation: springs
                    .iter()
                    .map(|s| FormationEdge {
                        a: s.a,
                        b: s.b,
                        distance: s.distance,
                    })
                    .collect(),
                formation_weight: 1.0,
                epsilon: 1e-3,
            }),
            training: Some(TrainingConfig {
                learning_rate: 0.001,
                epochs: 1500,
                samples: 10,
                horizon: 100,
                seed: 0,
                cell: CellShape {
                    state: 25,
                    neurons: 25,
                },
                optimizer: OptimizerKind::Gd,
                resample: false,
                train_gamma_r: false,
                debug_certify: false,
                theta_std: 0.2,
                b_std: 0.1,
            }),
            output_dir: None,
        }
    }
}

impl Experiment {
    /// Free gain scalars from the config, or zeros.
    pub fn b(&self) -> Vec<f64> {
        self.config.b.clone().unwrap_or_else(|| vec![0.0; self.spec.n_agents()])
    }
}

impl PlantExperiment {
    pub fn problem(&self) -> Problem<'_> {
        Problem {
            plant: &self.fleet,
            spec: &self.base.spec,
            structure: &self.base.structure,
            loss: &self.loss,
            activation: self.base.config.activation,
        }
    }
}
