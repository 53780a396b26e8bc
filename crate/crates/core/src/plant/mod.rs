//! Networked plants, disturbance models and closed-loop simulation.

mod noise;
mod rollout;
mod vehicle;

pub use noise::{InitialCondition, NoiseModel};
pub use rollout::{
    closed_loop_rollout, reconstruct_noise, ControllerNetwork, RolloutRecord, TrajectoryTable,
    DIVERGENCE_LIMIT,
};
pub use vehicle::{
    base_controller_force, vehicle_step, Spring, Vec2, VehicleFleet, VehicleParams,
    COINCIDENT_EPS,
};

use nalgebra::DVector;

use crate::linalg::Blocks;
use crate::network::Topology;

/// Interconnected discrete-time plant `x_{t+1}^i = f^i(x_t^{N_i}, u_t^i) + w_{t+1}^i`.
pub trait NetworkPlant: Send + Sync {
    fn topology(&self) -> &Topology;
    fn state_blocks(&self) -> Blocks;
    fn input_blocks(&self) -> Blocks;

    /// `f^i`. Reads only the blocks of `x` that belong to `N_i`.
    fn agent_step(&self, i: usize, x: &DVector<f64>, u_i: &[f64]) -> DVector<f64>;

    /// Stacked `f(x, u)`.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (xb, ub) = (self.state_blocks(), self.input_blocks());
        let mut out = DVector::zeros(xb.total());
        for i in 0..xb.len() {
            let next = self.agent_step(i, x, &u.as_slice()[ub.range(i)]);
            out.rows_mut(xb.range(i).start, xb.size(i)).copy_from(&next);
        }
        out
    }

    /// Vector-Jacobian product of [`Self::step`]: returns `(J_x^T g, J_u^T g)`.
    fn step_vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        g_next: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>);

    /// Column suffixes of one agent's state entries.
    fn state_names(&self, i: usize) -> Vec<String>;

    /// Column suffixes of one agent's input entries.
    fn input_names(&self, i: usize) -> Vec<String>;
}
