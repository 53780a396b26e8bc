//! Stage losses, exact gradients through the unrolled closed loop, and the
//! training loop over the free controller parameters.

mod grad;
mod loss;
mod optim;
mod params;
mod train;

pub use grad::{
    empirical_loss, grad_params, params_backward, rollout_backward, rollout_cost, GradientRecord,
    Problem,
};
pub use loss::{FormationEdge, LossConfig, Obstacle, StageLoss, StageTerms};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{CellShape, TrainableParams};
pub use train::{train, Checkpoint, TrainingConfig, TrainingOutcome, TrainingState};
