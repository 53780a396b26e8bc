use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StageLoss, TrainableParams};
use crate::error::{Error, Result};
use crate::network::{AgentStructure, GainAllocation, InterconnectionSpec};
use crate::plant::{closed_loop_rollout, ControllerNetwork, NetworkPlant, RolloutRecord};
use crate::ren::{build_ren_backward, ren_step_backward, Activation, RenMatrices, RenTheta};

/// Everything needed to evaluate the training objective for a given parameter set.
pub struct Problem<'a> {
    pub plant: &'a dyn NetworkPlant,
    pub spec: &'a InterconnectionSpec,
    pub structure: &'a [AgentStructure],
    pub loss: &'a StageLoss,
    pub activation: Activation,
}

/// Derivatives of the empirical loss with respect to every free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub loss: f64,
    pub theta: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub gamma_r: f64,
    /// Number of simulated rollouts.
    pub rollouts: usize,
    /// Number of simulated time steps over all rollouts.
    pub steps: usize,
}

impl GradientRecord {
    /// Same layout as [`TrainableParams::to_flat`]; the last entry is with respect to `ln gamma_R`.
    pub fn to_flat(&self, with_gamma_r: bool, gamma_r: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.theta.iter().flatten().copied().collect();
        out.extend_from_slice(&self.b);
        if with_gamma_r {
            out.push(self.gamma_r * gamma_r);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.theta.iter().flatten().all(|x| x.is_finite())
            && self.b.iter().all(|x| x.is_finite())
            && self.gamma_r.is_finite()
    }
}

/// `sum_t stage_loss(x_t, u_t)` over one rollout.
pub fn rollout_cost(loss: &StageLoss, rec: &RolloutRecord) -> f64 {
    rec.x.iter().zip(&rec.u).map(|(x, u)| loss.value(x, u)).sum()
}

fn simulate(
    problem: &Problem,
    ctrl: &ControllerNetwork,
    samples: &[Vec<DVector<f64>>],
) -> Result<Vec<RolloutRecord>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(s, w)| {
            closed_loop_rollout(problem.plant, ctrl, w).map_err(|e| match e {
                Error::Diverged { t, norm } => Error::TrainingDiverged {
                    epoch: 0,
                    sample: s,
                    t,
                    norm,
                },
                e => e,
            })
        })
        .collect()
}

/// `(1 / n_exp) sum_s sum_t stage_loss` over the given disturbance samples.
pub fn empirical_loss(
    problem: &Problem,
    params: &TrainableParams,
    samples: &[Vec<DVector<f64>>],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidDimensions("at least one sample is required".into()));
    }
    let ctrl = params.controller(problem.spec, problem.structure, problem.activation)?;
    let recs = simulate(problem, &ctrl, samples)?;
    let total: f64 = recs.iter().map(|r| rollout_cost(problem.loss, r)).sum();
    Ok(total / samples.len() as f64)
}

/// Reverse pass through one rollout. Accumulates cell-matrix gradients of
/// `scale * sum_t stage_loss` into `grads`.
///
/// The reconstructed disturbance equals the injected one whatever the
/// parameters are, so it enters as a constant.
pub fn rollout_backward(
    problem: &Problem,
    ctrl: &ControllerNetwork,
    rec: &RolloutRecord,
    scale: f64,
    grads: &mut [RenMatrices],
) -> f64 {
    let spec = &ctrl.spec;
    let (vb, zb) = (spec.v_blocks(), spec.z_blocks());
    let n_agents = ctrl.n_agents();
    let horizon = rec.horizon();
    let mut cost = 0.0;
    let mut g_x_next: Option<DVector<f64>> = None;
    let mut g_v_next: Option<DVector<f64>> = None;
    let mut g_xi: Vec<DVector<f64>> = ctrl.cells.iter().map(|c| DVector::zeros(c.a1.nrows())).collect();
    let zero_xi: Vec<DVector<f64>> = g_xi.clone();

    for t in (0..=horizon).rev() {
        let (x, u) = (&rec.x[t], &rec.u[t]);
        let (l, mut gx, mut gu) = problem.loss.value_and_grad(x, u);
        cost += l;
        gx *= scale;
        gu *= scale;
        if let Some(gn) = &g_x_next {
            let (px, pu) = problem.plant.step_vjp(x, u, gn);
            gx += px;
            gu += pu;
        }
        let mut g_z = spec.m_uz.tr_mul(&gu);
        if let Some(gv) = &g_v_next {
            g_z += spec.m_vz.tr_mul(gv);
        }
        let mut g_v = DVector::zeros(vb.total());
        for i in 0..n_agents {
            let xi_prev = if t == 0 { &zero_xi[i] } else { &rec.xi[t - 1][i] };
            let vi = rec.v[t].rows(vb.range(i).start, vb.size(i)).clone_owned();
            let gzi = g_z.rows(zb.range(i).start, zb.size(i)).clone_owned();
            let (g_prev, gvi) = ren_step_backward(
                &ctrl.cells[i],
                ctrl.activation,
                xi_prev,
                &vi,
                &rec.traces[t][i],
                &g_xi[i],
                &gzi,
                &mut grads[i],
            );
            g_xi[i] = g_prev;
            g_v.rows_mut(vb.range(i).start, vb.size(i)).copy_from(&gvi);
        }
        g_x_next = Some(gx);
        g_v_next = Some(g_v);
    }
    cost
}

/// Pulls cell-matrix gradients back to `theta`, `b` and `gamma_R`.
pub fn params_backward(
    problem: &Problem,
    params: &TrainableParams,
    gains: &GainAllocation,
    mat_grads: &[RenMatrices],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    let dims = params.check(problem.spec)?;
    let mut g_theta = Vec::with_capacity(dims.len());
    let mut g_b = Vec::with_capacity(dims.len());
    let mut g_gr = 0.0;
    for (i, d) in dims.iter().enumerate() {
        let a = &gains.agents[i];
        let (gt, g_gamma) = build_ren_backward(&RenTheta::new(params.theta[i].clone(), a.gamma)?, d, &mat_grads[i])?;
        g_theta.push(gt);
        g_b.push(g_gamma * a.dgamma_db);
        g_gr += g_gamma * a.dgamma_dgamma_r;
    }
    Ok((g_theta, g_b, g_gr))
}

/// Loss and exact gradient by backpropagation through time.
///
/// Samples are simulated and differentiated in parallel; per-sample
/// contributions are summed in sample order, so the result does not depend
/// on the thread count.
pub fn grad_params(
    problem: &Problem,
    params: &TrainableParams,
    samples: &[Vec<DVector<f64>>],
) -> Result<GradientRecord> {
    if samples.is_empty() {
        return Err(Error::InvalidDimensions("at least one sample is required".into()));
    }
    let dims = params.check(problem.spec)?;
    let ctrl = params.controller(problem.spec, problem.structure, problem.activation)?;
    let scale = 1.0 / samples.len() as f64;
    let recs = simulate(problem, &ctrl, samples)?;
    let per_sample: Vec<(f64, Vec<RenMatrices>)> = recs
        .par_iter()
        .map(|rec| {
            let mut g: Vec<RenMatrices> = dims.iter().map(RenMatrices::zeros).collect();
            rollout_backward(problem, &ctrl, rec, scale, &mut g);
            // same summation as `empirical_loss`
            (rollout_cost(problem.loss, rec), g)
        })
        .collect();
    let mut total = 0.0;
    let mut mat_grads: Vec<RenMatrices> = dims.iter().map(RenMatrices::zeros).collect();
    for (cost, g) in &per_sample {
        total += cost;
        for (acc, gi) in mat_grads.iter_mut().zip(g) {
            acc.add_assign(gi);
        }
    }
    let (theta, b, gamma_r) = params_backward(problem, params, &ctrl.gains, &mat_grads)?;
    Ok(GradientRecord {
        loss: total / samples.len() as f64,
        theta,
        b,
        gamma_r,
        rollouts: recs.len(),
        steps: recs.iter().map(|r| r.x.len()).sum(),
    })
}
