use nalgebra::DVector;

use super::{Activation, RenMatrices, RenState};
use crate::error::{Error, Result};

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Solves `nu = C1 xi + D11 sigma(nu) + D12 v` by forward substitution.
///
/// `D11` must be strictly lower triangular; entries on or above the
/// diagonal are never read.
pub fn equilibrium_solve(
    mat: &RenMatrices,
    xi_prev: &RenState,
    v: &DVector<f64>,
    act: Activation,
) -> DVector<f64> {
    let s = mat.c1.nrows();
    let mut nu = &mat.c1 * &xi_prev.xi + &mat.d12 * v;
    let mut w = DVector::zeros(s);
    for j in 0..s {
        let mut acc = nu[j];
        for k in 0..j {
            acc += mat.d11[(j, k)] * w[k];
        }
        nu[j] = acc;
        w[j] = act.eval(acc);
    }
    nu
}

/// Neuron values of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenStepTrace {
    pub nu: DVector<f64>,
    pub omega: DVector<f64>,
}

/// One step of the cell: returns the next state and the output.
pub fn ren_step(
    mat: &RenMatrices,
    xi_prev: &RenState,
    v: &DVector<f64>,
    act: Activation,
) -> Result<(RenState, DVector<f64>)> {
    let (next, z, _) = ren_step_traced(mat, xi_prev, v, act)?;
    Ok((next, z))
}

pub fn ren_step_traced(
    mat: &RenMatrices,
    xi_prev: &RenState,
    v: &DVector<f64>,
    act: Activation,
) -> Result<(RenState, DVector<f64>, RenStepTrace)> {
    check_len("REN state", mat.a1.nrows(), xi_prev.xi.len())?;
    check_len("REN input", mat.b2.ncols(), v.len())?;
    let nu = equilibrium_solve(mat, xi_prev, v, act);
    let omega = nu.map(|x| act.eval(x));
    let xi = &mat.a1 * &xi_prev.xi + &mat.b1 * &omega + &mat.b2 * v;
    let z = &mat.c2 * &xi_prev.xi + &mat.d21 * &omega + &mat.d22 * v;
    Ok((RenState { xi }, z, RenStepTrace { nu, omega }))
}

/// Reverse-mode step. Accumulates matrix gradients into `grads` and returns
/// the gradients with respect to the previous state and the input.
#[allow(clippy::too_many_arguments)]
pub fn ren_step_backward(
    mat: &RenMatrices,
    act: Activation,
    xi_prev: &DVector<f64>,
    v: &DVector<f64>,
    trace: &RenStepTrace,
    g_xi_next: &DVector<f64>,
    g_z: &DVector<f64>,
    grads: &mut RenMatrices,
) -> (DVector<f64>, DVector<f64>) {
    let omega = &trace.omega;
    grads.a1.ger(1.0, g_xi_next, xi_prev, 1.0);
    grads.b1.ger(1.0, g_xi_next, omega, 1.0);
    grads.b2.ger(1.0, g_xi_next, v, 1.0);
    grads.c2.ger(1.0, g_z, xi_prev, 1.0);
    grads.d21.ger(1.0, g_z, omega, 1.0);
    grads.d22.ger(1.0, g_z, v, 1.0);

    let mut g_omega = mat.b1.tr_mul(g_xi_next) + mat.d21.tr_mul(g_z);
    let mut g_xi = mat.a1.tr_mul(g_xi_next) + mat.c2.tr_mul(g_z);
    let mut g_v = mat.b2.tr_mul(g_xi_next) + mat.d22.tr_mul(g_z);

    // Reverse the forward substitution: later neurons feed earlier ones' adjoints.
    let s = omega.len();
    let mut g_nu = DVector::zeros(s);
    for j in (0..s).rev() {
        let g = g_omega[j] * act.derivative(trace.nu[j]);
        g_nu[j] = g;
        if g != 0.0 {
            for k in 0..j {
                g_omega[k] += mat.d11[(j, k)] * g;
                grads.d11[(j, k)] += g * omega[k];
            }
        }
    }
    grads.c1.ger(1.0, &g_nu, xi_prev, 1.0);
    grads.d12.ger(1.0, &g_nu, v, 1.0);
    g_xi += mat.c1.tr_mul(&g_nu);
    g_v += mat.d12.tr_mul(&g_nu);
    (g_xi, g_v)
}

/// Output of [`ren_rollout`].
#[derive(Debug, Clone)]
pub struct RenRollout {
    pub outputs: Vec<DVector<f64>>,
    pub input_norm: f64,
    pub output_norm: f64,
}

impl RenRollout {
    /// `|z|_2 / |v|_2` over the simulated horizon.
    pub fn gain_ratio(&self) -> Result<f64> {
        if self.input_norm == 0.0 {
            return Err(Error::ZeroInputNorm);
        }
        Ok(self.output_norm / self.input_norm)
    }
}

/// Simulates the cell from `xi_{-1} = 0` over the whole input sequence.
pub fn ren_rollout(
    mat: &RenMatrices,
    inputs: &[DVector<f64>],
    act: Activation,
) -> Result<RenRollout> {
    if inputs.is_empty() {
        return Err(Error::InvalidDimensions(
            "rollout needs at least one input".into(),
        ));
    }
    let mut state = RenState::zeros(mat.a1.nrows());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut in_sq = 0.0;
    let mut out_sq = 0.0;
    for v in inputs {
        let (next, z) = ren_step(mat, &state, v, act)?;
        in_sq += v.norm_squared();
        out_sq += z.norm_squared();
        outputs.push(z);
        state = next;
    }
    Ok(RenRollout {
        outputs,
        input_norm: in_sq.sqrt(),
        output_norm: out_sq.sqrt(),
    })
}
