//! Recurrent equilibrium network (REN) cells.
//!
//! A cell maps an input sequence `v` to an output sequence `z` through
//!
//! ```text
//! nu_t   = C1 xi_{t-1} + D11 sigma(nu_t) + D12 v_t
//! xi_t   = A1 xi_{t-1} + B1 sigma(nu_t) + B2 v_t
//! z_t    = C2 xi_{t-1} + D21 sigma(nu_t) + D22 v_t,      xi_{-1} = 0
//! ```
//!
//! [`build_ren`] maps an unconstrained parameter vector and a gain `gamma`
//! to matrices whose cell has L2 gain at most `gamma`, whatever the
//! parameters are. `D11` is always strictly lower triangular, so the
//! equilibrium layer is solved by one forward substitution.

mod cell;
mod param;

pub use cell::{
    equilibrium_solve, ren_rollout, ren_step, ren_step_backward, ren_step_traced, RenRollout,
    RenStepTrace,
};
pub use param::{build_ren, build_ren_backward, RenCertificate, PARAM_EPSILON};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenDims {
    /// Hidden state size `c`.
    pub state: usize,
    /// Number of neurons `s`.
    pub neurons: usize,
    /// Input size `q_i`.
    pub inputs: usize,
    /// Output size `r_i`.
    pub outputs: usize,
}

impl RenDims {
    pub fn new(state: usize, neurons: usize, inputs: usize, outputs: usize) -> Result<Self> {
        let dims = Self {
            state,
            neurons,
            inputs,
            outputs,
        };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if self.state == 0 || self.neurons == 0 || self.inputs == 0 || self.outputs == 0 {
            return Err(Error::InvalidDimensions(format!(
                "all REN dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Side of the square matrix `X`, i.e. `2c + s`.
    pub(crate) fn h_size(&self) -> usize {
        2 * self.state + self.neurons
    }

    /// Length of the unconstrained parameter vector.
    ///
    /// Layout (every block row-major, in this order):
    ///
    /// | block | shape        | role                                    |
    /// |-------|--------------|-----------------------------------------|
    /// | `X`   | (2c+s)×(2c+s)| Gram factor of the certificate matrix   |
    /// | `Y`   | c×c          | skew part of the implicit state matrix  |
    /// | `B2`  | c×q          | implicit input-to-state map             |
    /// | `D12` | s×q          | implicit input-to-neuron map            |
    /// | `C2`  | r×c          | state-to-output map                     |
    /// | `D21` | r×s          | neuron-to-output map                    |
    /// | `D22` | r×q          | raw feedthrough, squashed below `gamma` |
    pub fn theta_len(&self) -> usize {
        let (c, s, q, r) = (self.state, self.neurons, self.inputs, self.outputs);
        let h = self.h_size();
        h * h + c * c + c * q + s * q + r * c + r * s + r * q
    }
}

/// Unconstrained parameters of one cell together with its prescribed gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenTheta {
    pub theta: Vec<f64>,
    pub gamma: f64,
}

impl RenTheta {
    pub fn new(theta: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::NonPositiveGain(gamma));
        }
        Ok(Self { theta, gamma })
    }

    pub fn zeros(dims: &RenDims, gamma: f64) -> Result<Self> {
        Self::new(vec![0.0; dims.theta_len()], gamma)
    }
}

/// Explicit cell matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RenMatrices {
    pub a1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
}

impl RenMatrices {
    /// All-zero matrices of the right shapes. Also used as a gradient accumulator.
    pub fn zeros(dims: &RenDims) -> Self {
        let (c, s, q, r) = (dims.state, dims.neurons, dims.inputs, dims.outputs);
        Self {
            a1: DMatrix::zeros(c, c),
            b1: DMatrix::zeros(c, s),
            b2: DMatrix::zeros(c, q),
            c1: DMatrix::zeros(s, c),
            d11: DMatrix::zeros(s, s),
            d12: DMatrix::zeros(s, q),
            c2: DMatrix::zeros(r, c),
            d21: DMatrix::zeros(r, s),
            d22: DMatrix::zeros(r, q),
        }
    }

    pub fn dims(&self) -> RenDims {
        RenDims {
            state: self.a1.nrows(),
            neurons: self.c1.nrows(),
            inputs: self.b2.ncols(),
            outputs: self.c2.nrows(),
        }
    }

    /// Checks that all blocks agree with [`Self::dims`] and that `D11` is strictly lower triangular.
    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        d.check()?;
        let expect = [
            ("A1", &self.a1, d.state, d.state),
            ("B1", &self.b1, d.state, d.neurons),
            ("B2", &self.b2, d.state, d.inputs),
            ("C1", &self.c1, d.neurons, d.state),
            ("D11", &self.d11, d.neurons, d.neurons),
            ("D12", &self.d12, d.neurons, d.inputs),
            ("C2", &self.c2, d.outputs, d.state),
            ("D21", &self.d21, d.outputs, d.neurons),
            ("D22", &self.d22, d.outputs, d.inputs),
        ];
        for (name, m, r, c) in expect {
            if m.shape() != (r, c) {
                return Err(Error::InvalidDimensions(format!(
                    "{name} has shape {:?}, expected {:?}",
                    m.shape(),
                    (r, c)
                )));
            }
        }
        for i in 0..d.neurons {
            for j in i..d.neurons {
                if self.d11[(i, j)] != 0.0 {
                    return Err(Error::InvalidDimensions(format!(
                        "D11 must be strictly lower triangular, entry ({i}, {j}) is {}",
                        self.d11[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &RenMatrices) {
        self.a1 += &other.a1;
        self.b1 += &other.b1;
        self.b2 += &other.b2;
        self.c1 += &other.c1;
        self.d11 += &other.d11;
        self.d12 += &other.d12;
        self.c2 += &other.c2;
        self.d21 += &other.d21;
        self.d22 += &other.d22;
    }
}

/// Hidden state of a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RenState {
    pub xi: DVector<f64>,
}

impl RenState {
    pub fn zeros(state_dim: usize) -> Self {
        Self {
            xi: DVector::zeros(state_dim),
        }
    }
}

/// Elementwise neuron nonlinearity. Both variants satisfy `sigma(0) = 0`
/// and have slopes in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative; ReLU takes the subgradient 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}
