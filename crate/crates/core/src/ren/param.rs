//! Direct parametrization of gain-bounded acyclic RENs and its reverse-mode derivative.
//!
//! The cell is written in implicit form
//!
//! ```text
//! E xi_t         = F xi_{t-1} + B1' w_t + B2' v_t
//! Lambda nu_t    = C1' xi_{t-1} + D11' w_t + D12' v_t,     w_t = sigma(nu_t)
//! ```
//!
//! and the certificate matrix
//!
//! ```text
//! H = [ E + E^T - P   -C1'^T              F^T   ]
//!     [ -C1'          2 Lambda - D11' - D11'^T  B1'^T ]
//!     [ F             B1'                 P     ]
//! ```
//!
//! is set to `X^T X + eps I + L^T L / gamma + K^T R^{-1} K`, where the last two
//! terms absorb the output and input channels (`L = [C2 D21 0]`,
//! `K = [0 -D12'^T B2'^T] - D22^T L / gamma`, `R = gamma I - D22^T D22 / gamma`).
//! Any `X` then yields a cell that is dissipative with storage
//! `xi^T E^T P^{-1} E xi` for the supply `gamma |v|^2 - |z|^2 / gamma`,
//! i.e. has L2 gain at most `gamma`. `D22 = gamma M / sqrt(1 + |M|_F^2)`
//! keeps `|D22|_2 < gamma` so that `R` is positive definite.

use nalgebra::{DMatrix, DVector};

use super::{RenDims, RenMatrices, RenTheta};
use crate::error::{Error, Result};

/// Diagonal shift that keeps the certificate matrix positive definite.
pub const PARAM_EPSILON: f64 = 1e-3;

struct Raw {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    b2i: DMatrix<f64>,
    d12i: DMatrix<f64>,
    c2: DMatrix<f64>,
    d21: DMatrix<f64>,
    m: DMatrix<f64>,
}

fn unpack(theta: &[f64], dims: &RenDims) -> Result<Raw> {
    let expected = dims.theta_len();
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "REN parameter vector",
            expected,
            actual: theta.len(),
        });
    }
    let (c, s, q, r) = (dims.state, dims.neurons, dims.inputs, dims.outputs);
    let h = dims.h_size();
    let mut at = 0;
    let mut take = |rows: usize, cols: usize| {
        let m = DMatrix::from_row_slice(rows, cols, &theta[at..at + rows * cols]);
        at += rows * cols;
        m
    };
    Ok(Raw {
        x: take(h, h),
        y: take(c, c),
        b2i: take(c, q),
        d12i: take(s, q),
        c2: take(r, c),
        d21: take(r, s),
        m: take(r, q),
    })
}

fn pack(raw: &Raw) -> Vec<f64> {
    let mut out = Vec::new();
    for m in [&raw.x, &raw.y, &raw.b2i, &raw.d12i, &raw.c2, &raw.d21, &raw.m] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(m[(i, j)]);
            }
        }
    }
    out
}

/// Forward intermediates needed by both the map and its derivative.
struct Forward {
    raw: Raw,
    gamma: f64,
    squash: f64,
    d22: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    l: DMatrix<f64>,
    k: DMatrix<f64>,
    e: DMatrix<f64>,
    e_inv: DMatrix<f64>,
    p: DMatrix<f64>,
    lambda: DVector<f64>,
    mats: RenMatrices,
}

fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => m
            .try_inverse()
            .ok_or_else(|| Error::InvalidDimensions(format!("{what} is numerically singular"))),
    }
}

fn forward(params: &RenTheta, dims: &RenDims) -> Result<Forward> {
    dims.check()?;
    let gamma = params.gamma;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NonPositiveGain(gamma));
    }
    let raw = unpack(&params.theta, dims)?;
    let (c, s, q, r) = (dims.state, dims.neurons, dims.inputs, dims.outputs);
    let n = dims.h_size();

    let squash = 1.0 / (1.0 + raw.m.norm_squared()).sqrt();
    let d22 = &raw.m * (gamma * squash);
    let r_mat = DMatrix::identity(q, q) * gamma - d22.transpose() * &d22 / gamma;
    let r_inv = spd_inverse(r_mat, "input weight R")?;

    let mut l = DMatrix::zeros(r, n);
    l.view_mut((0, 0), (r, c)).copy_from(&raw.c2);
    l.view_mut((0, c), (r, s)).copy_from(&raw.d21);
    let mut g = DMatrix::zeros(q, n);
    g.view_mut((0, c), (q, s)).copy_from(&(-raw.d12i.transpose()));
    g.view_mut((0, c + s), (q, c)).copy_from(&raw.b2i.transpose());
    let k = g - d22.transpose() * &l / gamma;

    let h = raw.x.transpose() * &raw.x
        + DMatrix::identity(n, n) * PARAM_EPSILON
        + l.transpose() * &l / gamma
        + k.transpose() * &r_inv * &k;

    let h11 = h.view((0, 0), (c, c)).clone_owned();
    let h21 = h.view((c, 0), (s, c)).clone_owned();
    let h22 = h.view((c, c), (s, s)).clone_owned();
    let h31 = h.view((c + s, 0), (c, c)).clone_owned();
    let h32 = h.view((c + s, c), (c, s)).clone_owned();
    let p = h.view((c + s, c + s), (c, c)).clone_owned();

    let e = (&h11 + &p + &raw.y - raw.y.transpose()) * 0.5;
    let e_inv = e
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidDimensions("implicit state matrix E is singular".into()))?;
    let lambda = DVector::from_fn(s, |j, _| 0.5 * h22[(j, j)]);

    let mut c1 = DMatrix::zeros(s, c);
    let mut d11 = DMatrix::zeros(s, s);
    let mut d12 = DMatrix::zeros(s, q);
    for j in 0..s {
        let inv = 1.0 / lambda[j];
        for col in 0..c {
            c1[(j, col)] = -h21[(j, col)] * inv;
        }
        for col in 0..j {
            d11[(j, col)] = -h22[(j, col)] * inv;
        }
        for col in 0..q {
            d12[(j, col)] = raw.d12i[(j, col)] * inv;
        }
    }

    let mats = RenMatrices {
        a1: &e_inv * h31,
        b1: &e_inv * h32,
        b2: &e_inv * &raw.b2i,
        c1,
        d11,
        d12,
        c2: raw.c2.clone(),
        d21: raw.d21.clone(),
        d22: d22.clone(),
    };

    Ok(Forward {
        raw,
        gamma,
        squash,
        d22,
        r_inv,
        l,
        k,
        e,
        e_inv,
        p,
        lambda,
        mats,
    })
}

/// Maps unconstrained parameters to cell matrices with L2 gain at most `params.gamma`.
///
/// The parameter vector must have length [`RenDims::theta_len`]; its layout is
/// documented there. The map is smooth in both `theta` and `gamma`.
pub fn build_ren(params: &RenTheta, dims: &RenDims) -> Result<RenMatrices> {
    Ok(forward(params, dims)?.mats)
}

/// Reverse-mode derivative of [`build_ren`].
///
/// Given the gradient of a scalar with respect to every explicit matrix,
/// returns the gradient with respect to `theta` (same layout) and to `gamma`.
/// Entries of `grad.d11` on or above the diagonal are ignored.
pub fn build_ren_backward(
    params: &RenTheta,
    dims: &RenDims,
    grad: &RenMatrices,
) -> Result<(Vec<f64>, f64)> {
    let fw = forward(params, dims)?;
    let (c, s, q, r) = (dims.state, dims.neurons, dims.inputs, dims.outputs);
    let n = dims.h_size();
    let gamma = fw.gamma;
    let m = &fw.mats;

    let e_inv_t = fw.e_inv.transpose();
    let mut gh = DMatrix::zeros(n, n);

    // A1 = E^{-1} H31, B1 = E^{-1} H32, B2 = E^{-1} B2'
    gh.view_mut((c + s, 0), (c, c))
        .copy_from(&(&e_inv_t * &grad.a1));
    gh.view_mut((c + s, c), (c, s))
        .copy_from(&(&e_inv_t * &grad.b1));
    let mut g_b2i = &e_inv_t * &grad.b2;
    let g_e = -(&e_inv_t
        * (&grad.a1 * m.a1.transpose()
            + &grad.b1 * m.b1.transpose()
            + &grad.b2 * m.b2.transpose()));

    // C1 = -Lambda^{-1} H21, D11 = -Lambda^{-1} tril(H22), D12 = Lambda^{-1} D12'
    let mut g_d12i = DMatrix::zeros(s, q);
    for j in 0..s {
        let inv = 1.0 / fw.lambda[j];
        let mut g_lambda = 0.0;
        for col in 0..c {
            gh[(c + j, col)] = -grad.c1[(j, col)] * inv;
            g_lambda -= grad.c1[(j, col)] * m.c1[(j, col)] * inv;
        }
        for col in 0..j {
            gh[(c + j, c + col)] = -grad.d11[(j, col)] * inv;
            g_lambda -= grad.d11[(j, col)] * m.d11[(j, col)] * inv;
        }
        for col in 0..q {
            g_d12i[(j, col)] = grad.d12[(j, col)] * inv;
            g_lambda -= grad.d12[(j, col)] * m.d12[(j, col)] * inv;
        }
        gh[(c + j, c + j)] += 0.5 * g_lambda;
    }

    // E = (H11 + P + Y - Y^T) / 2, P = H33
    let half_ge = &g_e * 0.5;
    {
        let mut b = gh.view_mut((0, 0), (c, c));
        b += &half_ge;
    }
    {
        let mut b = gh.view_mut((c + s, c + s), (c, c));
        b += &half_ge;
    }
    let g_y = (&g_e - g_e.transpose()) * 0.5;

    // H = X^T X + eps I + L^T L / gamma + K^T R^{-1} K
    let gh_sym = &gh + gh.transpose();
    let g_x = &fw.raw.x * &gh_sym;
    let mut g_l = &fw.l * &gh_sym / gamma;
    let mut g_gamma = -(gh.component_mul(&(fw.l.transpose() * &fw.l))).sum() / (gamma * gamma);

    let g_k = &fw.r_inv * &fw.k * &gh_sym;
    let g_rinv = &fw.k * &gh * fw.k.transpose();
    let g_r = -(&fw.r_inv * g_rinv * &fw.r_inv);

    // K = G - D22^T L / gamma
    let mut g_d22 = grad.d22.clone();
    g_d22 -= &fw.l * g_k.transpose() / gamma;
    g_l -= &fw.d22 * &g_k / gamma;
    g_gamma += g_k.component_mul(&(fw.d22.transpose() * &fw.l)).sum() / (gamma * gamma);

    // R = gamma I - D22^T D22 / gamma
    g_gamma += g_r.trace()
        + g_r
            .component_mul(&(fw.d22.transpose() * &fw.d22))
            .sum()
            / (gamma * gamma);
    g_d22 -= &fw.d22 * (&g_r + g_r.transpose()) / gamma;

    // D22 = gamma * squash(M) * M
    let t = g_d22.component_mul(&fw.raw.m).sum();
    g_gamma += fw.squash * t;
    let g_m = &g_d22 * (gamma * fw.squash)
        - &fw.raw.m * (gamma * fw.squash.powi(3) * t);

    // L = [C2 D21 0], G = [0 -D12'^T B2'^T]
    let g_c2 = &grad.c2 + g_l.view((0, 0), (r, c));
    let g_d21 = &grad.d21 + g_l.view((0, c), (r, s));
    g_d12i -= g_k.view((0, c), (q, s)).transpose();
    g_b2i += g_k.view((0, c + s), (q, c)).transpose();

    let g_theta = pack(&Raw {
        x: g_x,
        y: g_y,
        b2i: g_b2i,
        d12i: g_d12i,
        c2: g_c2,
        d21: g_d21,
        m: g_m,
    });
    Ok((g_theta, g_gamma))
}

/// Storage matrix and neuron multipliers certifying the gain bound of a built cell.
#[derive(Debug, Clone)]
pub struct RenCertificate {
    /// `E^T P^{-1} E`, positive definite.
    pub storage: DMatrix<f64>,
    /// Diagonal multipliers of the slope-restricted neurons, all positive.
    pub multipliers: DVector<f64>,
}

impl RenCertificate {
    pub fn from_params(params: &RenTheta, dims: &RenDims) -> Result<Self> {
        let fw = forward(params, dims)?;
        let p_inv = spd_inverse(fw.p.clone(), "P")?;
        let storage = fw.e.transpose() * p_inv * &fw.e;
        Ok(Self {
            storage: (&storage + storage.transpose()) * 0.5,
            multipliers: fw.lambda,
        })
    }

    /// Dissipation matrix over `(xi, sigma(nu), v)`; negative semidefinite iff
    /// `V(xi+) - V(xi) - gamma |v|^2 + |z|^2 / gamma + 2 w^T Lambda (nu - w) <= 0`
    /// holds as a quadratic form, which gives gain `<= gamma`.
    pub fn dissipation_matrix(&self, mats: &RenMatrices, gamma: f64) -> DMatrix<f64> {
        let d = mats.dims();
        let (c, s, q) = (d.state, d.neurons, d.inputs);
        let n = c + s + q;
        let mut next = DMatrix::zeros(c, n);
        next.view_mut((0, 0), (c, c)).copy_from(&mats.a1);
        next.view_mut((0, c), (c, s)).copy_from(&mats.b1);
        next.view_mut((0, c + s), (c, q)).copy_from(&mats.b2);
        let mut out = DMatrix::zeros(d.outputs, n);
        out.view_mut((0, 0), (d.outputs, c)).copy_from(&mats.c2);
        out.view_mut((0, c), (d.outputs, s)).copy_from(&mats.d21);
        out.view_mut((0, c + s), (d.outputs, q)).copy_from(&mats.d22);

        let lam = DMatrix::from_diagonal(&self.multipliers);
        // 2 w^T Lambda (C1 xi + D11 w + D12 v - w)
        let mut sector = DMatrix::zeros(n, n);
        let lc1 = &lam * &mats.c1;
        let ld11 = &lam * &mats.d11;
        let ld12 = &lam * &mats.d12;
        sector.view_mut((c, 0), (s, c)).copy_from(&lc1);
        sector.view_mut((0, c), (c, s)).copy_from(&lc1.transpose());
        sector
            .view_mut((c, c), (s, s))
            .copy_from(&(&ld11 + ld11.transpose() - &lam * 2.0));
        sector.view_mut((c, c + s), (s, q)).copy_from(&ld12);
        sector.view_mut((c + s, c), (q, s)).copy_from(&ld12.transpose());

        let mut base = DMatrix::zeros(n, n);
        base.view_mut((0, 0), (c, c)).copy_from(&(-&self.storage));
        for i in 0..q {
            base[(c + s + i, c + s + i)] = -gamma;
        }
        let m = next.transpose() * &self.storage * &next + base + out.transpose() * &out / gamma
            + sector;
        (&m + m.transpose()) * 0.5
    }
}
