use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{GainAllocation, IndexSets, InterconnectionSpec};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, max_asymmetry, symmetrize};

/// Default relative tolerance on the largest eigenvalue.
pub const LMI_TOL: f64 = 1e-8;

/// Network dissipation matrix in the stacked coordinates `(z, w)`.
///
/// It equals `Q^T blkdiag(Pi_v, -Pi_z, -gamma_R^2 I, I) Q` with
/// `Q = [M_vz M_vw; I 0; 0 I; M_uz 0]`, `Pi_v = blkdiag(alpha_i gamma_i^2 I)`
/// and `Pi_z = blkdiag(alpha_i I)`. It is negative semidefinite exactly when
/// the interconnection of gain-`gamma_i` agents has gain at most `gamma_R`.
pub fn assemble_lmi(spec: &InterconnectionSpec, gains: &GainAllocation) -> Result<DMatrix<f64>> {
    let n_agents = spec.n_agents();
    if gains.agents.len() != n_agents {
        return Err(Error::DimensionMismatch {
            context: "gain allocation",
            expected: n_agents,
            actual: gains.agents.len(),
        });
    }
    let (vb, zb) = (spec.v_blocks(), spec.z_blocks());
    let (q, r, n) = (vb.total(), zb.total(), spec.m_vw.ncols());
    let mut pi_v = DVector::zeros(q);
    let mut pi_z = DVector::zeros(r);
    for (i, g) in gains.agents.iter().enumerate() {
        for k in vb.range(i) {
            pi_v[k] = g.alpha * g.gamma * g.gamma;
        }
        for k in zb.range(i) {
            pi_z[k] = g.alpha;
        }
    }
    let mut stacked_v = DMatrix::zeros(q, r + n);
    stacked_v.view_mut((0, 0), (q, r)).copy_from(&spec.m_vz);
    stacked_v.view_mut((0, r), (q, n)).copy_from(&spec.m_vw);
    let weighted = DMatrix::from_fn(q, r + n, |a, b| pi_v[a] * stacked_v[(a, b)]);
    let mut out = stacked_v.transpose() * weighted;
    let h = spec.m_uz.transpose() * &spec.m_uz;
    {
        let mut top = out.view_mut((0, 0), (r, r));
        top += &h;
    }
    for k in 0..r {
        out[(k, k)] -= pi_z[k];
    }
    let g2 = gains.gamma_r * gains.gamma_r;
    for k in r..r + n {
        out[(k, k)] -= g2;
    }
    Ok(symmetrize(&out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    pub max_eigenvalue: f64,
    pub threshold: f64,
    pub feasible: bool,
    pub dimension: usize,
    pub gamma_r: f64,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let asym = max_asymmetry(m);
    if asym > 1e-9 * frobenius(m).max(1.0) {
        return Err(Error::Asymmetric(asym));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `lambda_max(m) <= tol * max(1, ||m||_F)`.
pub fn check_negative_semidefinite(m: &DMatrix<f64>, tol: f64) -> Result<(f64, f64, bool)> {
    let lmax = max_eigenvalue(m)?;
    let threshold = tol * frobenius(m).max(1.0);
    Ok((lmax, threshold, lmax <= threshold))
}

pub fn certify(spec: &InterconnectionSpec, gains: &GainAllocation, tol: f64) -> Result<LmiReport> {
    let m = assemble_lmi(spec, gains)?;
    let (max_eigenvalue, threshold, feasible) = check_negative_semidefinite(&m, tol)?;
    Ok(LmiReport {
        max_eigenvalue,
        threshold,
        feasible,
        dimension: m.nrows(),
        gamma_r: gains.gamma_r,
        gammas: gains.gammas(),
        alphas: gains.alphas(),
    })
}

/// Intermediate quantities of the Schur-complement reduction of the certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurChain {
    /// `min_i (gamma_R^2 - alpha_i gamma_i^2)` over agents fed by the disturbance.
    pub disturbance_margin: f64,
    /// Diagonal of `D` on the stacked `v`.
    pub d: DVector<f64>,
    /// `[Pi_z - H, M_vz^T; M_vz, -D^{-1}]`.
    pub reduced: DMatrix<f64>,
}

impl SchurChain {
    pub fn new(spec: &InterconnectionSpec, gains: &GainAllocation) -> Self {
        let sets = IndexSets::from_spec(spec);
        let (vb, zb) = (spec.v_blocks(), spec.z_blocks());
        let g2 = gains.gamma_r * gains.gamma_r;
        let (q, r) = (vb.total(), zb.total());
        let mut margin = f64::INFINITY;
        let mut d = DVector::zeros(q);
        for (i, g) in gains.agents.iter().enumerate() {
            let p = g.alpha * g.gamma * g.gamma;
            if sets.out_connected(i) {
                margin = margin.min(g2 - p);
            }
            // a tight first bound lands on p = gamma_R^2 up to rounding
            let dk = if (g2 - p).abs() <= 1e-12 * g2 {
                f64::NEG_INFINITY
            } else {
                p * g2 / (p - g2)
            };
            for &k in &sets.a1[i] {
                d[k] = dk;
            }
            for &k in &sets.a0[i] {
                d[k] = -p;
            }
        }
        let h = spec.h_diag();
        let mut reduced = DMatrix::zeros(r + q, r + q);
        for (i, g) in gains.agents.iter().enumerate() {
            for k in zb.range(i) {
                reduced[(k, k)] = g.alpha - h[k];
            }
        }
        reduced.view_mut((r, 0), (q, r)).copy_from(&spec.m_vz);
        reduced.view_mut((0, r), (r, q)).copy_from(&spec.m_vz.transpose());
        for k in 0..q {
            reduced[(r + k, r + k)] = -1.0 / d[k];
        }
        Self {
            disturbance_margin: margin,
            d,
            reduced,
        }
    }

    /// Smallest Gershgorin lower bound over the rows of [`Self::reduced`].
    pub fn gershgorin_margin(&self) -> f64 {
        (0..self.reduced.nrows())
            .map(|k| {
                let row = self.reduced.row(k);
                let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, x)| x.abs()).sum();
                row[k] - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}
