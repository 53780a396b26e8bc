use serde::{Deserialize, Serialize};

use super::InterconnectionSpec;
use crate::error::{Error, Result};

/// Per-agent index sets on the stacked controller input `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    /// Rows of agent `i`'s `v` block that receive a disturbance channel.
    pub a1: Vec<Vec<usize>>,
    /// Remaining rows of agent `i`'s `v` block.
    pub a0: Vec<Vec<usize>>,
}

impl IndexSets {
    pub fn from_spec(spec: &InterconnectionSpec) -> Self {
        let vb = spec.v_blocks();
        let mut a1 = vec![Vec::new(); spec.n_agents()];
        let mut a0 = vec![Vec::new(); spec.n_agents()];
        for i in 0..spec.n_agents() {
            for k in vb.range(i) {
                if spec.m_vw.row(k).iter().sum::<f64>() == 1.0 {
                    a1[i].push(k);
                } else {
                    a0[i].push(k);
                }
            }
        }
        Self { a1, a0 }
    }

    /// Whether agent `i` receives at least one disturbance channel.
    pub fn out_connected(&self, i: usize) -> bool {
        !self.a1[i].is_empty()
    }
}

/// Quantities of the gain map that depend only on the interconnection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStructure {
    /// Largest diagonal entry of `M_uz^T M_uz` over the agent's outputs.
    pub h: f64,
    /// Largest absolute column sum of `M_vz` over the agent's outputs.
    pub max_col_sum: f64,
    /// Largest absolute row sum of `M_vz` over rows fed by the disturbance; `None` if there are none.
    pub max_row_sum_exo: Option<f64>,
    /// Largest absolute row sum of `M_vz` over the remaining rows; `None` if there are none.
    pub max_row_sum_int: Option<f64>,
}

impl AgentStructure {
    pub fn out_connected(&self) -> bool {
        self.max_row_sum_exo.is_some()
    }
}

pub fn gain_structure(spec: &InterconnectionSpec) -> Vec<AgentStructure> {
    let sets = IndexSets::from_spec(spec);
    let zb = spec.z_blocks();
    let h = spec.h_diag();
    let row_sum = |k: usize| spec.m_vz.row(k).iter().map(|x| x.abs()).sum::<f64>();
    let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    (0..spec.n_agents())
        .map(|i| AgentStructure {
            h: zb.range(i).map(|j| h[j]).fold(0.0, f64::max),
            max_col_sum: zb
                .range(i)
                .map(|j| spec.m_vz.column(j).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            max_row_sum_exo: max_of(&mut sets.a1[i].iter().map(|&k| row_sum(k))),
            max_row_sum_int: max_of(&mut sets.a0[i].iter().map(|&k| row_sum(k))),
        })
        .collect()
}

/// Which bound fixed `alpha * gamma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveBound {
    /// `gamma_R^2 / (rho_1 gamma_R^2 + 1)` from the disturbance-fed rows.
    Exogenous,
    /// `1 / rho_0` from the remaining rows.
    Internal,
    /// Both bounds are vacuous; `gamma_R^2` is used in their place.
    Vacuous,
    /// `alpha = 0`: the agent's gain does not enter the certificate; `gamma = gamma_R`.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGain {
    pub alpha: f64,
    pub gamma: f64,
    /// Upper bound imposed on `alpha * gamma^2`.
    pub bound: f64,
    pub active: ActiveBound,
    pub dgamma_db: f64,
    pub dgamma_dgamma_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainAllocation {
    pub gamma_r: f64,
    pub agents: Vec<AgentGain>,
}

impl GainAllocation {
    pub fn gammas(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.gamma).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.alpha).collect()
    }
}

/// Maps the free scalars `b` to per-agent gains such that the network
/// certificate holds for every choice of `b` and every cell parameter.
pub fn allocate_gains(
    structure: &[AgentStructure],
    b: &[f64],
    gamma_r: f64,
) -> Result<GainAllocation> {
    if !(gamma_r > 0.0 && gamma_r.is_finite()) {
        return Err(Error::NonPositiveGain(gamma_r));
    }
    if b.len() != structure.len() {
        return Err(Error::DimensionMismatch {
            context: "gain scalars",
            expected: structure.len(),
            actual: b.len(),
        });
    }
    let g2 = gamma_r * gamma_r;
    let agents = structure
        .iter()
        .zip(b)
        .map(|(s, &bi)| {
            let alpha = s.h + s.max_col_sum + bi * bi;
            // candidate bounds on alpha*gamma^2 with their derivative in gamma_R
            let mut best: Option<(f64, f64, ActiveBound)> = None;
            if let Some(rho1) = s.max_row_sum_exo {
                let den = rho1 * g2 + 1.0;
                best = Some((g2 / den, 2.0 * gamma_r / (den * den), ActiveBound::Exogenous));
            }
            if let Some(rho0) = s.max_row_sum_int.filter(|&r| r > 0.0) {
                let cand = 1.0 / rho0;
                if best.is_none_or(|(bb, _, _)| cand < bb) {
                    best = Some((cand, 0.0, ActiveBound::Internal));
                }
            }
            let (bound, dbound, active) =
                best.unwrap_or((g2, 2.0 * gamma_r, ActiveBound::Vacuous));
            if alpha <= 0.0 {
                return AgentGain {
                    alpha,
                    gamma: gamma_r,
                    bound,
                    active: ActiveBound::Decoupled,
                    dgamma_db: 0.0,
                    dgamma_dgamma_r: 1.0,
                };
            }
            let gamma = (bound / alpha).sqrt();
            AgentGain {
                alpha,
                gamma,
                bound,
                active,
                dgamma_db: -gamma * bi / alpha,
                dgamma_dgamma_r: dbound / (2.0 * gamma * alpha),
            }
        })
        .collect();
    Ok(GainAllocation { gamma_r, agents })
}

/// Gain formula for the special case where every input row carries a disturbance channel.
pub fn single_route_gain(alpha: f64, max_row_sum: f64, gamma_r: f64) -> f64 {
    let g2 = gamma_r * gamma_r;
    ((1.0 / alpha) * g2 / (max_row_sum * g2 + 1.0)).sqrt()
}
