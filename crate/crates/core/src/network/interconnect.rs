use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Topology;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Blocks};

/// Off-diagonal tolerance for `M_uz^T M_uz` to count as diagonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Per-agent signal sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDims {
    /// Plant state `n_i` (also the size of the reconstructed disturbance).
    pub state: usize,
    /// Plant input `m_i`.
    pub input: usize,
    /// Controller cell input `q_i`.
    pub ren_input: usize,
    /// Controller cell output `r_i`.
    pub ren_output: usize,
}

/// Static interconnection `v = M_vz z + M_vw w_hat`, `u = M_uz z`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectionSpec {
    pub topology: Topology,
    pub agents: Vec<AgentDims>,
    pub m_vz: DMatrix<f64>,
    pub m_vw: DMatrix<f64>,
    pub m_uz: DMatrix<f64>,
}

/// One failed structural condition, with the offending location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    AgentCount {
        topology: usize,
        dims: usize,
    },
    Dimensions {
        agent: usize,
        detail: String,
    },
    Shape {
        matrix: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    /// `M_vw` entry outside `{0, 1}`.
    MvwEntry { row: usize, col: usize, value: f64 },
    /// `M_vw` column without exactly one unit entry.
    MvwColumnSum { col: usize, sum: f64 },
    /// `M_vw` row with more than one unit entry.
    MvwRowSum { row: usize, sum: f64 },
    /// Two columns of `M_uz` are not orthogonal.
    MuzNotOrthogonal { col_a: usize, col_b: usize, inner: f64 },
    /// Nonzero coupling between agents that are not neighbors.
    OutsideNeighborhood {
        matrix: String,
        row: usize,
        col: usize,
        agent: usize,
        source: usize,
    },
}

impl InterconnectionSpec {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn v_blocks(&self) -> Blocks {
        Blocks::new(self.agents.iter().map(|a| a.ren_input))
    }

    pub fn z_blocks(&self) -> Blocks {
        Blocks::new(self.agents.iter().map(|a| a.ren_output))
    }

    pub fn w_blocks(&self) -> Blocks {
        Blocks::new(self.agents.iter().map(|a| a.state))
    }

    pub fn u_blocks(&self) -> Blocks {
        Blocks::new(self.agents.iter().map(|a| a.input))
    }

    /// Diagonal of `H = M_uz^T M_uz`.
    pub fn h_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.m_uz.ncols(), |j, _| {
            self.m_uz.column(j).norm_squared()
        })
    }

    /// Checks every structural condition and reports all failures.
    ///
    /// * `M_vw` has entries in `{0,1}`, one unit per column, at most one per row;
    /// * `M_uz^T M_uz` is diagonal;
    /// * blocks `(i, j)` of `M_vz`, `M_vw`, `M_uz` vanish unless `j` is in `N_i`.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.topology.agents != self.agents.len() {
            out.push(Violation::AgentCount {
                topology: self.topology.agents,
                dims: self.agents.len(),
            });
            return Err(out);
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.ren_input == 0 || a.ren_output == 0 {
                out.push(Violation::Dimensions {
                    agent: i,
                    detail: "controller input and output sizes must be positive".into(),
                });
            }
            if a.ren_input < a.state {
                out.push(Violation::Dimensions {
                    agent: i,
                    detail: format!("ren_input {} < state {}", a.ren_input, a.state),
                });
            }
            if a.ren_output < a.input {
                out.push(Violation::Dimensions {
                    agent: i,
                    detail: format!("ren_output {} < input {}", a.ren_output, a.input),
                });
            }
        }
        let (vb, zb, wb, ub) = (
            self.v_blocks(),
            self.z_blocks(),
            self.w_blocks(),
            self.u_blocks(),
        );
        let shapes = [
            ("m_vz", &self.m_vz, (vb.total(), zb.total())),
            ("m_vw", &self.m_vw, (vb.total(), wb.total())),
            ("m_uz", &self.m_uz, (ub.total(), zb.total())),
        ];
        let mut shape_ok = true;
        for (name, m, expected) in shapes {
            if m.shape() != expected {
                shape_ok = false;
                out.push(Violation::Shape {
                    matrix: name.into(),
                    expected,
                    actual: m.shape(),
                });
            }
        }
        if !shape_ok {
            return Err(out);
        }

        // (a) routing matrix for the disturbance
        for r in 0..self.m_vw.nrows() {
            for c in 0..self.m_vw.ncols() {
                let x = self.m_vw[(r, c)];
                if x != 0.0 && x != 1.0 {
                    out.push(Violation::MvwEntry {
                        row: r,
                        col: c,
                        value: x,
                    });
                }
            }
        }
        for c in 0..self.m_vw.ncols() {
            let sum: f64 = self.m_vw.column(c).iter().sum();
            if sum != 1.0 {
                out.push(Violation::MvwColumnSum { col: c, sum });
            }
        }
        for r in 0..self.m_vw.nrows() {
            let sum: f64 = self.m_vw.row(r).iter().sum();
            if sum > 1.0 {
                out.push(Violation::MvwRowSum { row: r, sum });
            }
        }

        // (b) semi-orthogonal output map
        let gram = self.m_uz.transpose() * &self.m_uz;
        for a in 0..gram.nrows() {
            for b in (a + 1)..gram.ncols() {
                if gram[(a, b)].abs() > ORTHOGONALITY_TOL {
                    out.push(Violation::MuzNotOrthogonal {
                        col_a: a,
                        col_b: b,
                        inner: gram[(a, b)],
                    });
                }
            }
        }

        // (c) neighbor-to-neighbor sparsity
        let sparsity = [
            ("m_vz", &self.m_vz, &vb, &zb),
            ("m_vw", &self.m_vw, &vb, &wb),
            ("m_uz", &self.m_uz, &ub, &zb),
        ];
        for (name, m, rows, cols) in sparsity {
            for r in 0..m.nrows() {
                let agent = rows.owner(r).unwrap();
                for c in 0..m.ncols() {
                    if m[(r, c)] == 0.0 {
                        continue;
                    }
                    let source = cols.owner(c).unwrap();
                    if !self.topology.in_neighborhood(agent, source) {
                        out.push(Violation::OutsideNeighborhood {
                            matrix: name.into(),
                            row: r,
                            col: c,
                            agent,
                            source,
                        });
                    }
                }
            }
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// [`Self::validate`] lifted into the crate error type.
    pub fn validated(self) -> Result<Self> {
        self.validate().map_err(Error::InvalidInterconnection)?;
        Ok(self)
    }
}

/// Default interconnection for a graph.
///
/// Agent `i`'s input block is laid out as
/// `[ w_hat_i (n_i slots) | z_j for each j in N_i \ {i}, ascending (r_j slots each) | unused ]`,
/// and `u_i` reads the first `m_i` entries of `z_i` with unit weight.
pub fn build_from_topology(topology: &Topology, dims: &[AgentDims]) -> Result<InterconnectionSpec> {
    if topology.agents != dims.len() {
        return Err(Error::InvalidTopology(format!(
            "topology has {} agents but {} dimension rows were given",
            topology.agents,
            dims.len()
        )));
    }
    for (i, d) in dims.iter().enumerate() {
        if d.ren_output < d.input || d.ren_output == 0 {
            return Err(Error::InvalidDimensions(format!(
                "agent {i}: ren_output {} must be positive and at least input {}",
                d.ren_output, d.input
            )));
        }
        let need = d.state
            + topology
                .strict_neighbors(i)
                .iter()
                .map(|&j| dims[j].ren_output)
                .sum::<usize>();
        if d.ren_input < need.max(1) {
            return Err(Error::InputTooSmall {
                agent: i,
                have: d.ren_input,
                need: need.max(1),
            });
        }
    }
    let vb = Blocks::new(dims.iter().map(|a| a.ren_input));
    let zb = Blocks::new(dims.iter().map(|a| a.ren_output));
    let wb = Blocks::new(dims.iter().map(|a| a.state));
    let ub = Blocks::new(dims.iter().map(|a| a.input));
    let mut m_vz = DMatrix::zeros(vb.total(), zb.total());
    let mut m_vw = DMatrix::zeros(vb.total(), wb.total());
    let mut m_uz = DMatrix::zeros(ub.total(), zb.total());
    for (i, d) in dims.iter().enumerate() {
        let mut row = vb.range(i).start;
        for k in wb.range(i) {
            m_vw[(row, k)] = 1.0;
            row += 1;
        }
        for j in topology.strict_neighbors(i) {
            for k in zb.range(j) {
                m_vz[(row, k)] = 1.0;
                row += 1;
            }
        }
        let z0 = zb.range(i).start;
        for (n, r) in ub.range(i).enumerate() {
            m_uz[(r, z0 + n)] = 1.0;
        }
        debug_assert!(row <= vb.range(i).end && d.input <= d.ren_output);
    }
    InterconnectionSpec {
        topology: topology.clone(),
        agents: dims.to_vec(),
        m_vz,
        m_vw,
        m_uz,
    }
    .validated()
}

/// On-disk form: per-agent dimension table, edge list and dense row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectionFile {
    pub agents: Vec<AgentDims>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    pub m_vz: Vec<Vec<f64>>,
    pub m_vw: Vec<Vec<f64>>,
    pub m_uz: Vec<Vec<f64>>,
}

impl From<&InterconnectionSpec> for InterconnectionFile {
    fn from(s: &InterconnectionSpec) -> Self {
        Self {
            agents: s.agents.clone(),
            edges: s.topology.edges.clone(),
            m_vz: to_rows(&s.m_vz),
            m_vw: to_rows(&s.m_vw),
            m_uz: to_rows(&s.m_uz),
        }
    }
}

impl InterconnectionFile {
    /// Rebuilds the [`InterconnectionSpec`]. Shapes are checked; structural conditions are not
    /// (call [`InterconnectionSpec::validate`]).
    pub fn into_spec(self) -> Result<InterconnectionSpec> {
        let topology = Topology::new(self.agents.len(), self.edges.iter().copied())?;
        let q: usize = self.agents.iter().map(|a| a.ren_input).sum();
        let r: usize = self.agents.iter().map(|a| a.ren_output).sum();
        let n: usize = self.agents.iter().map(|a| a.state).sum();
        let m: usize = self.agents.iter().map(|a| a.input).sum();
        let conv = |name: &str, rows: &[Vec<f64>], nr: usize, nc: usize| {
            let mat = from_rows(rows, nc)
                .ok_or_else(|| Error::Config(format!("{name}: every row must have {nc} entries")))?;
            if mat.nrows() != nr {
                return Err(Error::Config(format!(
                    "{name}: expected {nr} rows, got {}",
                    mat.nrows()
                )));
            }
            Ok(mat)
        };
        Ok(InterconnectionSpec {
            topology,
            m_vz: conv("m_vz", &self.m_vz, q, r)?,
            m_vw: conv("m_vw", &self.m_vw, q, n)?,
            m_uz: conv("m_uz", &self.m_uz, m, r)?,
            agents: self.agents,
        })
    }
}
