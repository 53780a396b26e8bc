use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected communication graph over agents `0..agents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub agents: usize,
    /// Unordered pairs; stored with the smaller index first, sorted, no duplicates.
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn new(agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidTopology("at least one agent required".into()));
        }
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidTopology(format!("self-loop at agent {a}")));
            }
            if a >= agents || b >= agents {
                return Err(Error::InvalidTopology(format!(
                    "edge ({a}, {b}) references an agent outside 0..{agents}"
                )));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { agents, edges: out })
    }

    pub fn ring(agents: usize) -> Result<Self> {
        let edges: Vec<_> = match agents {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::new(agents, edges)
    }

    pub fn chain(agents: usize) -> Result<Self> {
        Self::new(agents, (1..agents).map(|i| (i - 1, i)))
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    /// `N_i`: agent `i` together with its graph neighbors, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        for &(a, b) in &self.edges {
            if a == i {
                out.push(b);
            } else if b == i {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    /// `N_i \ {i}`, ascending.
    pub fn strict_neighbors(&self, i: usize) -> Vec<usize> {
        self.neighbors(i).into_iter().filter(|&j| j != i).collect()
    }

    pub fn in_neighborhood(&self, i: usize, j: usize) -> bool {
        i == j || self.are_adjacent(i, j)
    }
}
