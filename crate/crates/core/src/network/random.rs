//! Random interconnections that satisfy all structural conditions, for tests and sweeps.

use nalgebra::DMatrix;
use rand::{Rng, RngExt};

use super::{AgentDims, InterconnectionSpec, Topology};

const MAX_DIM: usize = 4;
const ROUTING_ATTEMPTS: usize = 64;

/// Connected graph: a random spanning tree plus each remaining pair with probability `extra`.
pub fn random_topology<R: Rng + ?Sized>(rng: &mut R, agents: usize, extra: f64) -> Topology {
    let mut edges = Vec::new();
    for k in 1..agents {
        edges.push((rng.random_range(0..k), k));
    }
    for a in 0..agents {
        for b in (a + 1)..agents {
            if rng.random_bool(extra) {
                edges.push((a, b));
            }
        }
    }
    Topology::new(agents.max(1), edges).expect("generated edges are in range")
}

/// Random valid interconnection over `agents` agents with block sizes up to 4.
///
/// Every disturbance channel is routed to a free input row of some agent in
/// its owner's neighborhood, `M_vz` has random entries inside neighbor
/// blocks, and each `u` row reads a distinct local `z` entry with a random
/// nonzero weight.
pub fn random_interconnection<R: Rng + ?Sized>(rng: &mut R, agents: usize) -> InterconnectionSpec {
    loop {
        if let Some(spec) = try_generate(rng, agents) {
            debug_assert!(spec.validate().is_ok());
            return spec;
        }
    }
}

fn try_generate<R: Rng + ?Sized>(rng: &mut R, agents: usize) -> Option<InterconnectionSpec> {
    let topology = random_topology(rng, agents, 0.3);
    let dims: Vec<AgentDims> = (0..agents)
        .map(|_| {
            let state = rng.random_range(1..=MAX_DIM);
            let input = rng.random_range(1..=MAX_DIM);
            AgentDims {
                state,
                input,
                ren_input: rng.random_range(state..=MAX_DIM),
                ren_output: rng.random_range(input..=MAX_DIM),
            }
        })
        .collect();
    let spec0 = InterconnectionSpec {
        topology: topology.clone(),
        agents: dims.clone(),
        m_vz: DMatrix::zeros(0, 0),
        m_vw: DMatrix::zeros(0, 0),
        m_uz: DMatrix::zeros(0, 0),
    };
    let (vb, zb, wb, ub) = (
        spec0.v_blocks(),
        spec0.z_blocks(),
        spec0.w_blocks(),
        spec0.u_blocks(),
    );

    let mut m_vw = DMatrix::zeros(vb.total(), wb.total());
    let mut used = vec![false; vb.total()];
    for i in 0..agents {
        let hood = topology.neighbors(i);
        for col in wb.range(i) {
            let mut placed = false;
            for _ in 0..ROUTING_ATTEMPTS {
                let a = hood[rng.random_range(0..hood.len())];
                let row = rng.random_range(vb.range(a));
                if !used[row] {
                    used[row] = true;
                    m_vw[(row, col)] = 1.0;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return None;
            }
        }
    }

    let mut m_vz = DMatrix::zeros(vb.total(), zb.total());
    for a in 0..agents {
        for j in topology.neighbors(a) {
            for row in vb.range(a) {
                for col in zb.range(j) {
                    if rng.random_bool(0.5) {
                        m_vz[(row, col)] = rng.random_range(-1.0..1.0);
                    }
                }
            }
        }
    }

    let mut m_uz = DMatrix::zeros(ub.total(), zb.total());
    for i in 0..agents {
        let mut cols: Vec<usize> = zb.range(i).collect();
        for row in ub.range(i) {
            let col = cols.swap_remove(rng.random_range(0..cols.len()));
            let mag = rng.random_range(0.5..1.5);
            m_uz[(row, col)] = if rng.random_bool(0.5) { mag } else { -mag };
        }
    }

    Some(InterconnectionSpec {
        topology,
        agents: dims,
        m_vz,
        m_vw,
        m_uz,
    })
}
