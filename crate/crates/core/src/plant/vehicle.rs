use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::NetworkPlant;
use crate::error::{Error, Result};
use crate::linalg::Blocks;
use crate::network::Topology;

/// Pairs closer than this exert no spring force.
pub const COINCIDENT_EPS: f64 = 1e-9;

pub type Vec2 = [f64; 2];

/// Spring between two agents of the base controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    /// Stiffness `k_ij`.
    pub stiffness: f64,
    /// Rest length `delta`.
    pub distance: f64,
}

/// Point-mass fleet parameters. Per-agent vectors have one entry per vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: Vec<f64>,
    pub friction: Vec<f64>,
    pub sampling_time: f64,
    /// Reference-tracking gain `k_ir`.
    pub reference_gain: Vec<f64>,
    /// Target positions `p_bar`.
    pub targets: Vec<Vec2>,
    pub springs: Vec<Spring>,
}

impl VehicleParams {
    pub fn agents(&self) -> usize {
        self.targets.len()
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let n = self.agents();
        if n != topology.agents {
            return Err(Error::Config(format!(
                "{n} targets for a topology with {} agents",
                topology.agents
            )));
        }
        for (name, v) in [
            ("mass", &self.mass),
            ("friction", &self.friction),
            ("reference_gain", &self.reference_gain),
        ] {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        if !(self.sampling_time > 0.0 && self.sampling_time.is_finite()) {
            return Err(Error::Config("sampling_time must be positive".into()));
        }
        for s in &self.springs {
            if s.a == s.b || !topology.are_adjacent(s.a, s.b) {
                return Err(Error::Config(format!(
                    "spring ({}, {}) is not an edge of the topology",
                    s.a, s.b
                )));
            }
            if !(s.stiffness > 0.0 && s.distance > 0.0) {
                return Err(Error::Config(format!(
                    "spring ({}, {}) needs positive stiffness and distance",
                    s.a, s.b
                )));
            }
        }
        Ok(())
    }

    /// Largest spring force at the target formation; zero when the rest
    /// lengths agree with the target positions.
    pub fn formation_mismatch(&self) -> f64 {
        self.springs
            .iter()
            .map(|s| (dist(self.targets[s.a], self.targets[s.b]) - s.distance).abs() * s.stiffness)
            .fold(0.0, f64::max)
    }
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

/// One step of a single vehicle under quadratic drag `-c |v| v`.
pub fn vehicle_step(mass: f64, friction: f64, ts: f64, p: Vec2, v: Vec2, force: Vec2, u: Vec2) -> (Vec2, Vec2) {
    let speed = v[0].hypot(v[1]);
    let mut p_next = p;
    let mut v_next = v;
    for k in 0..2 {
        p_next[k] = p[k] + ts * v[k];
        v_next[k] = v[k] + ts / mass * (-friction * speed * v[k] + force[k] + u[k]);
    }
    (p_next, v_next)
}

/// Base formation force on agent `i`: springs along inter-agent directions
/// plus proportional attraction to the target.
pub fn base_controller_force(params: &VehicleParams, i: usize, positions: &[Vec2]) -> Vec2 {
    let p = positions[i];
    let kr = params.reference_gain[i];
    let target = params.targets[i];
    let mut f = [-kr * (p[0] - target[0]), -kr * (p[1] - target[1])];
    for s in &params.springs {
        let j = if s.a == i {
            s.b
        } else if s.b == i {
            s.a
        } else {
            continue;
        };
        let d = sub(p, positions[j]);
        let norm = d[0].hypot(d[1]);
        if norm < COINCIDENT_EPS {
            continue;
        }
        let scale = s.stiffness * (norm - s.distance) / norm;
        f[0] -= scale * d[0];
        f[1] -= scale * d[1];
    }
    f
}

/// Fleet of planar point masses. Agent state is `(p - p_bar, v)`, input is a force.
#[derive(Debug, Clone)]
pub struct VehicleFleet {
    pub params: VehicleParams,
    topology: Topology,
}

impl VehicleFleet {
    pub const STATE: usize = 4;
    pub const INPUT: usize = 2;

    pub fn new(params: VehicleParams, topology: Topology) -> Result<Self> {
        params.validate(&topology)?;
        Ok(Self { params, topology })
    }

    /// Absolute positions from a stacked state vector.
    pub fn positions(&self, x: &DVector<f64>) -> Vec<Vec2> {
        self.params
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| [x[4 * i] + t[0], x[4 * i + 1] + t[1]])
            .collect()
    }

    /// Stacked state for absolute positions and velocities.
    pub fn state_from(&self, positions: &[Vec2], velocities: &[Vec2]) -> DVector<f64> {
        let mut x = DVector::zeros(4 * self.params.agents());
        for (i, t) in self.params.targets.iter().enumerate() {
            x[4 * i] = positions[i][0] - t[0];
            x[4 * i + 1] = positions[i][1] - t[1];
            x[4 * i + 2] = velocities[i][0];
            x[4 * i + 3] = velocities[i][1];
        }
        x
    }
}

impl NetworkPlant for VehicleFleet {
    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn state_blocks(&self) -> Blocks {
        Blocks::new(vec![Self::STATE; self.params.agents()])
    }

    fn input_blocks(&self) -> Blocks {
        Blocks::new(vec![Self::INPUT; self.params.agents()])
    }

    fn agent_step(&self, i: usize, x: &DVector<f64>, u_i: &[f64]) -> DVector<f64> {
        let pr = &self.params;
        let positions: Vec<Vec2> = (0..pr.agents())
            .map(|j| {
                if self.topology.in_neighborhood(i, j) {
                    [x[4 * j] + pr.targets[j][0], x[4 * j + 1] + pr.targets[j][1]]
                } else {
                    [f64::NAN; 2]
                }
            })
            .collect();
        let force = base_controller_force(pr, i, &positions);
        let (p, v) = vehicle_step(
            pr.mass[i],
            pr.friction[i],
            pr.sampling_time,
            positions[i],
            [x[4 * i + 2], x[4 * i + 3]],
            force,
            [u_i[0], u_i[1]],
        );
        DVector::from_vec(vec![
            p[0] - pr.targets[i][0],
            p[1] - pr.targets[i][1],
            v[0],
            v[1],
        ])
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let pr = &self.params;
        let positions = self.positions(x);
        let mut out = DVector::zeros(x.len());
        for i in 0..pr.agents() {
            let force = base_controller_force(pr, i, &positions);
            let (p, v) = vehicle_step(
                pr.mass[i],
                pr.friction[i],
                pr.sampling_time,
                positions[i],
                [x[4 * i + 2], x[4 * i + 3]],
                force,
                [u[2 * i], u[2 * i + 1]],
            );
            out[4 * i] = p[0] - pr.targets[i][0];
            out[4 * i + 1] = p[1] - pr.targets[i][1];
            out[4 * i + 2] = v[0];
            out[4 * i + 3] = v[1];
        }
        out
    }

    fn step_vjp(
        &self,
        x: &DVector<f64>,
        _u: &DVector<f64>,
        g_next: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let pr = &self.params;
        let ts = pr.sampling_time;
        let positions = self.positions(x);
        let n = pr.agents();
        let mut gx = DVector::zeros(4 * n);
        let mut gu = DVector::zeros(2 * n);
        // lambda_i = dL/dF_i = ts/m_i * g_v'_i
        let mut lambda = vec![[0.0; 2]; n];
        for i in 0..n {
            let ge = [g_next[4 * i], g_next[4 * i + 1]];
            let gv = [g_next[4 * i + 2], g_next[4 * i + 3]];
            let h = ts / pr.mass[i];
            lambda[i] = [h * gv[0], h * gv[1]];
            gu[2 * i] = lambda[i][0];
            gu[2 * i + 1] = lambda[i][1];
            let v = [x[4 * i + 2], x[4 * i + 3]];
            let speed = v[0].hypot(v[1]);
            // drag Jacobian |v| I + v v^T / |v| is symmetric
            let mut jv = [0.0; 2];
            if speed > 0.0 {
                let vg = (v[0] * gv[0] + v[1] * gv[1]) / speed;
                jv = [speed * gv[0] + vg * v[0], speed * gv[1] + vg * v[1]];
            }
            gx[4 * i] += ge[0] - pr.reference_gain[i] * lambda[i][0];
            gx[4 * i + 1] += ge[1] - pr.reference_gain[i] * lambda[i][1];
            gx[4 * i + 2] += ts * ge[0] + gv[0] - h * pr.friction[i] * jv[0];
            gx[4 * i + 3] += ts * ge[1] + gv[1] - h * pr.friction[i] * jv[1];
        }
        for s in &pr.springs {
            let d = sub(positions[s.a], positions[s.b]);
            let norm = d[0].hypot(d[1]);
            if norm < COINCIDENT_EPS {
                continue;
            }
            let e = [d[0] / norm, d[1] / norm];
            let c = (norm - s.distance) / norm;
            // J = e e^T + c (I - e e^T); F_a gets -k J dp, F_b gets +k J dp with dp = p_a - p_b
            let jmul = |l: Vec2| {
                let el = e[0] * l[0] + e[1] * l[1];
                [
                    el * e[0] + c * (l[0] - el * e[0]),
                    el * e[1] + c * (l[1] - el * e[1]),
                ]
            };
            let net = [lambda[s.a][0] - lambda[s.b][0], lambda[s.a][1] - lambda[s.b][1]];
            let jn = jmul(net);
            for k in 0..2 {
                gx[4 * s.a + k] -= s.stiffness * jn[k];
                gx[4 * s.b + k] += s.stiffness * jn[k];
            }
        }
        (gx, gu)
    }

    fn state_names(&self, _i: usize) -> Vec<String> {
        ["p.x", "p.y", "v.x", "v.y"].map(String::from).to_vec()
    }

    fn input_names(&self, _i: usize) -> Vec<String> {
        ["x", "y"].map(String::from).to_vec()
    }
}
