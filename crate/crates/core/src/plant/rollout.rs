use std::io::{Read, Write};

use nalgebra::DVector;

use super::NetworkPlant;
use crate::error::{Error, Result};
use crate::linalg::Blocks;
use crate::network::{GainAllocation, InterconnectionSpec};
use crate::ren::{ren_step_traced, Activation, RenMatrices, RenState, RenStepTrace};

/// A rollout is aborted once `|x_t|_inf` exceeds this value.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Deployed distributed controller: one cell per agent wired by the interconnection.
#[derive(Debug, Clone)]
pub struct ControllerNetwork {
    pub spec: InterconnectionSpec,
    pub cells: Vec<RenMatrices>,
    pub gains: GainAllocation,
    pub activation: Activation,
    neighbors: Vec<Vec<usize>>,
}

impl ControllerNetwork {
    pub fn new(
        spec: InterconnectionSpec,
        cells: Vec<RenMatrices>,
        gains: GainAllocation,
        activation: Activation,
    ) -> Result<Self> {
        if cells.len() != spec.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "controller cells",
                expected: spec.n_agents(),
                actual: cells.len(),
            });
        }
        if gains.agents.len() != spec.n_agents() {
            return Err(Error::DimensionMismatch {
                context: "controller gains",
                expected: spec.n_agents(),
                actual: gains.agents.len(),
            });
        }
        for (cell, a) in cells.iter().zip(&spec.agents) {
            cell.check()?;
            let d = cell.dims();
            if d.inputs != a.ren_input || d.outputs != a.ren_output {
                return Err(Error::InvalidDimensions(format!(
                    "cell maps {} -> {}, interconnection expects {} -> {}",
                    d.inputs, d.outputs, a.ren_input, a.ren_output
                )));
            }
        }
        let neighbors = (0..spec.n_agents()).map(|i| spec.topology.neighbors(i)).collect();
        Ok(Self {
            spec,
            cells,
            gains,
            activation,
            neighbors,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.cells.len()
    }

    /// `v_i = sum_{j in N_i} M_vz[i, j] z_prev_j + M_vw[i, j] w_hat_j`.
    pub fn agent_input(
        &self,
        i: usize,
        vb: &Blocks,
        zb: &Blocks,
        wb: &Blocks,
        z_prev: &DVector<f64>,
        w_hat: &DVector<f64>,
    ) -> DVector<f64> {
        let rows = vb.range(i);
        let mut v = DVector::zeros(rows.len());
        for &j in &self.neighbors[i] {
            let zr = zb.range(j);
            let block = self.spec.m_vz.view((rows.start, zr.start), (rows.len(), zr.len()));
            v.gemv(1.0, &block, &z_prev.rows(zr.start, zr.len()), 1.0);
            let wr = wb.range(j);
            let block = self.spec.m_vw.view((rows.start, wr.start), (rows.len(), wr.len()));
            v.gemv(1.0, &block, &w_hat.rows(wr.start, wr.len()), 1.0);
        }
        v
    }

    /// `u_i = sum_{j in N_i} M_uz[i, j] z_j`.
    pub fn agent_output(&self, i: usize, ub: &Blocks, zb: &Blocks, z: &DVector<f64>) -> DVector<f64> {
        let rows = ub.range(i);
        let mut u = DVector::zeros(rows.len());
        for &j in &self.neighbors[i] {
            let zr = zb.range(j);
            let block = self.spec.m_uz.view((rows.start, zr.start), (rows.len(), zr.len()));
            u.gemv(1.0, &block, &z.rows(zr.start, zr.len()), 1.0);
        }
        u
    }
}

/// Signals of one closed-loop simulation, indexed by `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub w_hat: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    /// `xi[t][i]`: hidden state of agent `i` after step `t`.
    pub xi: Vec<Vec<DVector<f64>>>,
    /// Neuron values of each agent at each step.
    pub traces: Vec<Vec<RenStepTrace>>,
}

impl RolloutRecord {
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// `(sum_{t <= split} |x_t|^2, sum_{t > split} |x_t|^2)`.
    pub fn energy_split(&self, split: usize) -> (f64, f64) {
        let mut head = 0.0;
        let mut tail = 0.0;
        for (t, x) in self.x.iter().enumerate() {
            if t <= split {
                head += x.norm_squared();
            } else {
                tail += x.norm_squared();
            }
        }
        (head, tail)
    }

    pub fn csv_header(plant: &dyn NetworkPlant) -> Vec<String> {
        let n = plant.state_blocks().len();
        let mut h = vec!["t".to_string()];
        for i in 0..n {
            h.extend(plant.state_names(i).iter().map(|s| format!("x[{i}].{s}")));
        }
        for i in 0..n {
            h.extend(plant.input_names(i).iter().map(|s| format!("u[{i}].{s}")));
        }
        for i in 0..n {
            h.extend(plant.state_names(i).iter().map(|s| format!("what[{i}].{s}")));
        }
        h
    }

    /// One row per time step, 17 significant digits.
    pub fn write_csv<W: Write>(&self, plant: &dyn NetworkPlant, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(Self::csv_header(plant))?;
        for t in 0..self.x.len() {
            let mut row = vec![t.to_string()];
            for sig in [&self.x[t], &self.u[t], &self.w_hat[t]] {
                row.extend(sig.iter().map(|x| format!("{x:.16e}")));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Parsed trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad number {s:?} in trajectory: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// `w_hat_t^i = x_t^i - f^i(x_{t-1}, u_{t-1}^i)` for every agent.
pub fn reconstruct_noise(
    plant: &dyn NetworkPlant,
    x_t: &DVector<f64>,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
) -> DVector<f64> {
    let (xb, ub) = (plant.state_blocks(), plant.input_blocks());
    let mut out = DVector::zeros(xb.total());
    for i in 0..xb.len() {
        let pred = plant.agent_step(i, x_prev, &u_prev.as_slice()[ub.range(i)]);
        let r = xb.range(i);
        for (k, row) in r.enumerate() {
            out[row] = x_t[row] - pred[k];
        }
    }
    out
}

fn check_state(t: usize, x: &DVector<f64>) -> Result<()> {
    let norm = x.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
    if norm > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { t, norm });
    }
    Ok(())
}

/// Simulates plant and controller over `t = 0..=w.len() - 1`.
///
/// `x_0 = w_0`, and for `t >= 1` `x_t = f(x_{t-1}, u_{t-1}) + w_t`. The
/// controller reconstructs `w_hat_t`, forms `v_t = M_vz z_{t-1} + M_vw w_hat_t`
/// (neighbor outputs arrive one step late, `z_{-1} = 0`), steps every cell
/// and applies `u_t = M_uz z_t`.
pub fn closed_loop_rollout(
    plant: &dyn NetworkPlant,
    ctrl: &ControllerNetwork,
    w: &[DVector<f64>],
) -> Result<RolloutRecord> {
    let spec = &ctrl.spec;
    let (xb, ub) = (plant.state_blocks(), plant.input_blocks());
    let (vb, zb, wb, sb) = (spec.v_blocks(), spec.z_blocks(), spec.w_blocks(), spec.u_blocks());
    if xb != wb || ub != sb {
        return Err(Error::InvalidDimensions(
            "plant state/input blocks differ from the interconnection".into(),
        ));
    }
    if w.is_empty() {
        return Err(Error::InvalidDimensions("noise sequence is empty".into()));
    }
    for wt in w {
        if wt.len() != xb.total() {
            return Err(Error::DimensionMismatch {
                context: "noise sample",
                expected: xb.total(),
                actual: wt.len(),
            });
        }
    }
    let steps = w.len();
    let n_agents = ctrl.n_agents();
    let mut rec = RolloutRecord {
        x: Vec::with_capacity(steps),
        u: Vec::with_capacity(steps),
        w: w.to_vec(),
        w_hat: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
        z: Vec::with_capacity(steps),
        xi: Vec::with_capacity(steps),
        traces: Vec::with_capacity(steps),
    };
    let mut states: Vec<RenState> = ctrl.cells.iter().map(|c| RenState::zeros(c.a1.nrows())).collect();
    let mut z_prev = DVector::zeros(zb.total());
    for t in 0..steps {
        let (x, w_hat) = if t == 0 {
            (w[0].clone(), w[0].clone())
        } else {
            let (xp, up) = (&rec.x[t - 1], &rec.u[t - 1]);
            let x = plant.step(xp, up) + &w[t];
            check_state(t, &x)?;
            let w_hat = reconstruct_noise(plant, &x, xp, up);
            (x, w_hat)
        };
        if t == 0 {
            check_state(0, &x)?;
        }
        let mut v = DVector::zeros(vb.total());
        let mut z = DVector::zeros(zb.total());
        let mut traces = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let vi = ctrl.agent_input(i, &vb, &zb, &wb, &z_prev, &w_hat);
            let (next, zi, trace) = ren_step_traced(&ctrl.cells[i], &states[i], &vi, ctrl.activation)?;
            v.rows_mut(vb.range(i).start, vb.size(i)).copy_from(&vi);
            z.rows_mut(zb.range(i).start, zb.size(i)).copy_from(&zi);
            states[i] = next;
            traces.push(trace);
        }
        let mut u = DVector::zeros(ub.total());
        for i in 0..n_agents {
            let ui = ctrl.agent_output(i, &ub, &zb, &z);
            u.rows_mut(ub.range(i).start, ub.size(i)).copy_from(&ui);
        }
        rec.x.push(x);
        rec.w_hat.push(w_hat);
        rec.v.push(v);
        rec.u.push(u);
        rec.xi.push(states.iter().map(|s| s.xi.clone()).collect());
        rec.traces.push(traces);
        z_prev = z.clone();
        rec.z.push(z);
    }
    Ok(rec)
}
