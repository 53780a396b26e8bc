//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one `PASS`/`FAIL` line per criterion; the process exits nonzero if any
//! criterion fails.
//!
//! Criteria that compare against a reference compute the reference here,
//! independently of the library code paths under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use netren::experiment::ExperimentConfig;
use netren::network::random::{random_interconnection, random_topology};
use netren::network::{
    allocate_gains, certify, gain_structure, single_route_gain, AgentDims, InterconnectionSpec, LMI_TOL,
};
use netren::plant::{closed_loop_rollout, InitialCondition, NoiseModel, Spring, VehicleParams};
use netren::ren::{build_ren, ren_rollout, Activation, RenDims, RenTheta};
use netren::training::{
    empirical_loss, grad_params, train, CellShape, FormationEdge, LossConfig, Obstacle,
    TrainableParams, TrainingState,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---------------------------------------------------------------------------
// Network certificate
// ---------------------------------------------------------------------------

const SWEEP_SEED: u64 = 0x5eed_0001;
const SWEEP_SIZE: usize = 120;

struct SweepInstance {
    spec: InterconnectionSpec,
    b: Vec<f64>,
    gamma_r: f64,
}

fn sweep() -> Vec<SweepInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);
    (0..SWEEP_SIZE)
        .map(|_| {
            let n = rng.random_range(2..=6);
            let spec = random_interconnection(&mut rng, n);
            let b = (0..n).map(|_| normal(&mut rng)).collect();
            let gamma_r = 10f64.powf(rng.random_range(-1.0..=1.0));
            SweepInstance { spec, b, gamma_r }
        })
        .collect()
}

/// Multiplier of each agent: largest squared column norm of `M_uz` plus
/// largest absolute column sum of `M_vz` over its outputs, plus `b_i^2`.
fn reference_alpha(spec: &InterconnectionSpec, b: &[f64]) -> Vec<f64> {
    let mut z0 = 0;
    spec.agents
        .iter()
        .zip(b)
        .map(|(a, bi)| {
            let mut best = 0.0f64;
            let mut best_col = 0.0f64;
            for j in z0..z0 + a.ren_output {
                let h: f64 = (0..spec.m_uz.nrows()).map(|k| spec.m_uz[(k, j)].powi(2)).sum();
                let c: f64 = (0..spec.m_vz.nrows()).map(|k| spec.m_vz[(k, j)].abs()).sum();
                best = best.max(h);
                best_col = best_col.max(c);
            }
            z0 += a.ren_output;
            best + best_col + bi * bi
        })
        .collect()
}

/// Dissipation matrix of the interconnection in the `(z, w)` coordinates,
/// written out entry by entry:
/// `sum_i alpha_i (gamma_i^2 |v_i|^2 - |z_i|^2) - gamma_R^2 |w|^2 + |u|^2`.
fn reference_lmi(spec: &InterconnectionSpec, alphas: &[f64], gammas: &[f64], gamma_r: f64) -> DMatrix<f64> {
    let (q, r) = spec.m_vz.shape();
    let n = spec.m_vw.ncols();
    let dim = r + n;
    let mut v_weight = vec![0.0; q];
    let mut z_weight = vec![0.0; r];
    let (mut row, mut col) = (0, 0);
    for ((a, g), al) in spec.agents.iter().zip(gammas).zip(alphas) {
        for _ in 0..a.ren_input {
            v_weight[row] = al * g * g;
            row += 1;
        }
        for _ in 0..a.ren_output {
            z_weight[col] = *al;
            col += 1;
        }
    }
    // row k of [M_vz M_vw] and of [M_uz 0]
    let v_row = |k: usize, j: usize| if j < r { spec.m_vz[(k, j)] } else { spec.m_vw[(k, j - r)] };
    let u_row = |k: usize, j: usize| if j < r { spec.m_uz[(k, j)] } else { 0.0 };
    let mut out = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut s = 0.0;
            for k in 0..q {
                s += v_weight[k] * v_row(k, a) * v_row(k, b);
            }
            for k in 0..spec.m_uz.nrows() {
                s += u_row(k, a) * u_row(k, b);
            }
            if a == b {
                s -= if a < r { z_weight[a] } else { gamma_r * gamma_r };
            }
            out[(a, b)] = s;
        }
    }
    out
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

fn ac1_soundness() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut route_gap = 0.0f64;
    for inst in sweep() {
        let st = gain_structure(&inst.spec);
        let gains = allocate_gains(&st, &inst.b, inst.gamma_r).expect("allocation");
        let rep = certify(&inst.spec, &gains, LMI_TOL).expect("certify");
        let alphas = reference_alpha(&inst.spec, &inst.b);
        let m = reference_lmi(&inst.spec, &alphas, &gains.gammas(), inst.gamma_r);
        let lmax = lambda_max(&m);
        let thr = LMI_TOL * m.norm().max(1.0);
        route_gap = route_gap.max((lmax - rep.max_eigenvalue).abs() / m.norm().max(1.0));
        let rel = lmax / m.norm().max(1.0);
        worst = worst.max(rel);
        if lmax > thr || !rep.feasible {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && route_gap < 1e-9 && elapsed <= Duration::from_secs(60),
        format!(
            "{SWEEP_SIZE} instances, {failures} infeasible, worst relative lambda_max {worst:.3e}, \
             library/reference gap {route_gap:.1e}, {elapsed:.2?}"
        ),
    )
}

fn ac2_non_vacuity() -> Outcome {
    let start = Instant::now();
    let mut pairs = 0;
    let mut broken = 0;
    for inst in sweep() {
        let st = gain_structure(&inst.spec);
        let gains = allocate_gains(&st, &inst.b, inst.gamma_r).expect("allocation");
        let alphas = reference_alpha(&inst.spec, &inst.b);
        for i in 0..inst.spec.n_agents() {
            let mut g = gains.gammas();
            g[i] *= 10.0;
            let m = reference_lmi(&inst.spec, &alphas, &g, inst.gamma_r);
            pairs += 1;
            if lambda_max(&m) > 0.0 {
                broken += 1;
            }
        }
    }
    let frac = broken as f64 / pairs as f64;
    let elapsed = start.elapsed();
    outcome(
        frac >= 0.95 && elapsed <= Duration::from_secs(60),
        format!("{broken}/{pairs} single-agent inflations infeasible ({:.1}%), {elapsed:.2?}", 100.0 * frac),
    )
}

/// Instances where every cell input carries its own state's disturbance
/// (`M_vw = I`) and every plant input reads one cell output (`M_uz = I`).
fn fully_routed(rng: &mut ChaCha8Rng) -> InterconnectionSpec {
    let n = rng.random_range(2..=6);
    let topology = random_topology(rng, n, 0.3);
    let agents: Vec<AgentDims> = (0..n)
        .map(|_| {
            let state = rng.random_range(1..=4);
            let input = rng.random_range(1..=4);
            AgentDims {
                state,
                input,
                ren_input: state,
                ren_output: input,
            }
        })
        .collect();
    let q: usize = agents.iter().map(|a| a.state).sum();
    let r: usize = agents.iter().map(|a| a.input).sum();
    let v_off: Vec<usize> = agents.iter().scan(0, |s, a| { let o = *s; *s += a.state; Some(o) }).collect();
    let z_off: Vec<usize> = agents.iter().scan(0, |s, a| { let o = *s; *s += a.input; Some(o) }).collect();
    let mut m_vz = DMatrix::zeros(q, r);
    for i in 0..n {
        for j in topology.neighbors(i) {
            for k in 0..agents[i].state {
                for l in 0..agents[j].input {
                    if rng.random_bool(0.5) {
                        m_vz[(v_off[i] + k, z_off[j] + l)] = rng.random_range(-1.0..1.0);
                    }
                }
            }
        }
    }
    InterconnectionSpec {
        topology,
        agents,
        m_vz,
        m_vw: DMatrix::identity(q, q),
        m_uz: DMatrix::identity(r, r),
    }
    .validated()
    .expect("fully routed instance is valid")
}

fn ac3_single_route() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    let mut worst_helper = 0.0f64;
    for _ in 0..50 {
        let spec = fully_routed(&mut rng);
        let n = spec.n_agents();
        let b: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let gamma_r = 10f64.powf(rng.random_range(-1.0..=1.0));
        let gains = allocate_gains(&gain_structure(&spec), &b, gamma_r).expect("allocation");
        let (mut v0, mut z0) = (0, 0);
        for (i, a) in spec.agents.iter().enumerate() {
            let col_sum = (z0..z0 + a.ren_output)
                .map(|j| (0..spec.m_vz.nrows()).map(|k| spec.m_vz[(k, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let row_sum = (v0..v0 + a.ren_input)
                .map(|k| (0..spec.m_vz.ncols()).map(|j| spec.m_vz[(k, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let alpha = 1.0 + col_sum + b[i] * b[i];
            let g2 = gamma_r * gamma_r;
            let expected = (g2 / ((row_sum * g2 + 1.0) * alpha)).sqrt();
            worst = worst.max((gains.agents[i].gamma - expected).abs());
            worst_helper = worst_helper.max((single_route_gain(alpha, row_sum, gamma_r) - expected).abs());
            v0 += a.ren_input;
            z0 += a.ren_output;
        }
    }
    outcome(
        worst <= 1e-12 && worst_helper <= 1e-12,
        format!("50 instances, max |gamma - closed form| {worst:.1e}, helper {worst_helper:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

fn ac4_cell_gain() -> Outcome {
    let start = Instant::now();
    let settings = [
        RenDims::new(2, 3, 1, 1).unwrap(),
        RenDims::new(4, 6, 3, 2).unwrap(),
        RenDims::new(8, 8, 2, 4).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    for d in settings {
        for _ in 0..50 {
            let scale = [0.1, 1.0, 3.0][rng.random_range(0..3)];
            let theta: Vec<f64> = (0..d.theta_len()).map(|_| scale * normal(&mut rng)).collect();
            let gamma = 10f64.powf(rng.random_range(-1.0..=1.0));
            let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
            let mat = build_ren(&RenTheta::new(theta, gamma).unwrap(), &d).unwrap();
            for _ in 0..20 {
                let amp = 10f64.powf(rng.random_range(-2.0..=2.0));
                let inputs: Vec<DVector<f64>> = (0..50)
                    .map(|_| DVector::from_fn(d.inputs, |_, _| amp * normal(&mut rng)))
                    .collect();
                let ratio = ren_rollout(&mat, &inputs, act).unwrap().gain_ratio().unwrap();
                worst = worst.max(ratio - gamma);
                runs += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed <= Duration::from_secs(120),
        format!("{runs} rollouts, max (ratio - gamma) {worst:.3e}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

fn two_vehicle_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::benchmark();
    let dims = AgentDims {
        state: 4,
        input: 2,
        ren_input: 8,
        ren_output: 3,
    };
    c.gamma_r = 2.0;
    c.coupling_gain = 0.5;
    c.topology = Some(netren::experiment::TopologyConfig {
        agents: 2,
        edges: vec![(0, 1)],
    });
    c.agents = vec![dims; 2];
    c.vehicles = Some(VehicleParams {
        mass: vec![1.0, 1.5],
        friction: vec![1.0, 0.5],
        sampling_time: 0.05,
        reference_gain: vec![1.0, 1.0],
        targets: vec![[-1.0, 0.0], [1.0, 0.0]],
        springs: vec![Spring {
            a: 0,
            b: 1,
            stiffness: 1.0,
            distance: 2.0,
        }],
    });
    c.noise = Some(NoiseModel {
        initial: InitialCondition {
            mean: vec![0.5, 2.0, 0.0, 0.0, -0.5, 2.0, 0.0, 0.0],
            std: vec![0.3; 8],
        },
        process_std: 0.05,
        process_support: 5,
    });
    let mut q = DMatrix::identity(12, 12);
    q.view_mut((8, 8), (4, 4)).fill_diagonal(0.01);
    c.loss = Some(LossConfig {
        q,
        targets: Vec::new(),
        position_stride: 4,
        collision_distance: 2.5,
        collision_weight: 5.0,
        obstacles: vec![Obstacle {
            center: [0.0, 1.5],
            shape: [[1.0, 0.2], [0.2, 0.5]],
        }],
        obstacle_weight: 3.0,
        formation: vec![FormationEdge {
            a: 0,
            b: 1,
            distance: 2.0,
        }],
        formation_weight: 2.0,
        epsilon: 1e-3,
    });
    c
}

fn ac5_gradient() -> Outcome {
    let cfg = two_vehicle_config();
    let exp = cfg.build_plant().expect("two-vehicle experiment");
    let problem = exp.problem();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let shapes = vec![CellShape { state: 4, neurons: 4 }; 2];
    let params = TrainableParams::random(&mut rng, &exp.base.spec, shapes, cfg.gamma_r, 0.3, 1.0).unwrap();
    let samples: Vec<_> = (0..2).map(|_| exp.noise.sample(&mut rng, 10)).collect();
    let grad = grad_params(&problem, &params, &samples).unwrap();
    let g = grad.to_flat(true, params.gamma_r);
    let base = params.to_flat(true);
    let n_theta = params.theta.iter().map(Vec::len).sum::<usize>();
    // both gain scalars, ln gamma_R, then random cell coordinates
    let mut coords = vec![n_theta, n_theta + 1, n_theta + 2];
    while coords.len() < 20 {
        let k = rng.random_range(0..n_theta);
        if !coords.contains(&k) {
            coords.push(k);
        }
    }
    let loss_at = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat, true).unwrap();
        empirical_loss(&problem, &p, &samples).unwrap()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for &k in &coords {
        let mut plus = base.clone();
        plus[k] += h;
        let mut minus = base.clone();
        minus[k] -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    outcome(
        worst <= 1e-4,
        format!("20 coordinates (incl. b and ln gamma_R), max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

fn benchmark_with_process_noise() -> ExperimentConfig {
    let mut c = ExperimentConfig::benchmark();
    let noise = c.noise.as_mut().unwrap();
    noise.process_std = 0.1;
    noise.process_support = 50;
    c
}

fn ac6_energy_decay() -> Outcome {
    let cfg = benchmark_with_process_noise();
    let exp = cfg.build_plant().unwrap();
    let tc = cfg.training().unwrap();
    let mut worst = 0.0f64;
    let mut ok = 0;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0600 + k);
        let params = TrainableParams::random(
            &mut rng,
            &exp.base.spec,
            vec![tc.cell; 4],
            cfg.gamma_r,
            tc.theta_std,
            tc.b_std,
        )
        .unwrap();
        let ctrl = params.controller(&exp.base.spec, &exp.base.structure, cfg.activation).unwrap();
        let w = exp.noise.sample(&mut rng, 500);
        let rec = closed_loop_rollout(&exp.fleet, &ctrl, &w).unwrap();
        let (head, tail) = rec.energy_split(250);
        let ratio = tail / head;
        worst = worst.max(ratio);
        if ratio < 0.2 {
            ok += 1;
        }
    }
    outcome(ok == 20, format!("{ok}/20 runs with tail < 0.2 head, worst tail/head {worst:.3e}"))
}

fn ac7_reconstruction() -> Outcome {
    let cfg = benchmark_with_process_noise();
    let exp = cfg.build_plant().unwrap();
    let tc = cfg.training().unwrap();
    let mut worst = 0.0f64;
    for k in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0700 + k);
        let params = TrainableParams::random(&mut rng, &exp.base.spec, vec![tc.cell; 4], cfg.gamma_r, 0.5, 1.0).unwrap();
        let ctrl = params.controller(&exp.base.spec, &exp.base.structure, cfg.activation).unwrap();
        let w = exp.noise.sample(&mut rng, 100);
        let rec = closed_loop_rollout(&exp.fleet, &ctrl, &w).unwrap();
        for (wt, wh) in w.iter().zip(&rec.w_hat) {
            worst = worst.max((wt - wh).amax());
        }
    }
    outcome(worst <= 1e-12, format!("10 rollouts, max |w_hat - w| {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn ac8_benchmark() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::benchmark();
    {
        let t = cfg.training.as_mut().unwrap();
        t.epochs = 100;
        t.horizon = 100;
        t.samples = 10;
        t.learning_rate = 0.001;
        t.debug_certify = true;
    }
    let exp = cfg.build_plant().unwrap();
    let problem = exp.problem();
    let tc = cfg.training().unwrap().clone();
    let state = TrainingState::initial(&problem, &tc, cfg.gamma_r).unwrap();
    let res = train(&problem, &exp.noise, &tc, state, &mut |_| Ok(()));
    let elapsed = start.elapsed();
    let out = match res {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let initial = out.state.loss_history[0];
    let ratio = out.final_loss / initial;
    let certified = out.state.certificate_history.len() == tc.epochs
        && out.state.certificate_history.iter().all(|l| l.is_finite())
        && out.certificate.feasible;
    // not gated: distance to targets and collisions after training
    let ctrl = out.state.params.controller(&exp.base.spec, &exp.base.structure, cfg.activation).unwrap();
    let mut min_dist = f64::INFINITY;
    let mut final_err = 0.0f64;
    for w in tc.sample_set(&exp.noise, 0) {
        let rec = closed_loop_rollout(&exp.fleet, &ctrl, &w).unwrap();
        for x in &rec.x {
            min_dist = min_dist.min(exp.loss.min_distance(x));
        }
        let last = rec.x.last().unwrap();
        for i in 0..4 {
            final_err = final_err.max(last[4 * i].hypot(last[4 * i + 1]));
        }
    }
    outcome(
        ratio <= 0.7 && certified && elapsed <= Duration::from_secs(15 * 60),
        format!(
            "loss {initial:.1} -> {:.1} (ratio {ratio:.3}), {} epochs certified, {elapsed:.1?}; \
             min inter-agent distance {min_dist:.2} (collision radius {}), max final distance to target {final_err:.2}",
            out.final_loss,
            out.state.certificate_history.len(),
            exp.loss.cfg.collision_distance,
        ),
    )
}

fn ac9_determinism() -> Outcome {
    let mut cfg = ExperimentConfig::benchmark();
    {
        let t = cfg.training.as_mut().unwrap();
        t.epochs = 5;
        t.horizon = 50;
        t.samples = 6;
    }
    let exp = cfg.build_plant().unwrap();
    let tc = cfg.training().unwrap().clone();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let problem = exp.problem();
            let state = TrainingState::initial(&problem, &tc, cfg.gamma_r).unwrap();
            train(&problem, &exp.noise, &tc, state, &mut |_| Ok(())).unwrap()
        })
    };
    let a = run(4);
    let b = run(4);
    let c = run(1);
    let bits = |o: &netren::training::TrainingOutcome| -> Vec<u64> {
        o.state.loss_history.iter().map(|x| x.to_bits()).collect()
    };
    let same = bits(&a) == bits(&b) && a.state.params == b.state.params;
    let same_threads = bits(&a) == bits(&c);
    outcome(
        same && same_threads,
        format!(
            "{} epochs, repeated run identical: {same}, 1 vs 4 threads identical: {same_threads}",
            tc.epochs
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1 certificate soundness sweep", ac1_soundness),
        ("AC2 certificate non-vacuity", ac2_non_vacuity),
        ("AC3 single-route gain reduction", ac3_single_route),
        ("AC4 cell gain bound", ac4_cell_gain),
        ("AC5 gradient fidelity", ac5_gradient),
        ("AC6 closed-loop energy decay", ac6_energy_decay),
        ("AC7 noise reconstruction", ac7_reconstruction),
        ("AC8 benchmark training", ac8_benchmark),
        ("AC9 determinism", ac9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!("{} {name}: {}", if res.pass { "PASS" } else { "FAIL" }, res.detail);
        if !res.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
