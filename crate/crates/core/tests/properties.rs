use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use netren::experiment::ExperimentConfig;
use netren::network::random::random_interconnection;
use netren::network::{
    allocate_gains, assemble_lmi, certify, check_negative_semidefinite, gain_structure, AgentDims,
    InterconnectionSpec, SchurChain, Topology, LMI_TOL,
};
use netren::plant::{NoiseModel, NetworkPlant};
use netren::ren::{build_ren, ren_rollout, Activation, RenDims, RenTheta};
use netren::training::{
    empirical_loss, grad_params, train, CellShape, Checkpoint, LossConfig, TrainableParams, TrainingState,
};

fn scalar_spec(topology: Topology, m_vz: DMatrix<f64>) -> InterconnectionSpec {
    let n = topology.agents;
    let d = AgentDims {
        state: 1,
        input: 1,
        ren_input: 1,
        ren_output: 1,
    };
    InterconnectionSpec {
        topology,
        agents: vec![d; n],
        m_vz,
        m_vw: DMatrix::identity(n, n),
        m_uz: DMatrix::identity(n, n),
    }
    .validated()
    .unwrap()
}

fn two_node() -> InterconnectionSpec {
    scalar_spec(
        Topology::new(2, [(0, 1)]).unwrap(),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
    )
}

fn single_node() -> InterconnectionSpec {
    scalar_spec(Topology::new(1, []).unwrap(), DMatrix::zeros(1, 1))
}

#[test]
fn two_node_hand_values() {
    let spec = two_node();
    let g = allocate_gains(&gain_structure(&spec), &[0.0, 0.0], 1.0).unwrap();
    assert_eq!(g.alphas(), vec![2.0, 2.0]);
    for gamma in g.gammas() {
        assert!((gamma - 0.5).abs() < 1e-15);
    }
    let m = assemble_lmi(&spec, &g).unwrap();
    assert_eq!(m.shape(), (4, 4));
    let rep = certify(&spec, &g, LMI_TOL).unwrap();
    assert!(rep.max_eigenvalue <= 1e-9, "{}", rep.max_eigenvalue);

    let mut inflated = g.clone();
    inflated.agents[0].gamma *= 10.0;
    assert!(certify(&spec, &inflated, LMI_TOL).unwrap().max_eigenvalue > 0.0);
}

#[test]
fn single_node_inherits_budget() {
    let spec = single_node();
    let g = allocate_gains(&gain_structure(&spec), &[0.0], 2.0).unwrap();
    assert_eq!(g.alphas(), vec![1.0]);
    assert!((g.gammas()[0] - 2.0).abs() < 1e-15);
    let (lmax, _, feasible) = check_negative_semidefinite(&assemble_lmi(&spec, &g).unwrap(), LMI_TOL).unwrap();
    assert!(feasible);
    assert!(lmax.abs() < 1e-12, "boundary direction expected, got {lmax}");
}

#[test]
fn semidefinite_check_examples() {
    let (l, _, ok) = check_negative_semidefinite(&(-DMatrix::<f64>::identity(3, 3)), 1e-8).unwrap();
    assert!(ok);
    assert!((l + 1.0).abs() < 1e-14);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0]));
    assert!(check_negative_semidefinite(&d, 1e-8).unwrap().2);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, -1.0]));
    assert!(!check_negative_semidefinite(&d, 1e-8).unwrap().2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_holds_for_any_free_parameters(
        seed in any::<u64>(),
        n in 2usize..=6,
        b in prop::collection::vec(-5.0f64..5.0, 6),
        log_gr in -1.0f64..1.0,
    ) {
        let spec = random_interconnection(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let gains = allocate_gains(&gain_structure(&spec), &b[..n], 10f64.powf(log_gr)).unwrap();
        let rep = certify(&spec, &gains, LMI_TOL).unwrap();
        prop_assert!(rep.feasible, "lambda_max {} threshold {}", rep.max_eigenvalue, rep.threshold);
        for g in &gains.agents {
            prop_assert!(g.alpha > 0.0 && g.gamma > 0.0);
        }
    }

    #[test]
    fn schur_chain_agrees_with_full_matrix(
        seed in any::<u64>(),
        n in 2usize..=5,
        b in prop::collection::vec(-2.0f64..2.0, 5),
        log_gr in -1.0f64..1.0,
    ) {
        let spec = random_interconnection(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let gains = allocate_gains(&gain_structure(&spec), &b[..n], 10f64.powf(log_gr)).unwrap();
        let chain = SchurChain::new(&spec, &gains);
        let scale = gains.gamma_r.powi(2).max(1.0);
        prop_assert!(chain.disturbance_margin >= -1e-12 * scale);
        prop_assert!(chain.gershgorin_margin() >= -1e-9 * scale);
        prop_assert!(certify(&spec, &gains, LMI_TOL).unwrap().feasible);
    }

    #[test]
    fn gain_decreases_with_b(
        seed in any::<u64>(),
        n in 2usize..=6,
        b in prop::collection::vec(-3.0f64..3.0, 6),
        bump in 0.0f64..2.0,
        agent in 0usize..6,
    ) {
        let spec = random_interconnection(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let st = gain_structure(&spec);
        let i = agent % n;
        let mut b = b[..n].to_vec();
        b[i] = b[i].abs();
        let before = allocate_gains(&st, &b, 1.5).unwrap();
        b[i] += bump;
        let after = allocate_gains(&st, &b, 1.5).unwrap();
        prop_assert!(after.agents[i].alpha >= before.agents[i].alpha);
        prop_assert!(after.agents[i].gamma <= before.agents[i].gamma);
    }

    #[test]
    fn single_node_scale_covariance(b in -10.0f64..10.0, gamma_r in 0.01f64..100.0) {
        let g = allocate_gains(&gain_structure(&single_node()), &[b], gamma_r).unwrap();
        let expected = gamma_r / (1.0 + b * b).sqrt();
        prop_assert!((g.gammas()[0] - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn cell_gain_bound_for_any_theta(
        seed in any::<u64>(),
        state in 1usize..6,
        neurons in 1usize..6,
        inputs in 1usize..4,
        outputs in 1usize..4,
        scale in 0.01f64..5.0,
        log_gamma in -1.0f64..1.0,
        relu in any::<bool>(),
    ) {
        use rand::RngExt;
        use rand_distr::StandardNormal;
        let d = RenDims::new(state, neurons, inputs, outputs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..d.theta_len()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let gamma = 10f64.powf(log_gamma);
        let mat = build_ren(&RenTheta::new(theta, gamma).unwrap(), &d).unwrap();
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let inputs: Vec<DVector<f64>> = (0..30)
            .map(|_| DVector::from_fn(inputs, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let ratio = ren_rollout(&mat, &inputs, act).unwrap().gain_ratio().unwrap();
        prop_assert!(ratio <= gamma + 1e-9, "ratio {ratio} gamma {gamma}");
    }

    #[test]
    fn stage_loss_nonnegative(
        x in prop::collection::vec(-10.0f64..10.0, 16),
        u in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        let loss = benchmark_loss();
        let (x, u) = (DVector::from_vec(x), DVector::from_vec(u));
        let t = loss.terms(&x, &u);
        prop_assert!(t.trajectory >= 0.0 && t.collision >= 0.0 && t.obstacle >= 0.0 && t.formation >= 0.0);
        prop_assert!(loss.value(&x, &u) >= 0.0);
    }
}

fn benchmark_loss() -> netren::training::StageLoss {
    let cfg = ExperimentConfig::benchmark();
    let mut l: LossConfig = cfg.loss.unwrap();
    l.targets = cfg.vehicles.unwrap().targets;
    l.compile(16, 8).unwrap()
}

fn small_benchmark(epochs: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::benchmark();
    let t = c.training.as_mut().unwrap();
    t.epochs = epochs;
    t.horizon = 20;
    t.samples = 3;
    t.cell = CellShape { state: 4, neurons: 4 };
    c
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut cfg = small_benchmark(3);
    cfg.training.as_mut().unwrap().learning_rate = 0.0;
    let exp = cfg.build_plant().unwrap();
    let p = exp.problem();
    let tc = cfg.training().unwrap().clone();
    let init = TrainingState::initial(&p, &tc, cfg.gamma_r).unwrap();
    let out = train(&p, &exp.noise, &tc, init.clone(), &mut |_| Ok(())).unwrap();
    assert_eq!(out.state.params, init.params);
    let first = out.state.loss_history[0];
    assert!(out.state.loss_history.iter().all(|&l| l == first));
    assert_eq!(out.final_loss, first);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_json_is_exact(seed in any::<u64>()) {
        let mut cfg = small_benchmark(1);
        cfg.training.as_mut().unwrap().seed = seed;
        let exp = cfg.build_plant().unwrap();
        let p = exp.problem();
        let tc = cfg.training().unwrap().clone();
        let out = train(&p, &exp.noise, &tc, TrainingState::initial(&p, &tc, cfg.gamma_r).unwrap(), &mut |_| Ok(())).unwrap();
        let ck = Checkpoint { seed, config_hash: "h".into(), state: out.state };
        prop_assert_eq!(Checkpoint::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }
}

#[test]
fn zero_epochs_only_evaluates() {
    let cfg = small_benchmark(0);
    let exp = cfg.build_plant().unwrap();
    let p = exp.problem();
    let tc = cfg.training().unwrap().clone();
    let init = TrainingState::initial(&p, &tc, cfg.gamma_r).unwrap();
    let expected = empirical_loss(&p, &init.params, &tc.sample_set(&exp.noise, 0)).unwrap();
    let out = train(&p, &exp.noise, &tc, init.clone(), &mut |_| Ok(())).unwrap();
    assert!(out.state.loss_history.is_empty());
    assert_eq!(out.state.params, init.params);
    assert_eq!(out.final_loss, expected);
    assert!(out.certificate.feasible);
}

#[test]
fn zero_noise_loss_is_constant() {
    let cfg = small_benchmark(1);
    let exp = cfg.build_plant().unwrap();
    let p = exp.problem();
    let samples = vec![NoiseModel::zero(16, 20); 2];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = TrainableParams::random(&mut rng, &exp.base.spec, vec![CellShape { state: 3, neurons: 3 }; 4], 5.0, 0.5, 1.0).unwrap();
    let b = TrainableParams::random(&mut rng, &exp.base.spec, a.shapes.clone(), 5.0, 0.5, 1.0).unwrap();
    let zero = DVector::zeros(16);
    let stage = exp.loss.value(&zero, &DVector::zeros(8));
    let la = empirical_loss(&p, &a, &samples).unwrap();
    assert!((la - 21.0 * stage).abs() < 1e-12);
    assert_eq!(la, empirical_loss(&p, &b, &samples).unwrap());
}

/// Agent 1's outputs are cut off from the plant and from every neighbor, so
/// its parameters cannot affect the loss.
#[test]
fn disconnected_agent_has_zero_gradient() {
    let cfg = small_benchmark(1);
    let mut exp = cfg.build_plant().unwrap();
    let zb = exp.base.spec.z_blocks();
    for j in zb.range(1) {
        exp.base.spec.m_uz.column_mut(j).fill(0.0);
        exp.base.spec.m_vz.column_mut(j).fill(0.0);
    }
    exp.base.structure = gain_structure(&exp.base.spec);
    let p = exp.problem();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = TrainableParams::random(&mut rng, &exp.base.spec, vec![CellShape { state: 3, neurons: 3 }; 4], 3.0, 0.3, 1.0).unwrap();
    let samples: Vec<_> = (0..2).map(|_| exp.noise.sample(&mut rng, 20)).collect();
    let g = grad_params(&p, &params, &samples).unwrap();
    assert!(g.theta[1].iter().all(|&x| x == 0.0));
    assert_eq!(g.b[1], 0.0);
    assert!(g.theta[0].iter().any(|&x| x != 0.0));
    assert!(g.b.iter().enumerate().any(|(i, &x)| i != 1 && x != 0.0));
    assert_eq!(exp.fleet.state_blocks().len(), 4);
}
