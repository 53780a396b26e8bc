use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use netren::experiment::{ExperimentConfig, PlantExperiment};
use netren::network::{allocate_gains, certify, AgentGain, InterconnectionFile, LmiReport, LMI_TOL};
use netren::plant::{closed_loop_rollout, NoiseModel, RolloutRecord, VehicleFleet};
use netren::training::{train, Checkpoint, TrainableParams, TrainingConfig, TrainingState};
use serde::Serialize;

use crate::config::{config_hash, to_toml};
use crate::error::CliError;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub debug_certify: bool,
    pub zero_noise: bool,
    pub horizon: Option<usize>,
    pub checkpoint_every: usize,
    pub json: bool,
}

impl Options {
    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn training(&self, cfg: &ExperimentConfig) -> Result<TrainingConfig, CliError> {
        let mut t = cfg.training()?.clone();
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(h) = self.horizon {
            t.horizon = h;
        }
        t.debug_certify |= self.debug_certify;
        Ok(t)
    }
}

#[derive(Debug, Serialize)]
pub struct GainsReport {
    pub gamma_r: f64,
    pub agents: Vec<AgentGain>,
    pub certificate: LmiReport,
}

/// Statistics of one closed-loop rollout of the vehicle fleet.
#[derive(Debug, Clone, Serialize)]
pub struct RolloutSummary {
    pub horizon: usize,
    /// `sum_{t <= T/2} |x_t|^2`.
    pub head_energy: f64,
    /// `sum_{t > T/2} |x_t|^2`.
    pub tail_energy: f64,
    pub max_speed: f64,
    pub min_distance: f64,
    pub collision_distance: f64,
    pub collision: bool,
    /// Distance of each agent to its target at the last step.
    pub final_target_distance: Vec<f64>,
}

fn summarize(exp: &PlantExperiment, rec: &RolloutRecord) -> RolloutSummary {
    let horizon = rec.horizon();
    let (head_energy, tail_energy) = rec.energy_split(horizon / 2);
    let n = exp.fleet.params.agents();
    let s = VehicleFleet::STATE;
    let mut max_speed = 0.0f64;
    let mut min_distance = f64::INFINITY;
    for x in &rec.x {
        for i in 0..n {
            max_speed = max_speed.max(x[s * i + 2].hypot(x[s * i + 3]));
        }
        min_distance = min_distance.min(exp.loss.min_distance(x));
    }
    let last = rec.x.last().expect("rollout has at least one step");
    let collision_distance = exp.loss.cfg.collision_distance;
    RolloutSummary {
        horizon,
        head_energy,
        tail_energy,
        max_speed,
        min_distance,
        collision_distance,
        collision: min_distance < collision_distance,
        final_target_distance: (0..n).map(|i| last[s * i].hypot(last[s * i + 1])).collect(),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    // write-then-rename so readers never see a partial file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(netren::Error::from)?;
    write_text(path, &(text + "\n"))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Checkpoint::from_json(&text)?)
}

/// Parameters from `--checkpoint`, or `None`.
fn checkpoint_params(opts: &Options) -> Result<Option<TrainableParams>, CliError> {
    opts.checkpoint
        .as_deref()
        .map(|p| read_checkpoint(p).map(|c| c.state.params))
        .transpose()
}

/// Writes to stdout; a closed pipe (`netren ... | head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    emit(&(serde_json::to_string_pretty(value).map_err(netren::Error::from)? + "\n"))
}

pub fn gains(cfg: &ExperimentConfig, opts: &Options) -> Result<GainsReport, CliError> {
    let exp = cfg.build()?;
    let (b, gamma_r) = match checkpoint_params(opts)? {
        Some(p) => {
            p.check(&exp.spec)?;
            (p.b, p.gamma_r)
        }
        None => (exp.b(), cfg.gamma_r),
    };
    let alloc = allocate_gains(&exp.structure, &b, gamma_r)?;
    let certificate = certify(&exp.spec, &alloc, LMI_TOL)?;
    let report = GainsReport {
        gamma_r,
        agents: alloc.agents,
        certificate,
    };
    if opts.json {
        print_json(&report)?;
    } else {
        let mut text = format!("gamma_R = {gamma_r}\n");
        text += &format!("{:>5} {:>14} {:>14} {:>14}  bound\n", "agent", "alpha", "gamma", "alpha*gamma^2");
        for (i, a) in report.agents.iter().enumerate() {
            text += &format!(
                "{i:>5} {:>14.6e} {:>14.6e} {:>14.6e}  {:?}\n",
                a.alpha,
                a.gamma,
                a.alpha * a.gamma * a.gamma,
                a.active
            );
        }
        let c = &report.certificate;
        text += &format!(
            "certificate: max eigenvalue {:.3e} (threshold {:.3e}, dimension {}): {}\n",
            c.max_eigenvalue,
            c.threshold,
            c.dimension,
            if c.feasible { "feasible" } else { "INFEASIBLE" }
        );
        emit(&text)?;
    }
    if let Some(dir) = &opts.out {
        create_dir(dir)?;
        write_json(&dir.join("gains.json"), &report)?;
    }
    Ok(report)
}

pub fn certify_cmd(cfg: &ExperimentConfig, opts: &Options) -> Result<LmiReport, CliError> {
    let exp = cfg.build()?;
    let (b, gamma_r) = match checkpoint_params(opts)? {
        Some(p) => {
            p.check(&exp.spec)?;
            (p.b, p.gamma_r)
        }
        None => (exp.b(), cfg.gamma_r),
    };
    let report = certify(&exp.spec, &allocate_gains(&exp.structure, &b, gamma_r)?, LMI_TOL)?;
    print_json(&report)?;
    if let Some(dir) = &opts.out {
        create_dir(dir)?;
        write_json(&dir.join("certificate.json"), &report)?;
    }
    if !report.feasible {
        return Err(CliError::Infeasible(report.max_eigenvalue));
    }
    Ok(report)
}

pub fn simulate(cfg: &ExperimentConfig, opts: &Options) -> Result<RolloutSummary, CliError> {
    let exp = cfg.build_plant()?;
    let problem = exp.problem();
    let mut tc = opts.training(cfg)?;
    let params = match checkpoint_params(opts)? {
        Some(p) => p,
        None => TrainingState::initial(&problem, &tc, cfg.gamma_r)?.params,
    };
    let w = if opts.zero_noise {
        NoiseModel::zero(exp.noise.state_dim(), tc.horizon)
    } else {
        tc.samples = 1;
        tc.sample_set(&exp.noise, 0).remove(0)
    };
    let ctrl = params.controller(&exp.base.spec, &exp.base.structure, cfg.activation)?;
    let rec = closed_loop_rollout(&exp.fleet, &ctrl, &w)?;
    let summary = summarize(&exp, &rec);
    let dir = opts.out_dir(cfg);
    create_dir(&dir)?;
    rec.write_csv(&exp.fleet, create_file(&dir.join("trajectory.csv"))?)?;
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(&summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: f64,
    pub gammas: Vec<f64>,
    pub certificate: LmiReport,
}

pub fn train_cmd(cfg: &ExperimentConfig, opts: &Options) -> Result<TrainReport, CliError> {
    let exp = cfg.build_plant()?;
    let problem = exp.problem();
    let tc = opts.training(cfg)?;
    let mut effective = cfg.clone();
    effective.training = Some(tc.clone());
    let hash = config_hash(&effective);
    let state = match &opts.checkpoint {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            if ck.config_hash != hash || ck.seed != tc.seed {
                return Err(CliError::Usage(format!(
                    "checkpoint {} belongs to a different configuration or seed",
                    path.display()
                )));
            }
            ck.state.params.check(&exp.base.spec)?;
            ck.state
        }
        None => TrainingState::initial(&problem, &tc, cfg.gamma_r)?,
    };
    let dir = opts.out_dir(cfg);
    create_dir(&dir)?;
    let ck_path = dir.join("checkpoint.json");
    let save = |state: &TrainingState| -> Result<(), CliError> {
        let ck = Checkpoint {
            seed: tc.seed,
            config_hash: hash.clone(),
            state: state.clone(),
        };
        write_text(&ck_path, &ck.to_json()?)
    };
    let every = opts.checkpoint_every.max(1);
    let mut save_err = None;
    let outcome = train(&problem, &exp.noise, &tc, state, &mut |s| {
        let e = s.epoch;
        eprintln!("epoch {e:>5}  loss {:.6e}", s.loss_history[e - 1]);
        if e % every == 0 {
            if let Err(err) = save(s) {
                save_err = Some(err);
                return Err(netren::Error::Config("checkpoint write failed".into()));
            }
        }
        Ok(())
    });
    if let Some(err) = save_err {
        return Err(err);
    }
    let outcome = outcome?;
    save(&outcome.state)?;
    outcome.state.write_history_csv(create_file(&dir.join("history.csv"))?)?;
    write_json(&dir.join("certificate.json"), &outcome.certificate)?;
    let report = TrainReport {
        epochs: outcome.state.epoch,
        initial_loss: outcome.state.loss_history.first().copied(),
        final_loss: outcome.final_loss,
        gammas: outcome.state.params.gains(&exp.base.structure)?.gammas(),
        certificate: outcome.certificate,
    };
    print_json(&report)?;
    if !report.certificate.feasible {
        return Err(CliError::Infeasible(report.certificate.max_eigenvalue));
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
struct Scene<'a> {
    targets: &'a [[f64; 2]],
    springs: &'a [netren::plant::Spring],
    obstacles: &'a [netren::training::Obstacle],
    collision_distance: f64,
}

/// Writes plot-ready files: resolved config, matrices, gains, scene geometry
/// and, with a checkpoint, the loss history and one trajectory per training sample.
pub fn export(cfg: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let dir = opts.out_dir(cfg);
    create_dir(&dir)?;
    let exp = cfg.build()?;
    let mut written = Vec::new();
    let mut file = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_text(&file("config.toml"), &to_toml(cfg)?)?;
    write_json(&file("interconnection.json"), &InterconnectionFile::from(&exp.spec))?;
    let ck = opts.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let (b, gamma_r) = match &ck {
        Some(c) => (c.state.params.b.clone(), c.state.params.gamma_r),
        None => (exp.b(), cfg.gamma_r),
    };
    let alloc = allocate_gains(&exp.structure, &b, gamma_r)?;
    let certificate = certify(&exp.spec, &alloc, LMI_TOL)?;
    write_json(
        &file("gains.json"),
        &GainsReport {
            gamma_r,
            agents: alloc.agents,
            certificate,
        },
    )?;
    if cfg.vehicles.is_none() {
        return Ok(written);
    }
    let pexp = cfg.build_plant()?;
    write_json(
        &file("scene.json"),
        &Scene {
            targets: &pexp.fleet.params.targets,
            springs: &pexp.fleet.params.springs,
            obstacles: &pexp.loss.cfg.obstacles,
            collision_distance: pexp.loss.cfg.collision_distance,
        },
    )?;
    if let Some(ck) = ck {
        ck.state.params.check(&pexp.base.spec)?;
        ck.state.write_history_csv(create_file(&file("history.csv"))?)?;
        let tc = opts.training(cfg)?;
        let ctrl = ck.state.params.controller(&pexp.base.spec, &pexp.base.structure, cfg.activation)?;
        let mut summaries = Vec::new();
        for (s, w) in tc.sample_set(&pexp.noise, 0).iter().enumerate() {
            let rec = closed_loop_rollout(&pexp.fleet, &ctrl, w)?;
            rec.write_csv(&pexp.fleet, create_file(&file(&format!("trajectory_{s}.csv")))?)?;
            summaries.push(summarize(&pexp, &rec));
        }
        write_json(&file("summaries.json"), &summaries)?;
    }
    let listing: String = written.iter().map(|p| format!("{}\n", p.display())).collect();
    emit(&listing)?;
    Ok(written)
}
