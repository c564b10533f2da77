//! Commands behind the CLI: gain tuning, agent training, evaluation runs,
//! controller-only step studies and report aggregation.

pub mod config;
pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{AdaptiveController, ControllerConfig, JointController, PidController};
use crate::cso::tuning::{control_objective, GainObjective};
use crate::cso::{optimize_with_progress, sub_seed, IterationRecord};
use crate::error::{Error, Result};
use crate::reach::{write_trace, DoneReason, ReachEnv, TaskSpec};
use crate::sac::{self, EpisodeLog, SacAgent, TrainState};
use crate::sim::{simulate_step, trajectory_metrics, StepMetrics, Trajectory};
use crate::SimRng;

pub use config::{CsoSection, GainSource, PolicySource, RunConfig, RunSection};
pub use report::{format_table, line_chart, read_trace, report_row, write_report_csv, ReportRow, Series};

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numerical divergence, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => 2,
        Error::DivergenceDetected(_) | Error::NumericalBlowup { .. } => 3,
        _ => 1,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub gains: ControllerConfig,
    pub cost: f64,
    /// Cost of the reference gains on the same scenario.
    pub reference_cost: f64,
    pub evaluations: usize,
    pub history: Vec<IterationRecord>,
}

/// Run the cuckoo search over the controller gains.
pub fn tune(cfg: &RunConfig) -> Result<TuneSummary> {
    let cso = cfg.cso.to_config(cfg.run.seed);
    let base = match &cfg.controller {
        GainSource::Explicit(c) => *c,
        _ => ControllerConfig::reference_gains(),
    };
    let objective = GainObjective { plant: cfg.plant()?, scenario: cfg.cso.scenario.clone(), base };
    let outcome = optimize_with_progress(&objective, &cso, |rec| {
        log::debug!("iteration {} best {:.6} mean {:.6}", rec.iteration, rec.best_cost, rec.mean_cost);
    })?;
    let gains = base.with_gains(&outcome.best.position);
    let reference = control_objective(
        &base.with_gains(&ControllerConfig::reference_gains().gains()),
        &cfg.cso.scenario,
        &objective.plant,
        cso.seed,
    );
    Ok(TuneSummary {
        gains,
        cost: outcome.best.cost(),
        reference_cost: reference.cost,
        evaluations: outcome.evaluations,
        history: outcome.history,
    })
}

/// `gains.json` -> `gains_history.csv` in the same directory.
pub fn history_path(gains: &Path) -> PathBuf {
    let stem = gains.file_stem().and_then(|s| s.to_str()).unwrap_or("gains");
    gains.with_file_name(format!("{stem}_history.csv"))
}

/// Tune and write the gains JSON plus the per-iteration history CSV.
pub fn cmd_tune(cfg: &RunConfig, out: &Path) -> Result<TuneSummary> {
    let summary = tune(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(out, &summary.gains)?;
    let mut w = csv::Writer::from_path(history_path(out))?;
    for rec in &summary.history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(summary)
}

/// Controller gains from the configured source.
pub fn resolve_gains(cfg: &RunConfig) -> Result<ControllerConfig> {
    match &cfg.controller {
        GainSource::Explicit(c) => Ok(*c),
        GainSource::File(p) => {
            let path = cfg.resolve(p);
            let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let c: ControllerConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok(c)
        }
        GainSource::Tune => Ok(tune(cfg)?.gains),
    }
}

pub fn build_env(cfg: &RunConfig, gains: ControllerConfig) -> Result<ReachEnv> {
    ReachEnv::new(cfg.plant()?, gains, cfg.task.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub episodes: usize,
    pub total_steps: usize,
    pub random_steps: usize,
    pub successes: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Train the agent, writing `checkpoint.json` and appending one row per
/// episode to `train_log.csv`. A divergence still leaves a checkpoint
/// behind before the error is returned.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>, episodes: Option<usize>) -> Result<TrainSummary> {
    create_dir(out_dir)?;
    let gains = resolve_gains(cfg)?;
    let mut env = build_env(cfg, gains)?;
    let mut state = match resume {
        Some(p) => {
            let s = TrainState::load(p)?;
            if s.agent.nets.obs_dim() != sac::Environment::observation_dim(&env) {
                return Err(Error::Config("checkpoint does not match the task's observation size".into()));
            }
            s
        }
        None => TrainState::for_env(&env, cfg.sac_config())?,
    };
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    let append = resume.is_some() && log_path.exists();
    let file = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(&log_path)?;
    let mut log = csv::WriterBuilder::new().has_headers(!append).from_writer(file);

    let budget = episodes.unwrap_or(cfg.sac.episodes);
    let mut successes = 0;
    let result = sac::train(&mut env, &mut state, budget, |ep: &EpisodeLog, st: &TrainState| {
        successes += ep.success as usize;
        let _ = log.serialize(ep);
        let _ = log.flush();
        if ep.episode % 50 == 0 {
            log::info!("episode {} steps {} return {:.1} success {}", ep.episode, st.total_steps, ep.episode_return, ep.success);
        }
    });
    log.flush()?;
    state.save(&checkpoint)?;
    let logs = result?;
    Ok(TrainSummary {
        episodes: logs.len(),
        total_steps: state.total_steps,
        random_steps: state.random_steps,
        successes,
        checkpoint,
        log: log_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub row: ReportRow,
    pub reason: DoneReason,
    pub target: [f64; 2],
}

enum Driver<'a> {
    Scripted(&'a crate::reach::ScriptedPolicy),
    Agent(&'a SacAgent),
}

fn run_episode(env: &mut ReachEnv, driver: &Driver, target: Option<[f64; 2]>, rng: &mut SimRng, task_id: usize) -> Result<(EpisodeOutcome, Vec<crate::reach::TraceRow>)> {
    env.record = true;
    let mut obs = match target {
        Some(t) => env.reset_with_target(t),
        None => env.reset(rng),
    };
    let reason = loop {
        let action = match driver {
            Driver::Scripted(p) => p.act(env),
            Driver::Agent(a) => a.act(&obs, rng, true),
        };
        let r = env.step(&action, rng)?;
        obs = r.observation;
        if r.done {
            break r.reason;
        }
    };
    let trace = env.trace().to_vec();
    let row = report_row(task_id, &trace, env.params(), &env.task)?;
    Ok((EpisodeOutcome { row, reason, target: env.target() }, trace))
}

pub const REPORT_FILE: &str = "report.csv";

fn trace_file(k: usize) -> String {
    format!("episode_{k:03}.csv")
}

/// Evaluate the configured policy for `run.episodes` episodes (in
/// parallel, each with its own seeded stream) and write traces, the report
/// and the plots.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<EpisodeOutcome>> {
    create_dir(out_dir)?;
    let gains = resolve_gains(cfg)?;
    let env = build_env(cfg, gains)?;
    let agent = match &cfg.run.policy {
        PolicySource::Scripted => None,
        PolicySource::Checkpoint(p) => {
            let s = TrainState::load(&cfg.resolve(p))?;
            if s.agent.nets.obs_dim() != sac::Environment::observation_dim(&env) {
                return Err(Error::Config("checkpoint does not match the task's observation size".into()));
            }
            Some(s.agent)
        }
    };
    let driver = match &agent {
        Some(a) => Driver::Agent(a),
        None => Driver::Scripted(&cfg.run.scripted),
    };
    let presets = TaskSpec::preset_targets();
    let results: Vec<(EpisodeOutcome, Vec<crate::reach::TraceRow>)> = (0..cfg.run.episodes)
        .into_par_iter()
        .map(|k| {
            let mut env = env.clone();
            let mut rng = SimRng::seed_from_u64(sub_seed(cfg.run.seed, 0, k));
            let target = cfg.run.preset_targets.then(|| presets[k % presets.len()]);
            run_episode(&mut env, &driver, target, &mut rng, k)
        })
        .collect::<Result<_>>()?;

    for (k, (_, trace)) in results.iter().enumerate() {
        write_trace(trace, fs::File::create(out_dir.join(trace_file(k)))?)?;
    }
    let outcomes: Vec<EpisodeOutcome> = results.iter().map(|r| r.0.clone()).collect();
    let rows: Vec<ReportRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    write_report_csv(&rows, &out_dir.join(REPORT_FILE))?;
    write_json(&out_dir.join("report.json"), &outcomes)?;
    write_plots(&results.iter().map(|r| r.1.as_slice()).collect::<Vec<_>>(), out_dir)?;
    Ok(outcomes)
}

fn write_plots(traces: &[&[crate::reach::TraceRow]], out_dir: &Path) -> Result<()> {
    let err: Vec<Series> = traces
        .iter()
        .enumerate()
        .map(|(k, t)| Series { label: format!("task {k}"), points: t.iter().map(|r| (r.t, 100.0 * r.tip_error)).collect() })
        .collect();
    fs::write(out_dir.join("tip_error.svg"), line_chart("Tip-to-target error", "time [s]", "error [cm]", &err))?;
    let mut torque = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        let n = t.first().map_or(0, |r| r.tau.len());
        for j in 0..n {
            torque.push(Series { label: format!("task {k} joint {}", j + 1), points: t.iter().map(|r| (r.t, r.tau[j])).collect() });
        }
    }
    fs::write(out_dir.join("torque.svg"), line_chart("Joint torque", "time [s]", "torque [N m]", &torque))?;
    Ok(())
}

/// Rebuild the report from the traces in a `run` output directory. The
/// traces are only read.
pub fn cmd_report(cfg: &RunConfig, dir: &Path) -> Result<Vec<ReportRow>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("episode_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no episode traces in {}", dir.display())));
    }
    let mut rows = Vec::with_capacity(files.len());
    for (k, f) in files.iter().enumerate() {
        rows.push(report_row(k, &read_trace(f)?, &cfg.arm, &cfg.task)?);
    }
    write_report_csv(&rows, &dir.join(REPORT_FILE))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub controller: String,
    pub scenario_hash: String,
    /// Per-joint step metrics; `None` for zero-amplitude joints.
    pub metrics: Vec<Option<StepMetrics>>,
    /// Every joint had a zero-amplitude step, so there is nothing to measure.
    pub trivial: bool,
    pub max_torque_nm: f64,
}

/// SHA-256 over the canonical JSON of everything that defines a step study.
pub fn scenario_hash(cfg: &RunConfig) -> String {
    let key = serde_json::json!({
        "arm": cfg.arm,
        "reference": cfg.run.reference,
        "uncertainty": cfg.run.uncertainty,
        "seed": cfg.run.seed,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_step_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.x1.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("q{j}")));
    header.extend((1..=n).map(|j| format!("q{j}d")));
    header.extend((1..=n).map(|j| format!("tau{j}")));
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut rec = vec![traj.t[k]];
        rec.extend(traj.x1[k].iter());
        rec.extend(traj.x1d[k].iter());
        rec.extend(traj.tau[k].iter());
        w.write_record(rec.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Step study of the adaptive controller and, when configured, the PID
/// baseline on the same plant, reference and disturbance stream.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<SimulateRow>> {
    create_dir(out_dir)?;
    let gains = resolve_gains(cfg)?;
    let plant = cfg.plant()?;
    let reference = &cfg.run.reference;
    let hash = scenario_hash(cfg);
    let mut controllers: Vec<(String, Box<dyn JointController>)> =
        vec![("adaptive".to_string(), Box::new(AdaptiveController::new(gains)))];
    if let Some(pid) = cfg.run.pid {
        controllers.push(("pid".to_string(), Box::new(PidController::new(pid, plant.dof()))));
    }
    let mut rows = Vec::new();
    for (name, mut ctl) in controllers {
        let mut rng = SimRng::seed_from_u64(cfg.run.seed);
        let traj = simulate_step(&plant, ctl.as_mut(), reference, &mut rng)?;
        write_step_trajectory(&traj, &out_dir.join(format!("simulate_{name}.csv")))?;
        let metrics = trajectory_metrics(&traj, reference);
        rows.push(SimulateRow {
            controller: name,
            scenario_hash: hash.clone(),
            trivial: metrics.iter().all(|m| m.is_none()),
            metrics,
            max_torque_nm: traj.max_abs_torque(),
        });
    }
    write_json(&out_dir.join("simulate.json"), &rows)?;
    Ok(rows)
}
