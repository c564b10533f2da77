use std::path::{Path, PathBuf};
use std::process::ExitCode;

use armreach::harness::{self, format_table, GainSource, PolicySource, RunConfig};
use armreach::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "armreach", version, about = "Adaptive control, gain tuning and reaching policies for a planar arm")]
struct Cli {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `run.out_dir`. For `report`, the run
    /// directory to aggregate.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the controller gains with cuckoo search.
    Tune(TuneArgs),
    /// Train the reaching agent.
    Train(TrainArgs),
    /// Evaluate a policy and write traces, a report and plots.
    Run(RunArgs),
    /// Step-response study of the adaptive controller and the PID baseline.
    Simulate,
    /// Rebuild the report from the traces of a previous `run`.
    Report,
}

#[derive(Args)]
struct TuneArgs {
    /// Nest count.
    #[arg(long)]
    eta: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Abandonment probability.
    #[arg(long)]
    pa: Option<f64>,
    /// Lévy exponent.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Episodes to run in this invocation.
    #[arg(long)]
    episodes: Option<usize>,
    /// Controller gains JSON written by `tune`.
    #[arg(long)]
    gains: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Policy checkpoint; the scripted policy is used otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Draw random targets instead of cycling through the presets.
    #[arg(long)]
    random_targets: bool,
    /// Controller gains JSON written by `tune`.
    #[arg(long)]
    gains: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.run.out_dir))
}

fn cwd_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    let out = out_dir(cli, &cfg);
    match &cli.command {
        Command::Tune(a) => {
            if let Some(v) = a.eta {
                cfg.cso.eta = v;
            }
            if let Some(v) = a.iterations {
                cfg.cso.iterations = v;
            }
            if let Some(v) = a.pa {
                cfg.cso.pa = v;
            }
            if let Some(v) = a.beta {
                cfg.cso.beta = v;
            }
            cfg.validate()?;
            let path = out.join("gains.json");
            let s = harness::cmd_tune(&cfg, &path)?;
            println!(
                "gains a0={:.6} a1={:.6} b1={:.6} c1={:.6} r1={:.6}",
                s.gains.a0, s.gains.a1, s.gains.b1, s.gains.c1, s.gains.r1
            );
            println!("cost {:.6} (reference gains {:.6}), {} evaluations", s.cost, s.reference_cost, s.evaluations);
            println!("wrote {}", path.display());
        }
        Command::Train(a) => {
            if let Some(g) = &a.gains {
                cfg.controller = GainSource::File(cwd_path(g));
            }
            let s = harness::cmd_train(&cfg, &out, a.resume.as_deref(), a.episodes)?;
            println!(
                "{} episodes, {} steps ({} random), {} reached",
                s.episodes, s.total_steps, s.random_steps, s.successes
            );
            println!("wrote {} and {}", s.checkpoint.display(), s.log.display());
        }
        Command::Run(a) => {
            if let Some(g) = &a.gains {
                cfg.controller = GainSource::File(cwd_path(g));
            }
            if let Some(c) = &a.checkpoint {
                cfg.run.policy = PolicySource::Checkpoint(cwd_path(c));
            }
            if let Some(k) = a.episodes {
                cfg.run.episodes = k;
            }
            if a.random_targets {
                cfg.run.preset_targets = false;
            }
            cfg.validate()?;
            let outcomes = harness::cmd_run(&cfg, &out)?;
            let rows: Vec<_> = outcomes.into_iter().map(|o| o.row).collect();
            print!("{}", format_table(&rows));
            println!("wrote {}", out.display());
        }
        Command::Simulate => {
            let rows = harness::cmd_simulate(&cfg, &out)?;
            for r in &rows {
                println!("{} scenario {}", r.controller, &r.scenario_hash[..16]);
                if r.trivial {
                    println!("  zero-amplitude reference, nothing to measure");
                }
                for (j, m) in r.metrics.iter().enumerate() {
                    if let Some(m) = m {
                        println!(
                            "  joint {}: Tr {:.4} s  Ts {:.4} s  Mp {:.2} %  Ess {:.2e} rad",
                            j + 1,
                            m.rise_time,
                            m.settling_time,
                            100.0 * m.overshoot,
                            m.steady_state_error
                        );
                    }
                }
                println!("  max torque {:.1} N m", r.max_torque_nm);
            }
        }
        Command::Report => {
            let rows = harness::cmd_report(&cfg, &out)?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
