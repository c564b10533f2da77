//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 9 trains an agent for up to 2000 episodes and only runs with
//! `--include-ignored` (or `--ignored`), e.g.
//! `cargo test --release --test acceptance -- --include-ignored 9`.

mod common;

use std::time::{Duration, Instant};

use armreach::control::{adaptive_update, control_step, AdaptiveController, AdaptiveState, ControllerConfig};
use armreach::cso::tuning::{control_objective, default_tuning_config, GainObjective, TuningScenario};
use armreach::cso::{optimize, CsoConfig, CsoOutcome};
use armreach::dynamics::{coriolis_matrix, gravity_vector, mass_matrix, ArmParams, JointState, Plant, Uncertainty};
use armreach::harness::{cmd_run, RunConfig};
use armreach::reach::{reward, DoneReason, Events, ReachEnv, TaskSpec};
use armreach::sac::{
    self, evaluate_episode, policy_loss, q_loss, soft_update, train_episode, value_loss, Batch, Mlp, Networks, ReplayBuffer,
    SacAgent, SacConfig, TrainState, Transition,
};
use armreach::sim::{fit_decay, simulate_step, StepReference};
use armreach::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_gains() -> ControllerConfig {
    ControllerConfig::from_gains(&[668.0, 552.0, 1.8, 0.001, 0.69])
}

fn controller_speed() -> Check {
    let plant = Plant::reference(ArmParams::default()).unwrap();
    let reference = StepReference::uniform(&[0.0, 0.0], 0.1, 0.1);
    let mut ctl = AdaptiveController::new(reference_gains());
    let traj = simulate_step(&plant, &mut ctl, &reference, &mut SimRng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let k = traj.t.iter().position(|t| (t - 0.05).abs() < 1e-9).ok_or("no sample at 0.05 s")?;
    let e = (&traj.x1[k] - &traj.x1d[k]).amax();
    ensure(e < 0.005, format!("max |e1|(0.05 s) = {e:.3e} rad"))
}

fn exponential_decay() -> Check {
    let plant = Plant::nominal(ArmParams::default()).unwrap();
    let reference = StepReference::uniform(&[0.0, 0.0], 0.1, 0.5);
    let mut ctl = AdaptiveController::new(reference_gains());
    let traj = simulate_step(&plant, &mut ctl, &reference, &mut SimRng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let fit = fit_decay(&traj.t, &traj.error_norm(), 10.0);
    ensure(
        fit.rate <= -50.0 && fit.floor <= 1e-4,
        format!("slope {:.1} 1/s over [{:.3}, {:.3}] s, floor {:.2e} rad", fit.rate, fit.window.0, fit.window.1, fit.floor),
    )
}

fn adaptive_estimate_nonnegative() -> Check {
    let mut rng = SimRng::seed_from_u64(3);
    let params = ArmParams::default();
    let mut updates = 0usize;
    for seq in 0..1000 {
        let g = |rng: &mut SimRng, lo: f64, hi: f64| 10f64.powf(rng.random_range(lo..hi));
        let mut cfg = ControllerConfig::from_gains(&[
            g(&mut rng, -2.0, 3.0),
            g(&mut rng, -2.0, 3.0),
            g(&mut rng, -3.0, 2.0),
            g(&mut rng, -6.0, 3.0),
            g(&mut rng, -3.0, 3.0),
        ]);
        cfg.rho0 = if seq % 2 == 0 { 0.0 } else { g(&mut rng, -3.0, 2.0) };
        let dt = g(&mut rng, -4.0, -1.0);
        let mut state = AdaptiveState::new(&cfg);
        let len = rng.random_range(1..200);
        for k in 0..len {
            let scale = g(&mut rng, -4.0, 1.0);
            if k % 2 == 0 {
                let y2 = DVector::from_fn(2, |_, _| scale * rng.random_range(-1.0..1.0));
                state.rho_hat = adaptive_update(state.rho_hat, &y2, &cfg, dt);
            } else {
                let s = JointState::new(
                    DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)),
                    DVector::from_fn(2, |_, _| scale * rng.random_range(-1.0..1.0)),
                    0.0,
                )
                .unwrap();
                let x1d = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
                let x2d = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
                state = control_step(&params, &s, &x1d, &x2d, state, &cfg, dt).map_err(|e| e.to_string())?.1;
            }
            updates += 1;
            if !(state.rho_hat >= 0.0) {
                return Err(format!("sequence {seq} step {k}: rho_hat = {}", state.rho_hat));
            }
        }
    }
    Ok(format!("{updates} updates over 1000 sequences, estimate never negative"))
}

fn dynamics_correctness() -> Check {
    let p = ArmParams::default();
    let mut rng = SimRng::seed_from_u64(4);
    let pi = std::f64::consts::PI;

    let mut worst_skew: f64 = 0.0;
    for _ in 0..10_000 {
        let q = DVector::from_fn(2, |_, _| rng.random_range(-pi..pi));
        let qd = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let h = 1e-5;
        let m_dot = (mass_matrix(&(&q + &qd * h), &p) - mass_matrix(&(&q - &qd * h), &p)) / (2.0 * h);
        let n = m_dot - coriolis_matrix(&q, &qd, &p) * 2.0;
        worst_skew = worst_skew.max((z.transpose() * n * &z)[(0, 0)].abs());
    }

    let plant = Plant::new(p.clone(), true, Uncertainty::Off).unwrap();
    let mut s = JointState::new(DVector::from_vec(vec![0.3, -0.5]), DVector::from_vec(vec![1.0, -1.0]), 0.0).unwrap();
    let energy = |s: &JointState| {
        common::kinetic_energy(s.x1.as_slice(), s.x2.as_slice(), &p) + common::potential_energy(s.x1.as_slice(), &p)
    };
    let e0 = energy(&s);
    let horizon = 2.0;
    let zero = DVector::zeros(2);
    let mut noise = SimRng::seed_from_u64(0);
    for _ in 0..(horizon / 1e-3) as usize {
        s = plant.step(&s, &zero, 1e-3, &mut noise).map_err(|e| e.to_string())?;
    }
    let drift = (energy(&s) - e0).abs() / horizon;

    let mut worst_gravity: f64 = 0.0;
    for _ in 0..1000 {
        let q = [rng.random_range(-pi..pi), rng.random_range(-pi..pi)];
        let oracle = common::gravity_from_energy(&q, &p);
        let g = gravity_vector(&DVector::from_column_slice(&q), &p);
        worst_gravity = worst_gravity.max((g - &oracle).norm() / oracle.norm().max(1e-2));
    }
    ensure(
        worst_skew <= 1e-9 && drift < 1e-6 && worst_gravity < 1e-6,
        format!("skew {worst_skew:.1e}, energy drift {drift:.1e} J/s, gravity rel err {worst_gravity:.1e}"),
    )
}

fn elitist(out: &CsoOutcome) -> bool {
    out.history.windows(2).all(|w| w[1].best_cost <= w[0].best_cost)
        && out.history.last().map(|r| r.best_cost) == Some(out.best.cost())
}

fn cso_benchmarks() -> Check {
    let mut sphere_best = Vec::new();
    let mut rosen_best: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..10 {
        let cfg = CsoConfig::new(vec![(-5.0, 5.0); 5], seed);
        let out = optimize(&|x: &[f64]| common::sphere(x), &cfg).map_err(|e| e.to_string())?;
        monotone &= elitist(&out);
        sphere_best.push(out.best.cost());
        let cfg = CsoConfig::new(vec![(-2.0, 2.0); 2], seed);
        let out = optimize(&|x: &[f64]| common::rosenbrock(x), &cfg).map_err(|e| e.to_string())?;
        monotone &= elitist(&out);
        rosen_best = rosen_best.max(out.best.cost());
    }
    let med = common::median(sphere_best);
    ensure(
        med < 1e-2 && rosen_best < 1.0 && monotone,
        format!("sphere median {med:.2e}, worst Rosenbrock best {rosen_best:.2e}, elitism {monotone}"),
    )
}

fn gain_tuning() -> Check {
    let scenario = TuningScenario::default();
    let objective = GainObjective { plant: Plant::reference(ArmParams::default()).unwrap(), scenario: scenario.clone(), base: reference_gains() };
    let cfg = default_tuning_config(0);
    let out = optimize(&objective, &cfg).map_err(|e| e.to_string())?;
    let tuned = objective.report(&out.best.position, cfg.seed);
    let reference = control_objective(&reference_gains(), &scenario, &objective.plant, cfg.seed);
    let worst_ts = tuned.metrics.iter().flatten().map(|m| m.settling_time).fold(0.0, f64::max);
    let worst_ess = tuned.metrics.iter().flatten().map(|m| m.steady_state_error).fold(0.0, f64::max);
    ensure(
        !tuned.unstable && worst_ts <= 0.1 && worst_ess <= 1e-3 && tuned.cost <= 1.1 * reference.cost,
        format!(
            "gains {:?}, Ts {worst_ts:.3} s, Ess {worst_ess:.1e} rad, cost {:.4} vs {:.4} for the reference gains",
            out.best.position.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            tuned.cost,
            reference.cost
        ),
    )
}

fn relative_fd_error<F, G>(nets: &Networks, net: G, loss: F, analytic: &[f64]) -> f64
where
    F: Fn(&Networks) -> f64,
    G: Fn(&mut Networks) -> &mut Mlp,
{
    let h = 1e-6;
    let mut work = nets.clone();
    let n = net(&mut work).params.len();
    let mut fd = vec![0.0; n];
    for (i, g) in fd.iter_mut().enumerate() {
        let keep = net(&mut work).params[i];
        net(&mut work).params[i] = keep + h;
        let up = loss(&work);
        net(&mut work).params[i] = keep - h;
        let down = loss(&work);
        net(&mut work).params[i] = keep;
        *g = (up - down) / (2.0 * h);
    }
    let diff: f64 = fd.iter().zip(analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-8 {
        f64::INFINITY
    } else {
        diff / norm
    }
}

fn sac_gradients() -> Check {
    let mut worst: [f64; 3] = [0.0; 3];
    for seed in 0..5 {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut nets = Networks::new(3, &[0.1, 0.4], &[4, 4], &mut rng);
        for p in nets.value_target.params.iter_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let rows = 6;
        let mut m = |c: usize, s: f64| DMatrix::from_fn(rows, c, |_, _| rng.random_range(-s..s));
        let batch = Batch {
            s: m(3, 1.0),
            a: DMatrix::from_fn(rows, 2, |_, j| if j == 0 { 0.05 } else { -0.2 }) + m(2, 0.04),
            r: (0..rows).map(|i| (i as f64).cos()).collect(),
            s_next: m(3, 1.0),
            done: (0..rows).map(|i| i % 4 == 0).collect(),
        };
        let eps = sac::sample_noise(rows, 2, &mut rng);
        let alpha = 0.2;

        let (_, g) = value_loss(&nets, &batch.s, &eps, alpha);
        worst[0] = worst[0].max(relative_fd_error(&nets, |n| &mut n.value, |n| value_loss(n, &batch.s, &eps, alpha).0, &g));
        let (_, g1, g2) = q_loss(&nets, &batch, 0.995);
        worst[1] = worst[1].max(relative_fd_error(&nets, |n| &mut n.q1, |n| q_loss(n, &batch, 0.995).0, &g1));
        worst[1] = worst[1].max(relative_fd_error(&nets, |n| &mut n.q2, |n| q_loss(n, &batch, 0.995).0, &g2));
        let (_, g) = policy_loss(&nets, &batch.s, &eps, alpha);
        worst[2] = worst[2].max(relative_fd_error(&nets, |n| &mut n.policy, |n| policy_loss(n, &batch.s, &eps, alpha).0, &g));
    }
    ensure(
        worst.iter().all(|e| *e < 1e-4),
        format!("relative error value {:.1e}, critics {:.1e}, policy {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn reward_table() -> Check {
    let task = TaskSpec::default();
    let none = Events::default();
    let thr = task.threshold;
    let cases = [
        ("reach", reward(0.5, 0.01, &Events { reached: true, ..none }, &task), 200.0),
        ("boundary", reward(0.5, 0.4, &Events { boundary: true, ..none }, &task), -50.0),
        ("collision", reward(0.5, 0.4, &Events { collision: true, ..none }, &task), -100.0),
        ("shaping at threshold", reward(0.5, thr, &none, &task), 0.0),
        ("worsening at threshold", reward(thr / 2.0, thr, &none, &task), -1.0),
        ("worsening", reward(0.3, 0.3 + 1e-9, &none, &task), -(1.0 + 0.3 + 1e-9 - thr).log10() - 1.0),
        ("improving", reward(0.3, 0.25, &none, &task), -(1.0 + 0.25 - thr).log10()),
    ];
    let bad: Vec<String> =
        cases.iter().filter(|c| c.1 != c.2).map(|c| format!("{}: got {} expected {}", c.0, c.1, c.2)).collect();
    ensure(bad.is_empty(), if bad.is_empty() { format!("{} reward cases exact", cases.len()) } else { bad.join("; ") })
}

fn held_out_success(env: &ReachEnv, agent: &SacAgent) -> usize {
    let mut eval_env = env.clone();
    let mut rng = SimRng::seed_from_u64(0x5eed_0ff5e7);
    (0..50).filter(|_| evaluate_episode(&mut eval_env, agent, &mut rng, true).map(|l| l.success).unwrap_or(false)).count()
}

fn desk_scale_learning() -> Check {
    let task = TaskSpec::default();
    let mut env = ReachEnv::new(Plant::reference(ArmParams::default()).unwrap(), reference_gains(), task).map_err(|e| e.to_string())?;
    let config = SacConfig { batch_size: 64, hidden: vec![64, 64], seed: 0, ..SacConfig::default() };
    let mut state = TrainState::for_env(&env, config).map_err(|e| e.to_string())?;
    let mut best = (0, 0);
    for episode in 1..=2000 {
        train_episode(&mut env, &mut state).map_err(|e| e.to_string())?;
        if episode % 50 == 0 {
            let ok = held_out_success(&env, &state.agent);
            eprintln!("  episode {episode}: {ok}/50 held-out targets reached");
            if ok > best.0 {
                best = (ok, episode);
            }
            if ok >= 35 {
                return Ok(format!("{ok}/50 held-out targets reached after {episode} episodes"));
            }
        }
    }
    Err(format!("best {}/50 held-out targets (episode {}) within 2000 episodes", best.0, best.1))
}

fn obstacle_preset_end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    let mut outcomes = Vec::new();
    for (k, presets) in [true, false].into_iter().enumerate() {
        cfg.run.preset_targets = presets;
        cfg.run.episodes = if presets { 4 } else { 16 };
        outcomes.extend(cmd_run(&cfg, &dir.path().join(k.to_string())).map_err(|e| e.to_string())?);
    }
    let reached: Vec<_> = outcomes.iter().filter(|o| o.row.reached).collect();
    let bad = reached
        .iter()
        .filter(|o| !(o.row.target_error_cm < 4.0) || o.row.collision_ticks > 0 || o.reason != DoneReason::Reached)
        .count();
    let collisions = outcomes.iter().filter(|o| o.reason == DoneReason::Collision).count();

    let mut target = vec![1.0, -2.0, 3.0];
    soft_update(&mut target, &[5.0, 6.0, -1.0], 0.25);
    let soft_exact = target == [2.0, 0.0, 2.0];
    let mut rng = SimRng::seed_from_u64(1);
    let mut agent = SacAgent::new(3, &[0.1, 0.4], SacConfig { batch_size: 4, hidden: vec![8, 8], ..SacConfig::default() }, &mut rng);
    let before = agent.nets.value_target.params.clone();
    let batch = Batch {
        s: DMatrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.1),
        a: DMatrix::from_fn(4, 2, |i, j| if j == 0 { 0.01 * i as f64 } else { -0.1 }),
        r: vec![1.0, -1.0, 0.5, 0.0],
        s_next: DMatrix::from_fn(4, 3, |i, j| (i * j) as f64 * 0.1),
        done: vec![false, true, false, false],
    };
    agent.update(&batch, &mut rng);
    let tau = agent.config.tau_smooth;
    let target_exact = agent
        .nets
        .value_target
        .params
        .iter()
        .zip(&agent.nets.value.params)
        .zip(&before)
        .all(|((t, v), b)| *t == tau * v + (1.0 - tau) * b);

    let mut replay = ReplayBuffer::new(3);
    for k in 0..5 {
        replay.push(Transition { s: vec![k as f64], a: vec![0.0, 0.0], r: k as f64, s_next: vec![k as f64 + 1.0], done: false });
    }
    let fifo = replay.iter().map(|t| t.r).collect::<Vec<_>>() == [2.0, 3.0, 4.0];

    ensure(
        !reached.is_empty() && bad == 0 && soft_exact && target_exact && fifo,
        format!(
            "{}/{} episodes reached ({} with error >= 4 cm or a collision), {} collision terminations; soft update exact {}, target net exact {}, replay FIFO {}",
            reached.len(),
            outcomes.len(),
            bad,
            collisions,
            soft_exact && target_exact,
            target_exact,
            fifo
        ),
    )
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    slow: bool,
    run: fn() -> Check,
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_slow = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "controller speed", budget: secs(1), slow: false, run: controller_speed },
        Criterion { id: 2, name: "exponential decay", budget: secs(1), slow: false, run: exponential_decay },
        Criterion { id: 3, name: "adaptive estimate stays non-negative", budget: secs(10), slow: false, run: adaptive_estimate_nonnegative },
        Criterion { id: 4, name: "dynamics correctness", budget: secs(30), slow: false, run: dynamics_correctness },
        Criterion { id: 5, name: "cuckoo search benchmarks", budget: secs(60), slow: false, run: cso_benchmarks },
        Criterion { id: 6, name: "gain tuning", budget: secs(600), slow: false, run: gain_tuning },
        Criterion { id: 7, name: "SAC gradient fidelity", budget: secs(60), slow: false, run: sac_gradients },
        Criterion { id: 8, name: "reward table", budget: secs(1), slow: false, run: reward_table },
        Criterion { id: 9, name: "desk-scale learning", budget: secs(3600), slow: true, run: desk_scale_learning },
        Criterion { id: 10, name: "obstacle preset end to end", budget: secs(300), slow: false, run: obstacle_preset_end_to_end },
    ];
    let mut failed = 0;
    for c in &criteria {
        if !only.is_empty() && !only.contains(&c.id) {
            continue;
        }
        if c.slow && !include_slow {
            println!("criterion {:>2} {}: SKIPPED (slow; pass --include-ignored to run)", c.id, c.name);
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let (status, detail) = match result {
            Ok(d) if elapsed <= c.budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} {}: {status} ({detail}) [{:.2} s]", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
