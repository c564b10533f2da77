//! Soft actor-critic with an explicit state-value network and a
//! Polyak-averaged target copy of it.
//!
//! Actions are squashed Gaussians, `a = scale * tanh(mu + sigma * eps)`. The
//! critics see the normalised action `a / scale`. Every loss takes its
//! reparameterisation noise as an argument so the gradients can be checked
//! against finite differences.

pub mod nn;
pub mod replay;
pub mod train;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use nn::{Adam, Mlp};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{evaluate_episode, train, train_episode, Checkpoint, EnvFeedback, Environment, EpisodeLog, TrainState};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps `ln(1 - tanh^2)` finite at saturation.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub batch_size: usize,
    /// Polyak factor of the target value network.
    pub tau_smooth: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Environment steps driven by uniform random actions before the policy
    /// takes over and gradient updates start.
    pub warmup_steps: usize,
    pub max_episode_steps: usize,
    pub episodes: usize,
    /// Entropy temperature.
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            tau_smooth: 0.001,
            gamma: 0.995,
            learning_rate: 1e-3,
            warmup_steps: 1000,
            max_episode_steps: 1000,
            episodes: 20_000,
            alpha: 0.2,
            hidden: vec![64, 64],
            replay_capacity: 1_000_000,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.tau_smooth > 0.0 && self.tau_smooth <= 1.0) {
            return bad("tau_smooth must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.alpha >= 0.0) {
            return bad("learning_rate must be > 0 and alpha >= 0");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.max_episode_steps == 0 {
            return bad("batch_size, replay_capacity and max_episode_steps must be positive");
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// Policy, twin critics, value network and its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    /// Outputs `[mean, log_std]` per action dimension.
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub value: Mlp,
    pub value_target: Mlp,
    /// Per-dimension action bound; actions lie in `[-scale, scale]`.
    pub action_scale: Vec<f64>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl Networks {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_scale: &[f64], hidden: &[usize], rng: &mut R) -> Self {
        let act = action_scale.len();
        let policy = Mlp::new(&layer_sizes(obs_dim, hidden, 2 * act), rng);
        let q1 = Mlp::new(&layer_sizes(obs_dim + act, hidden, 1), rng);
        let q2 = Mlp::new(&layer_sizes(obs_dim + act, hidden, 1), rng);
        let value = Mlp::new(&layer_sizes(obs_dim, hidden, 1), rng);
        let value_target = value.clone();
        Self { policy, q1, q2, value, value_target, action_scale: action_scale.to_vec() }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.action_scale.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.policy, &self.q1, &self.q2, &self.value, &self.value_target]
            .iter()
            .all(|n| n.params.iter().all(|p| p.is_finite()))
    }

    /// `ln |det d a / d y|` for the affine output scaling.
    fn log_scale(&self) -> f64 {
        self.action_scale.iter().map(|s| s.ln()).sum()
    }
}

/// Squashed-Gaussian sample for a batch, with everything the reverse pass
/// needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub mean: DMatrix<f64>,
    pub log_std: DMatrix<f64>,
    /// Mask of log-std entries that were inside the clamp range.
    pub log_std_free: DMatrix<f64>,
    pub eps: DMatrix<f64>,
    /// `tanh(mean + std * eps)`, the normalised action.
    pub squashed: DMatrix<f64>,
    /// `ln pi(a | s)` of the scaled action, one entry per row.
    pub log_prob: Vec<f64>,
}

/// Turn raw policy outputs and noise into a sample and its log-density.
pub fn squash(out: &DMatrix<f64>, eps: &DMatrix<f64>, log_scale: f64) -> PolicySample {
    let (n, d) = (out.nrows(), eps.ncols());
    assert_eq!(out.ncols(), 2 * d);
    assert_eq!(eps.nrows(), n);
    let mean = out.columns(0, d).into_owned();
    let raw = out.columns(d, d);
    let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let log_std_free = raw.map(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
    let squashed = DMatrix::from_fn(n, d, |i, j| (mean[(i, j)] + log_std[(i, j)].exp() * eps[(i, j)]).tanh());
    let log_prob = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let y = squashed[(i, j)];
                    -0.5 * eps[(i, j)].powi(2) - log_std[(i, j)] - HALF_LN_2PI - (1.0 - y * y + SQUASH_EPS).ln()
                })
                .sum::<f64>()
                - log_scale
        })
        .collect();
    PolicySample { mean, log_std, log_std_free, eps: eps.clone(), squashed, log_prob }
}

pub fn sample_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draw a policy sample for a batch of observations with the given noise.
pub fn policy_sample(nets: &Networks, s: &DMatrix<f64>, eps: &DMatrix<f64>) -> PolicySample {
    squash(&nets.policy.predict(s), eps, nets.log_scale())
}

/// Action for one observation, in physical units. Deterministic mode uses
/// zero noise.
pub fn sample_action<R: Rng + ?Sized>(nets: &Networks, s: &[f64], rng: &mut R, deterministic: bool) -> Vec<f64> {
    let d = nets.act_dim();
    let eps = if deterministic { DMatrix::zeros(1, d) } else { sample_noise(1, d, rng) };
    let sample = policy_sample(nets, &DMatrix::from_row_slice(1, s.len(), s), &eps);
    (0..d).map(|j| nets.action_scale[j] * sample.squashed[(0, j)]).collect()
}

fn critic_input(s: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, sd, ad) = (s.nrows(), s.ncols(), y.ncols());
    DMatrix::from_fn(n, sd + ad, |i, j| if j < sd { s[(i, j)] } else { y[(i, j - sd)] })
}

/// Physical actions to the critics' normalised inputs.
pub fn normalize_actions(a: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / scale[j])
}

/// Value loss `mean(0.5 (V(s) - (min Q(s, a~) - alpha ln pi(a~|s)))^2)` and
/// its gradient with respect to the value parameters.
pub fn value_loss(nets: &Networks, s: &DMatrix<f64>, eps: &DMatrix<f64>, alpha: f64) -> (f64, Vec<f64>) {
    let n = s.nrows() as f64;
    let sample = policy_sample(nets, s, eps);
    let xq = critic_input(s, &sample.squashed);
    let (q1, q2) = (nets.q1.predict(&xq), nets.q2.predict(&xq));
    let tape = nets.value.forward(s);
    let v = tape.output();
    let mut loss = 0.0;
    let resid = DMatrix::from_fn(s.nrows(), 1, |i, _| {
        let target = q1[(i, 0)].min(q2[(i, 0)]) - alpha * sample.log_prob[i];
        let d = v[(i, 0)] - target;
        loss += 0.5 * d * d;
        d / n
    });
    let mut grads = vec![0.0; nets.value.n_params()];
    nets.value.backward(&tape, &resid, &mut grads);
    (loss / n, grads)
}

/// Critic loss `mean(0.5 (Q_k(s, a) - r - gamma (1 - done) V_target(s')))^2`
/// summed over both heads, with the gradient of each head.
pub fn q_loss(nets: &Networks, batch: &Batch, gamma: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = batch.len() as f64;
    let v_next = nets.value_target.predict(&batch.s_next);
    let target: Vec<f64> = (0..batch.len())
        .map(|i| batch.r[i] + if batch.done[i] { 0.0 } else { gamma * v_next[(i, 0)] })
        .collect();
    let xq = critic_input(&batch.s, &normalize_actions(&batch.a, &nets.action_scale));
    let mut total = 0.0;
    let mut head = |net: &Mlp| {
        let tape = net.forward(&xq);
        let q = tape.output();
        let resid = DMatrix::from_fn(batch.len(), 1, |i, _| {
            let d = q[(i, 0)] - target[i];
            total += 0.5 * d * d;
            d / n
        });
        let mut g = vec![0.0; net.n_params()];
        net.backward(&tape, &resid, &mut g);
        g
    };
    let g1 = head(&nets.q1);
    let g2 = head(&nets.q2);
    (total / n, g1, g2)
}

/// Policy loss `mean(alpha ln pi(a~|s) - min Q(s, a~))` with
/// `a~ = f(eps; s)`, and its gradient with respect to the policy parameters.
pub fn policy_loss(nets: &Networks, s: &DMatrix<f64>, eps: &DMatrix<f64>, alpha: f64) -> (f64, Vec<f64>) {
    let (rows, d) = (s.nrows(), nets.act_dim());
    let n = rows as f64;
    let ptape = nets.policy.forward(s);
    let sample = squash(ptape.output(), eps, nets.log_scale());
    let xq = critic_input(s, &sample.squashed);
    let t1 = nets.q1.forward(&xq);
    let t2 = nets.q2.forward(&xq);
    let (q1, q2) = (t1.output(), t2.output());

    let mut loss = 0.0;
    let mut pick1 = DMatrix::zeros(rows, 1);
    let mut pick2 = DMatrix::zeros(rows, 1);
    for i in 0..rows {
        let (a, b) = (q1[(i, 0)], q2[(i, 0)]);
        loss += alpha * sample.log_prob[i] - a.min(b);
        if a <= b {
            pick1[(i, 0)] = -1.0 / n;
        } else {
            pick2[(i, 0)] = -1.0 / n;
        }
    }
    // gradient of -min Q with respect to the normalised action
    let sd = s.ncols();
    let mut scratch1 = vec![0.0; nets.q1.n_params()];
    let mut scratch2 = vec![0.0; nets.q2.n_params()];
    let gx = nets.q1.backward(&t1, &pick1, &mut scratch1) + nets.q2.backward(&t2, &pick2, &mut scratch2);

    let mut grad_out = DMatrix::zeros(rows, 2 * d);
    let w = alpha / n;
    for i in 0..rows {
        for j in 0..d {
            let y = sample.squashed[(i, j)];
            let sigma = sample.log_std[(i, j)].exp();
            let g_y = gx[(i, sd + j)] + w * 2.0 * y / (1.0 - y * y + SQUASH_EPS);
            let g_u = g_y * (1.0 - y * y);
            grad_out[(i, j)] = g_u;
            grad_out[(i, d + j)] = (g_u * sigma * sample.eps[(i, j)] - w) * sample.log_std_free[(i, j)];
        }
    }
    let mut grads = vec![0.0; nets.policy.n_params()];
    nets.policy.backward(&ptape, &grad_out, &mut grads);
    (loss / n, grads)
}

/// `target <- tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    assert_eq!(target.len(), source.len());
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub value: f64,
    pub q: f64,
    pub policy: f64,
}

impl Losses {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.q.is_finite() && self.policy.is_finite()
    }
}

/// Networks plus their optimisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub nets: Networks,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_value: Adam,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_scale: &[f64], config: SacConfig, rng: &mut R) -> Self {
        let nets = Networks::new(obs_dim, action_scale, &config.hidden, rng);
        let lr = config.learning_rate;
        Self {
            opt_policy: Adam::new(nets.policy.n_params(), lr),
            opt_q1: Adam::new(nets.q1.n_params(), lr),
            opt_q2: Adam::new(nets.q2.n_params(), lr),
            opt_value: Adam::new(nets.value.n_params(), lr),
            nets,
            config,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R, deterministic: bool) -> Vec<f64> {
        sample_action(&self.nets, s, rng, deterministic)
    }

    /// One gradient step on each network in the order value, critics, policy,
    /// followed by the target update. Parameters are left untouched when any
    /// loss is non-finite.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Losses {
        let (rows, d, alpha) = (batch.len(), self.nets.act_dim(), self.config.alpha);

        let eps = sample_noise(rows, d, rng);
        let (lv, gv) = value_loss(&self.nets, &batch.s, &eps, alpha);
        if !lv.is_finite() {
            return Losses { value: lv, q: f64::NAN, policy: f64::NAN };
        }
        self.opt_value.step(&mut self.nets.value.params, &gv);

        let (lq, g1, g2) = q_loss(&self.nets, batch, self.config.gamma);
        if !lq.is_finite() {
            return Losses { value: lv, q: lq, policy: f64::NAN };
        }
        self.opt_q1.step(&mut self.nets.q1.params, &g1);
        self.opt_q2.step(&mut self.nets.q2.params, &g2);

        let eps = sample_noise(rows, d, rng);
        let (lp, gp) = policy_loss(&self.nets, &batch.s, &eps, alpha);
        if !lp.is_finite() {
            return Losses { value: lv, q: lq, policy: lp };
        }
        self.opt_policy.step(&mut self.nets.policy.params, &gp);

        soft_update(&mut self.nets.value_target.params, &self.nets.value.params, self.config.tau_smooth);
        Losses { value: lv, q: lq, policy: lp }
    }
}
