//! Training loop: environment steps interleaved with one gradient step each,
//! checkpointing and per-episode logging.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{Losses, ReplayBuffer, SacAgent, SacConfig, Transition};
use crate::error::{Error, Result};
use crate::SimRng;

/// Result of one environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFeedback {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Episode ended in a terminal state; the value target does not bootstrap.
    pub terminal: bool,
    /// Episode cut by a time limit; the value target still bootstraps.
    pub truncated: bool,
    pub success: bool,
    /// Task-specific score reported in the log (tip error for reaching).
    pub tip_error: f64,
}

/// An episodic task driven by bounded continuous actions.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    /// Per-dimension action bound.
    fn action_scale(&self) -> Vec<f64>;
    fn reset(&mut self, rng: &mut SimRng) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64], rng: &mut SimRng) -> Result<EnvFeedback>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
    pub tip_error_final: f64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Persisted learner state. The replay pool is not saved; a resumed run
/// refills it from fresh experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub agent: SacAgent,
    pub rng: SimRng,
    pub episode: usize,
    pub total_steps: usize,
    pub random_steps: usize,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub agent: SacAgent,
    pub replay: ReplayBuffer,
    pub rng: SimRng,
    /// Episodes completed so far.
    pub episode: usize,
    pub total_steps: usize,
    /// Steps driven by uniform random actions.
    pub random_steps: usize,
    pub last_losses: Option<Losses>,
}

impl TrainState {
    pub fn new(obs_dim: usize, action_scale: &[f64], config: SacConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::seed_from_u64(config.seed);
        let replay = ReplayBuffer::new(config.replay_capacity);
        let agent = SacAgent::new(obs_dim, action_scale, config, &mut rng);
        Ok(Self { agent, replay, rng, episode: 0, total_steps: 0, random_steps: 0, last_losses: None })
    }

    pub fn for_env<E: Environment>(env: &E, config: SacConfig) -> Result<Self> {
        Self::new(env.observation_dim(), &env.action_scale(), config)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            agent: self.agent.clone(),
            rng: self.rng.clone(),
            episode: self.episode,
            total_steps: self.total_steps,
            random_steps: self.random_steps,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        let replay = ReplayBuffer::new(c.agent.config.replay_capacity);
        Ok(Self {
            agent: c.agent,
            replay,
            rng: c.rng,
            episode: c.episode,
            total_steps: c.total_steps,
            random_steps: c.random_steps,
            last_losses: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_checkpoint(serde_json::from_reader(f)?)
    }
}

/// Run one training episode.
pub fn train_episode<E: Environment>(env: &mut E, state: &mut TrainState) -> Result<EpisodeLog> {
    let scale = env.action_scale();
    let cfg = state.agent.config.clone();
    let mut obs = env.reset(&mut state.rng)?;
    let (mut ret, mut steps, mut last) = (0.0, 0, None);
    while steps < cfg.max_episode_steps {
        let random = state.total_steps < cfg.warmup_steps;
        let action: Vec<f64> = if random {
            state.random_steps += 1;
            scale.iter().map(|s| state.rng.random_range(-s..=*s)).collect()
        } else {
            state.agent.act(&obs, &mut state.rng, false)
        };
        let fb = env.step(&action, &mut state.rng)?;
        state.total_steps += 1;
        steps += 1;
        ret += fb.reward;
        state.replay.push(Transition {
            s: obs,
            a: action,
            r: fb.reward,
            s_next: fb.observation.clone(),
            done: fb.terminal,
        });
        if !random {
            let batch = state.replay.sample(cfg.batch_size, &mut state.rng).expect("replay holds the new transition");
            let losses = state.agent.update(&batch, &mut state.rng);
            state.last_losses = Some(losses);
            if !losses.is_finite() || !state.agent.nets.is_finite() {
                return Err(Error::DivergenceDetected(format!(
                    "non-finite loss at step {} (value {}, q {}, policy {})",
                    state.total_steps, losses.value, losses.q, losses.policy
                )));
            }
        }
        obs = fb.observation.clone();
        let end = fb.terminal || fb.truncated;
        last = Some(fb);
        if end {
            break;
        }
    }
    state.episode += 1;
    let last = last.expect("episodes take at least one step");
    Ok(EpisodeLog {
        episode: state.episode,
        steps,
        episode_return: ret,
        success: last.success,
        tip_error_final: last.tip_error,
    })
}

/// Train for `episodes` more episodes, reporting each through `on_episode`.
/// On divergence the state is left as it was at the failing step so the
/// caller can checkpoint it.
pub fn train<E, F>(env: &mut E, state: &mut TrainState, episodes: usize, mut on_episode: F) -> Result<Vec<EpisodeLog>>
where
    E: Environment,
    F: FnMut(&EpisodeLog, &TrainState),
{
    let mut logs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let log = train_episode(env, state)?;
        on_episode(&log, state);
        logs.push(log);
    }
    Ok(logs)
}

/// Roll out the policy without learning. Returns the episode log.
pub fn evaluate_episode<E: Environment>(env: &mut E, agent: &SacAgent, rng: &mut SimRng, deterministic: bool) -> Result<EpisodeLog> {
    let mut obs = env.reset(rng)?;
    let (mut ret, mut steps) = (0.0, 0);
    loop {
        let action = agent.act(&obs, rng, deterministic);
        let fb = env.step(&action, rng)?;
        steps += 1;
        ret += fb.reward;
        if fb.terminal || fb.truncated || steps >= agent.config.max_episode_steps {
            return Ok(EpisodeLog { episode: 0, steps, episode_return: ret, success: fb.success, tip_error_final: fb.tip_error });
        }
        obs = fb.observation;
    }
}
