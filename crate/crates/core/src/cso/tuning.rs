//! Controller-gain tuning objective: closed-loop step response of the
//! adaptive controller on the uncertain plant, scored by weighted rise time,
//! settling time, overshoot and steady-state error.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{CsoConfig, Fitness, InitStrategy, Objective};
use crate::control::{AdaptiveController, ControllerConfig};
use crate::dynamics::Plant;
use crate::error::{Error, Result};
use crate::sim::{simulate_step, trajectory_metrics, StepMetrics, StepReference};
use crate::SimRng;

/// Cost assigned to gains whose rollout blows up or diverges.
pub const INSTABILITY_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    pub w_tr: f64,
    pub w_ts: f64,
    pub w_mp: f64,
    pub w_ess: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self { w_tr: 1.0, w_ts: 1.0, w_mp: 1.0, w_ess: 10.0 }
    }
}

impl MetricWeights {
    pub fn scaled(&self, k: f64) -> Self {
        Self { w_tr: self.w_tr * k, w_ts: self.w_ts * k, w_mp: self.w_mp * k, w_ess: self.w_ess * k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningScenario {
    #[serde(default = "default_reference")]
    pub reference: StepReference,
    #[serde(default)]
    pub weights: MetricWeights,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// A rollout whose position error ever exceeds this magnitude [rad] is
    /// scored with the penalty.
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: f64,
    /// Seed of the load-disturbance stream. `None` uses the optimiser's
    /// per-evaluation sub-seed; a fixed seed gives every candidate the same
    /// disturbance realisation.
    #[serde(default = "default_noise_seed")]
    pub noise_seed: Option<u64>,
}

fn default_reference() -> StepReference {
    StepReference::uniform(&[0.0, 0.0], 0.1, 0.5)
}

fn default_penalty() -> f64 {
    INSTABILITY_PENALTY
}

fn default_divergence_limit() -> f64 {
    1.0
}

fn default_noise_seed() -> Option<u64> {
    Some(0)
}

impl Default for TuningScenario {
    /// 0.1 rad step on both joints from the horizontal pose, 0.5 s horizon.
    fn default() -> Self {
        Self {
            reference: default_reference(),
            weights: MetricWeights::default(),
            penalty: default_penalty(),
            divergence_limit: default_divergence_limit(),
            noise_seed: default_noise_seed(),
        }
    }
}

impl TuningScenario {
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        let w = &self.weights;
        if [w.w_tr, w.w_ts, w.w_mp, w.w_ess].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("metric weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one tuning rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub cost: f64,
    pub metrics: Vec<Option<StepMetrics>>,
    pub unstable: bool,
}

impl ObjectiveReport {
    pub fn total_steady_state_error(&self) -> f64 {
        self.metrics.iter().flatten().map(|m| m.steady_state_error).sum()
    }

    pub fn fitness(&self) -> Fitness {
        let tie_break = if self.unstable { f64::INFINITY } else { self.total_steady_state_error() };
        Fitness { cost: self.cost, tie_break }
    }
}

/// Weighted sum of the per-joint features; zero-amplitude joints add nothing.
pub fn weighted_cost(metrics: &[Option<StepMetrics>], w: &MetricWeights) -> f64 {
    metrics
        .iter()
        .flatten()
        .map(|m| w.w_tr * m.rise_time + w.w_ts * m.settling_time + w.w_mp * m.overshoot + w.w_ess * m.steady_state_error)
        .sum()
}

/// Simulate `controller` on `plant` for the scenario and score the response.
pub fn control_objective(
    controller: &ControllerConfig,
    scenario: &TuningScenario,
    plant: &Plant,
    noise_seed: u64,
) -> ObjectiveReport {
    let unstable = || ObjectiveReport { cost: scenario.penalty, metrics: Vec::new(), unstable: true };
    if controller.validate().is_err() {
        return unstable();
    }
    let mut rng = SimRng::seed_from_u64(scenario.noise_seed.unwrap_or(noise_seed));
    let mut ctl = AdaptiveController::new(*controller);
    let traj = match simulate_step(plant, &mut ctl, &scenario.reference, &mut rng) {
        Ok(t) => t,
        Err(_) => return unstable(),
    };
    let worst = traj
        .x1
        .iter()
        .zip(&traj.x1d)
        .map(|(x, d)| (x - d).amax())
        .fold(0.0, f64::max);
    if !(worst <= scenario.divergence_limit) {
        return unstable();
    }
    let metrics = trajectory_metrics(&traj, &scenario.reference);
    ObjectiveReport { cost: weighted_cost(&metrics, &scenario.weights), metrics, unstable: false }
}

/// The tuning objective over `[a0, a1, b1, c1, r1]`; other controller fields
/// are taken from `base`.
#[derive(Debug, Clone)]
pub struct GainObjective {
    pub plant: Plant,
    pub scenario: TuningScenario,
    pub base: ControllerConfig,
}

impl GainObjective {
    pub fn report(&self, gains: &[f64], seed: u64) -> ObjectiveReport {
        control_objective(&self.base.with_gains(gains), &self.scenario, &self.plant, seed)
    }
}

impl Objective for GainObjective {
    fn evaluate(&self, x: &[f64], seed: u64) -> Fitness {
        self.report(x, seed).fitness()
    }
}

/// Search box for `[a0, a1, b1, c1, r1]`.
pub fn default_gain_bounds() -> Vec<(f64, f64)> {
    vec![(1.0, 1000.0), (1.0, 1000.0), (1e-3, 10.0), (1e-6, 1.0), (1e-3, 10.0)]
}

/// Population 15, 200 iterations, 25 % abandonment, beta = 1.5, log-uniform
/// initialisation over [`default_gain_bounds`].
pub fn default_tuning_config(seed: u64) -> CsoConfig {
    CsoConfig { init: InitStrategy::LogUniform, ..CsoConfig::new(default_gain_bounds(), seed) }
}
