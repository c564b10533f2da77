//! Closed-loop rollouts of a joint controller on the plant, and time-domain
//! step-response features.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::JointController;
use crate::dynamics::{JointState, Plant};
use crate::error::{check_len, Error, Result};
use crate::SimRng;

/// Controller period [s] (1 kHz).
pub const CONTROL_DT: f64 = 1e-3;

/// A constant set-point offset from an initial rest pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepReference {
    /// Rest pose at `t = 0` [rad].
    pub initial: Vec<f64>,
    /// Per-joint step amplitude [rad].
    pub amplitude: Vec<f64>,
    /// Simulated horizon [s].
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    CONTROL_DT
}

impl StepReference {
    pub fn uniform(initial: &[f64], amplitude: f64, duration: f64) -> Self {
        Self { initial: initial.to_vec(), amplitude: vec![amplitude; initial.len()], duration, dt: CONTROL_DT }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_len(self.initial.len(), self.amplitude.len())?;
        if !(self.duration > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidParameter("step reference needs duration > 0 and dt > 0".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> DVector<f64> {
        DVector::from_iterator(self.initial.len(), self.initial.iter().zip(&self.amplitude).map(|(a, b)| a + b))
    }
}

/// Sampled closed-loop response; sample `k` is taken at `t[k]` before the
/// torque of tick `k` is applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x1: Vec<DVector<f64>>,
    pub x1d: Vec<DVector<f64>>,
    pub x2: Vec<DVector<f64>>,
    pub x2d: Vec<DVector<f64>>,
    pub tau: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Position error of joint `j` over time.
    pub fn position_error(&self, j: usize) -> Vec<f64> {
        self.x1.iter().zip(&self.x1d).map(|(x, d)| x[j] - d[j]).collect()
    }

    /// `|(e1, e2)|` over time.
    pub fn error_norm(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let e1 = &self.x1[k] - &self.x1d[k];
                let e2 = &self.x2[k] - &self.x2d[k];
                (e1.norm_squared() + e2.norm_squared()).sqrt()
            })
            .collect()
    }

    pub fn max_abs_torque(&self) -> f64 {
        self.tau.iter().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Track a constant set-point from rest. On blow-up the error is returned.
pub fn simulate_step(
    plant: &Plant,
    controller: &mut dyn JointController,
    reference: &StepReference,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    reference.validate()?;
    check_len(plant.dof(), reference.initial.len())?;
    controller.reset();
    let x1d = reference.target();
    let x2d = DVector::zeros(plant.dof());
    let mut state = JointState::at_rest(&reference.initial);
    let steps = reference.steps();
    let mut traj = Trajectory::default();
    for _ in 0..steps {
        let tau = controller.command(&plant.params, &state, &x1d, &x2d, reference.dt)?;
        traj.t.push(state.t);
        traj.x1.push(state.x1.clone());
        traj.x2.push(state.x2.clone());
        traj.x1d.push(x1d.clone());
        traj.x2d.push(x2d.clone());
        traj.tau.push(tau.clone());
        state = plant.step(&state, &tau, reference.dt, rng)?;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 10 % to 90 % rise time [s]; the horizon when 90 % is never reached.
    pub rise_time: f64,
    /// Time after which the response stays within the band [s]; the horizon
    /// when it never settles.
    pub settling_time: f64,
    /// Peak overshoot as a fraction of the amplitude.
    pub overshoot: f64,
    /// Mean absolute error over the final 10 % of the horizon [rad].
    pub steady_state_error: f64,
    pub settled: bool,
}

/// Settling band as a fraction of the step amplitude.
pub const SETTLING_BAND: f64 = 0.02;

/// Step-response features of `response` (displacement from the initial
/// value) towards `amplitude`. `None` for a zero-amplitude step, where the
/// features are undefined.
pub fn step_metrics(t: &[f64], response: &[f64], amplitude: f64, horizon: f64) -> Option<StepMetrics> {
    assert_eq!(t.len(), response.len());
    if amplitude == 0.0 || response.is_empty() {
        return None;
    }
    let sign = amplitude.signum();
    let a = amplitude.abs();
    let normalized: Vec<f64> = response.iter().map(|y| sign * y / a).collect();

    let first_at = |level: f64| normalized.iter().position(|y| *y >= level);
    let rise_time = match (first_at(0.1), first_at(0.9)) {
        (Some(lo), Some(hi)) => t[hi] - t[lo],
        _ => horizon,
    };

    let last_outside = normalized.iter().rposition(|y| (y - 1.0).abs() > SETTLING_BAND);
    let (settling_time, settled) = match last_outside {
        None => (t[0], true),
        Some(k) if k + 1 < t.len() => (t[k + 1], true),
        Some(_) => (horizon, false),
    };

    let peak = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let overshoot = (peak - 1.0).max(0.0);

    let tail = ((response.len() as f64) * 0.1).ceil().max(1.0) as usize;
    let steady_state_error =
        response[response.len() - tail..].iter().map(|y| (amplitude - y).abs()).sum::<f64>() / tail as f64;

    Some(StepMetrics { rise_time, settling_time, overshoot, steady_state_error, settled })
}

/// Per-joint step metrics of a rollout produced by [`simulate_step`].
pub fn trajectory_metrics(traj: &Trajectory, reference: &StepReference) -> Vec<Option<StepMetrics>> {
    (0..reference.initial.len())
        .map(|j| {
            let response: Vec<f64> = traj.x1.iter().map(|x| x[j] - reference.initial[j]).collect();
            step_metrics(&traj.t, &response, reference.amplitude[j], reference.duration)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `t`.
pub fn log_slope(t: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    cov / var
}

/// Exponential decay summary of an error-norm history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Fitted slope of `ln |e|` over the decay window [1/s].
    pub rate: f64,
    /// Residual level: maximum of `|e|` over the final 10 % of the horizon.
    pub floor: f64,
    pub window: (f64, f64),
}

/// Fit `|e(t)| ~ exp(rate t)` between the peak of `|e|` and the first time it
/// falls to `floor_margin` times the residual floor (or 1e-12, if larger).
pub fn fit_decay(t: &[f64], err: &[f64], floor_margin: f64) -> DecayFit {
    let tail = ((err.len() as f64) * 0.1).ceil().max(1.0) as usize;
    let floor = err[err.len() - tail..].iter().cloned().fold(0.0, f64::max);
    let peak = err
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, e)| if *e > best.1 { (k, *e) } else { best });
    let threshold = (floor * floor_margin).max(1e-12);
    let end = (peak.0..err.len()).find(|&k| err[k] <= threshold).unwrap_or(err.len() - 1).max(peak.0 + 2);
    let end = end.min(err.len() - 1);
    let rate = log_slope(&t[peak.0..=end], &err[peak.0..=end]);
    DecayFit { rate, floor, window: (t[peak.0], t[end]) }
}
