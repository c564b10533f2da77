//! Subsystem-based adaptive joint-torque controller and a PID baseline.
//!
//! The controller splits the arm into a position subsystem driven by the
//! virtual control `tau0 = -a0/2 * Y1` and a velocity subsystem on
//! `Y2 = e2 - tau0`. The torque is
//!
//! ```text
//! tau = -1/2 M (a1 + b1 rho) Y2 - M Y1
//! rho' = -c1 r1 rho + 1/2 b1 c1 |Y2|^2
//! ```
//!
//! with `rho` a scalar adaptive estimate that stays non-negative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{mass_matrix, ArmParams, JointState};
use crate::error::{check_len, Error, Result};

/// Symmetric torque clamp [N m] used by the reaching task.
pub const DEFAULT_TORQUE_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub r1: f64,
    #[serde(default)]
    pub rho0: f64,
    /// Symmetric per-joint torque clamp [N m]; `None` (the default) disables it.
    #[serde(default)]
    pub torque_limit: Option<f64>,
    /// Factor applied to the inertia matrix the controller uses, for
    /// model-mismatch studies. 1.0 means the exact plant inertia.
    #[serde(default = "default_inertia_scale")]
    pub inertia_scale: f64,
}

fn default_inertia_scale() -> f64 {
    1.0
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::reference_gains()
    }
}

impl ControllerConfig {
    /// Number of tunable gains.
    pub const GAIN_COUNT: usize = 5;

    /// Gains `a0 = 668, a1 = 552, b1 = 1.8, c1 = 0.001, r1 = 0.69` found by
    /// cuckoo search on the reference arm.
    pub fn reference_gains() -> Self {
        Self::from_gains(&[668.0, 552.0, 1.8, 0.001, 0.69])
    }

    /// Build from `[a0, a1, b1, c1, r1]` with `rho0 = 0` and default extras.
    pub fn from_gains(g: &[f64]) -> Self {
        assert_eq!(g.len(), Self::GAIN_COUNT, "expected [a0, a1, b1, c1, r1]");
        Self {
            a0: g[0],
            a1: g[1],
            b1: g[2],
            c1: g[3],
            r1: g[4],
            rho0: 0.0,
            torque_limit: None,
            inertia_scale: 1.0,
        }
    }

    pub fn gains(&self) -> [f64; 5] {
        [self.a0, self.a1, self.b1, self.c1, self.r1]
    }

    /// Replace the five gains, keeping `rho0` and the extras.
    pub fn with_gains(mut self, g: &[f64]) -> Self {
        let fresh = Self::from_gains(g);
        self.a0 = fresh.a0;
        self.a1 = fresh.a1;
        self.b1 = fresh.b1;
        self.c1 = fresh.c1;
        self.r1 = fresh.r1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains().iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidParameter(format!("controller gains must be positive: {:?}", self.gains())));
        }
        if !(self.rho0 >= 0.0 && self.rho0.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho0 must be >= 0, got {}", self.rho0)));
        }
        if let Some(limit) = self.torque_limit {
            if !(limit > 0.0) {
                return Err(Error::InvalidParameter(format!("torque limit must be positive, got {limit}")));
            }
        }
        if !(self.inertia_scale > 0.0 && self.inertia_scale.is_finite()) {
            return Err(Error::InvalidParameter("inertia_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub rho_hat: f64,
}

impl AdaptiveState {
    pub fn new(cfg: &ControllerConfig) -> Self {
        Self { rho_hat: cfg.rho0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingErrors {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    pub tau0: DVector<f64>,
}

/// `e1 = x1 - x1d`, `e2 = x2 - x2d`.
pub fn compute_errors(
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    x1d: &DVector<f64>,
    x2d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x1.len();
    check_len(n, x2.len())?;
    check_len(n, x1d.len())?;
    check_len(n, x2d.len())?;
    Ok((x1 - x1d, x2 - x2d))
}

pub fn transform(e1: DVector<f64>, e2: DVector<f64>, a0: f64) -> TrackingErrors {
    let tau0 = &e1 * (-0.5 * a0);
    let y2 = &e2 - &tau0;
    TrackingErrors { y1: e1.clone(), e1, e2, y2, tau0 }
}

/// Explicit Euler step of the adaptive law, clamped at zero.
pub fn adaptive_update(rho_hat: f64, y2: &DVector<f64>, cfg: &ControllerConfig, dt: f64) -> f64 {
    let rate = -cfg.c1 * cfg.r1 * rho_hat + 0.5 * cfg.b1 * cfg.c1 * y2.norm_squared();
    (rho_hat + dt * rate).max(0.0)
}

/// `tau = -1/2 M (a1 + b1 rho) Y2 - M Y1`, unclamped.
pub fn torque(
    m: &DMatrix<f64>,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    rho_hat: f64,
    cfg: &ControllerConfig,
) -> DVector<f64> {
    m * (y2 * (-0.5 * (cfg.a1 + cfg.b1 * rho_hat)) - y1)
}

fn saturate(mut tau: DVector<f64>, limit: Option<f64>) -> DVector<f64> {
    if let Some(limit) = limit {
        tau.apply(|v| *v = v.clamp(-limit, limit));
    }
    tau
}

/// One controller tick: errors, transformation, adaptive update, then torque
/// (using the updated estimate). The desired acceleration is taken as zero
/// within the tick.
pub fn control_step(
    model: &ArmParams,
    state: &JointState,
    x1d: &DVector<f64>,
    x2d: &DVector<f64>,
    adaptive: AdaptiveState,
    cfg: &ControllerConfig,
    dt: f64,
) -> Result<(DVector<f64>, AdaptiveState)> {
    check_len(model.dof(), state.dof())?;
    let (e1, e2) = compute_errors(&state.x1, &state.x2, x1d, x2d)?;
    let errors = transform(e1, e2, cfg.a0);
    let rho_hat = adaptive_update(adaptive.rho_hat, &errors.y2, cfg, dt);
    let m = mass_matrix(&state.x1, model) * cfg.inertia_scale;
    let tau = saturate(torque(&m, &errors.y1, &errors.y2, rho_hat, cfg), cfg.torque_limit);
    Ok((tau, AdaptiveState { rho_hat }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on each joint's error integral [rad s].
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
    #[serde(default)]
    pub torque_limit: Option<f64>,
}

fn default_integral_limit() -> f64 {
    0.5
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 2000.0, ki: 4000.0, kd: 80.0, integral_limit: 0.5, torque_limit: None }
    }
}

/// Per-joint PID on the position error, `tau = -(kp e1 + ki int(e1) + kd e2)`.
/// `integral` is updated in place and clamped to the anti-windup bound.
pub fn pid_step(
    state: &JointState,
    x1d: &DVector<f64>,
    x2d: &DVector<f64>,
    gains: &PidGains,
    integral: &mut DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let (e1, e2) = compute_errors(&state.x1, &state.x2, x1d, x2d)?;
    check_len(e1.len(), integral.len())?;
    let limit = gains.integral_limit;
    for (acc, e) in integral.iter_mut().zip(e1.iter()) {
        *acc = (*acc + e * dt).clamp(-limit, limit);
    }
    let tau = -(e1 * gains.kp + &*integral * gains.ki + e2 * gains.kd);
    Ok(saturate(tau, gains.torque_limit))
}

/// A stateful joint-torque law tracking `(x1d, x2d)`.
pub trait JointController {
    fn reset(&mut self);

    fn command(
        &mut self,
        model: &ArmParams,
        state: &JointState,
        x1d: &DVector<f64>,
        x2d: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveController {
    pub config: ControllerConfig,
    pub adaptive: AdaptiveState,
}

impl AdaptiveController {
    pub fn new(config: ControllerConfig) -> Self {
        Self { adaptive: AdaptiveState::new(&config), config }
    }
}

impl JointController for AdaptiveController {
    fn reset(&mut self) {
        self.adaptive = AdaptiveState::new(&self.config);
    }

    fn command(
        &mut self,
        model: &ArmParams,
        state: &JointState,
        x1d: &DVector<f64>,
        x2d: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>> {
        let (tau, next) = control_step(model, state, x1d, x2d, self.adaptive, &self.config, dt)?;
        self.adaptive = next;
        Ok(tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub integral: DVector<f64>,
}

impl PidController {
    pub fn new(gains: PidGains, dof: usize) -> Self {
        Self { gains, integral: DVector::zeros(dof) }
    }
}

impl JointController for PidController {
    fn reset(&mut self) {
        self.integral.fill(0.0);
    }

    fn command(
        &mut self,
        _model: &ArmParams,
        state: &JointState,
        x1d: &DVector<f64>,
        x2d: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>> {
        pid_step(state, x1d, x2d, &self.gains, &mut self.integral, dt)
    }
}
