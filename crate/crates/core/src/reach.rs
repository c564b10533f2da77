//! Goal-reaching task: collision-free target workspace, observations, reward
//! and termination, and the bridge between the policy period and the torque
//! controller rate.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{control_step, AdaptiveState, ControllerConfig, DEFAULT_TORQUE_LIMIT};
use crate::dynamics::{forward_kinematics, joint_positions, ArmParams, JointState, Plant};
use crate::error::{check_len, Error, Result};
use crate::sac::{EnvFeedback, Environment};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self { center: [x, y], radius }
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    /// Distance from the centre to the segment `a`-`b`.
    pub fn segment_distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 {
            (((self.center[0] - a[0]) * dx + (self.center[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.distance([a[0] + s * dx, a[1] + s * dy])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConstants {
    pub reach: f64,
    pub boundary: f64,
    pub collision: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self { reach: 200.0, boundary: 50.0, collision: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub obstacles: Vec<Obstacle>,
    /// Extra margin around each obstacle excluded from the target set [m].
    pub clearance: f64,
    /// Per-joint `[lo, hi]` [rad].
    pub joint_limits: Vec<[f64; 2]>,
    /// Tip-to-target distance that counts as reached [m].
    pub threshold: f64,
    pub rewards: RewardConstants,
    /// Joint angles at the start of every episode [rad].
    pub initial_state: Vec<f64>,
    /// Per-joint bound on the commanded velocity [rad/s].
    pub velocity_bounds: Vec<f64>,
    pub policy_dt: f64,
    pub control_dt: f64,
    pub max_steps: usize,
    /// Samples per joint of the joint-limit grid behind the target set.
    pub grid_resolution: usize,
    /// Also test the link segments against obstacles.
    pub link_collision: bool,
    /// Torque clamp applied when the controller config sets none [N m].
    pub torque_limit: Option<f64>,
}

impl Default for TaskSpec {
    /// Two joints, no obstacles.
    fn default() -> Self {
        Self {
            obstacles: Vec::new(),
            clearance: 0.05,
            joint_limits: vec![[-PI / 4.0, 3.0 * PI / 4.0], [-5.0 * PI / 6.0, 5.0 * PI / 6.0]],
            threshold: 0.04,
            rewards: RewardConstants::default(),
            initial_state: vec![PI / 4.0, PI / 3.0],
            velocity_bounds: vec![0.1, 0.4],
            policy_dt: 0.03,
            control_dt: 1e-3,
            max_steps: 1000,
            grid_resolution: 60,
            link_collision: false,
            torque_limit: Some(DEFAULT_TORQUE_LIMIT),
        }
    }
}

impl TaskSpec {
    /// Five circular obstacles around the default start pose.
    pub fn obstacle_preset() -> Self {
        Self {
            obstacles: vec![
                Obstacle::new(1.05, 0.75, 0.12),
                Obstacle::new(-0.55, 1.25, 0.10),
                Obstacle::new(1.35, -0.35, 0.10),
                Obstacle::new(-0.15, 1.55, 0.08),
                Obstacle::new(-1.10, 0.35, 0.12),
            ],
            ..Self::default()
        }
    }

    /// Four fixed targets inside the obstacle preset's free workspace.
    pub fn preset_targets() -> Vec<[f64; 2]> {
        vec![[-0.95, 0.95], [1.45, 0.35], [0.55, -0.55], [-0.35, 0.45]]
    }

    pub fn dof(&self) -> usize {
        self.initial_state.len()
    }

    /// Controller ticks per policy step.
    pub fn substeps(&self) -> usize {
        (self.policy_dt / self.control_dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        check_len(n, self.joint_limits.len())?;
        check_len(n, self.velocity_bounds.len())?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return bad("obstacle radii must be > 0");
        }
        if !(self.threshold > 0.0) || !(self.clearance >= 0.0) {
            return bad("threshold must be > 0 and clearance >= 0");
        }
        if self.joint_limits.iter().any(|l| !(l[0] < l[1])) {
            return bad("joint limits need lo < hi");
        }
        if self.velocity_bounds.iter().any(|v| !(*v > 0.0)) {
            return bad("velocity bounds must be > 0");
        }
        if !(self.control_dt > 0.0 && self.policy_dt >= self.control_dt) || self.max_steps == 0 {
            return bad("need 0 < control_dt <= policy_dt and max_steps > 0");
        }
        if self.grid_resolution < 2 {
            return bad("grid_resolution must be at least 2");
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        q.iter().zip(&self.joint_limits).all(|(v, l)| *v >= l[0] && *v <= l[1])
    }

    pub fn tip_collides(&self, tip: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| o.distance(tip) < o.radius)
    }

    pub fn arm_collides(&self, params: &ArmParams, q: &DVector<f64>) -> bool {
        let pts = joint_positions(q, params);
        let tip = *pts.last().unwrap();
        if self.tip_collides(tip) {
            return true;
        }
        self.link_collision
            && pts.windows(2).any(|w| self.obstacles.iter().any(|o| o.segment_distance(w[0], w[1]) < o.radius))
    }
}

/// Candidate targets: the tip image of a joint-limit grid, minus points
/// closer than `radius + clearance` to any obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub points: Vec<[f64; 2]>,
    pub removed: usize,
}

fn grid_axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

pub fn build_workspace(params: &ArmParams, task: &TaskSpec, resolution: usize) -> Result<Workspace> {
    if resolution < 2 {
        return Err(Error::InvalidParameter("grid resolution must be at least 2".into()));
    }
    check_len(params.dof(), task.dof())?;
    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for l in &task.joint_limits {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                grid_axis(l[0], l[1], resolution).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    let mut points = Vec::new();
    let mut removed = 0;
    for q in grid {
        let p = forward_kinematics(&DVector::from_vec(q), params);
        let tip = [p.x, p.y];
        if task.obstacles.iter().any(|o| o.distance(tip) < o.radius + task.clearance) {
            removed += 1;
        } else {
            points.push(tip);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyWorkspace);
    }
    Ok(Workspace { points, removed })
}

/// `[p_target(3), p_target - p_tip(3), p_tip(3), q(n)]`, followed by the tip
/// distance to each obstacle centre when the task has obstacles.
pub fn observe(params: &ArmParams, task: &TaskSpec, q: &DVector<f64>, target: [f64; 2]) -> Vec<f64> {
    let p = forward_kinematics(q, params);
    let pt = [target[0], target[1], 0.0];
    let mut obs = Vec::with_capacity(9 + q.len() + task.obstacles.len());
    obs.extend_from_slice(&pt);
    obs.extend([pt[0] - p.x, pt[1] - p.y, pt[2] - p.z]);
    obs.extend([p.x, p.y, p.z]);
    obs.extend(q.iter());
    obs.extend(task.obstacles.iter().map(|o| o.distance([p.x, p.y])));
    obs
}

pub fn observation_dim(task: &TaskSpec) -> usize {
    9 + task.dof() + task.obstacles.len()
}

/// Events detected at the end of a policy step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Events {
    pub reached: bool,
    pub boundary: bool,
    pub collision: bool,
    pub diverged: bool,
    pub timeout: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Running,
    Reached,
    Boundary,
    Collision,
    /// The simulation blew up; scored like a collision.
    Diverged,
    Timeout,
}

impl DoneReason {
    /// Highest-priority event: reached, boundary, collision, divergence,
    /// timeout.
    pub fn from_events(e: &Events) -> Self {
        if e.reached {
            Self::Reached
        } else if e.boundary {
            Self::Boundary
        } else if e.collision {
            Self::Collision
        } else if e.diverged {
            Self::Diverged
        } else if e.timeout {
            Self::Timeout
        } else {
            Self::Running
        }
    }

    pub fn is_done(self) -> bool {
        self != Self::Running
    }

    /// Ends the episode in a terminal state (timeouts only truncate).
    pub fn is_terminal(self) -> bool {
        !matches!(self, Self::Running | Self::Timeout)
    }
}

/// Reward for a policy step. Shaping is `-log10(1 + err - threshold)`, one
/// less when the tip error grew since the previous step.
pub fn reward(prev_error: f64, error: f64, events: &Events, task: &TaskSpec) -> f64 {
    let r = &task.rewards;
    match DoneReason::from_events(events) {
        DoneReason::Reached => r.reach,
        DoneReason::Boundary => -r.boundary,
        DoneReason::Collision | DoneReason::Diverged => -r.collision,
        DoneReason::Timeout | DoneReason::Running => {
            let shaping = -(1.0 + error - task.threshold).log10();
            if error > prev_error {
                shaping - 1.0
            } else {
                shaping
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub reason: DoneReason,
    pub tip_error: f64,
}

/// State at the end of one controller tick, with the torque applied during
/// it and the desired angles it tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub q_desired: Vec<f64>,
    pub tau: Vec<f64>,
    pub tip: [f64; 2],
    pub tip_error: f64,
    /// Policy-step reward, carried by the last tick of each policy step and
    /// zero on the others.
    pub reward: f64,
}

/// Write a trace as CSV: `t, q1.., q1d.., tau1.., tip_x, tip_y, tip_error, reward`.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.q.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("q{j}")));
    header.extend((1..=n).map(|j| format!("q{j}d")));
    header.extend((1..=n).map(|j| format!("tau{j}")));
    header.extend(["tip_x", "tip_y", "tip_error", "reward"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t];
        rec.extend(&r.q);
        rec.extend(&r.q_desired);
        rec.extend(&r.tau);
        rec.extend([r.tip[0], r.tip[1], r.tip_error, r.reward]);
        w.write_record(rec.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// The reaching environment: plant, adaptive controller and task.
#[derive(Debug, Clone)]
pub struct ReachEnv {
    pub plant: Plant,
    pub controller: ControllerConfig,
    pub task: TaskSpec,
    pub workspace: Workspace,
    state: JointState,
    x1d: DVector<f64>,
    adaptive: AdaptiveState,
    target: [f64; 2],
    steps: usize,
    prev_error: f64,
    /// Record a controller-rate trace of the current episode.
    pub record: bool,
    trace: Vec<TraceRow>,
}

impl ReachEnv {
    pub fn new(plant: Plant, mut controller: ControllerConfig, task: TaskSpec) -> Result<Self> {
        task.validate()?;
        controller.validate()?;
        check_len(plant.dof(), task.dof())?;
        if controller.torque_limit.is_none() {
            controller.torque_limit = task.torque_limit;
        }
        let workspace = build_workspace(&plant.params, &task, task.grid_resolution)?;
        let state = JointState::at_rest(&task.initial_state);
        let x1d = state.x1.clone();
        let adaptive = AdaptiveState::new(&controller);
        let mut env = Self {
            plant,
            controller,
            task,
            workspace,
            state,
            x1d,
            adaptive,
            target: [0.0, 0.0],
            steps: 0,
            prev_error: 0.0,
            record: false,
            trace: Vec::new(),
        };
        env.reset_with_target(env.workspace.points[0]);
        Ok(env)
    }

    pub fn params(&self) -> &ArmParams {
        &self.plant.params
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn tip(&self) -> [f64; 2] {
        let p = forward_kinematics(&self.state.x1, self.params());
        [p.x, p.y]
    }

    pub fn tip_error(&self) -> f64 {
        let p = self.tip();
        (self.target[0] - p[0]).hypot(self.target[1] - p[1])
    }

    pub fn observation(&self) -> Vec<f64> {
        observe(self.params(), &self.task, &self.state.x1, self.target)
    }

    /// Start an episode with a target drawn uniformly from the workspace.
    pub fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        let k = rng.random_range(0..self.workspace.points.len());
        self.reset_with_target(self.workspace.points[k])
    }

    /// Start an episode towards a given target.
    pub fn reset_with_target(&mut self, target: [f64; 2]) -> Vec<f64> {
        self.state = JointState::at_rest(&self.task.initial_state);
        self.x1d = self.state.x1.clone();
        self.adaptive = AdaptiveState::new(&self.controller);
        self.target = target;
        self.steps = 0;
        self.prev_error = self.tip_error();
        self.trace.clear();
        self.observation()
    }

    /// Apply a joint-velocity command for one policy period. Commands are
    /// clipped to the velocity bounds.
    pub fn step(&mut self, action: &[f64], rng: &mut SimRng) -> Result<StepResult> {
        check_len(self.task.dof(), action.len())?;
        let x2d = DVector::from_iterator(
            action.len(),
            action.iter().zip(&self.task.velocity_bounds).map(|(a, b)| a.clamp(-b, *b)),
        );
        let dt = self.task.control_dt;
        let mut diverged = false;
        for _ in 0..self.task.substeps() {
            self.x1d += &x2d * dt;
            let (tau, adaptive) =
                control_step(&self.plant.params, &self.state, &self.x1d, &x2d, self.adaptive, &self.controller, dt)?;
            self.adaptive = adaptive;
            match self.plant.step(&self.state, &tau, dt, rng) {
                Ok(s) => self.state = s,
                Err(Error::NumericalBlowup { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            if self.record {
                let tip = self.tip();
                self.trace.push(TraceRow {
                    t: self.state.t,
                    q: self.state.x1.iter().copied().collect(),
                    q_desired: self.x1d.iter().copied().collect(),
                    tau: tau.iter().copied().collect(),
                    tip,
                    tip_error: (self.target[0] - tip[0]).hypot(self.target[1] - tip[1]),
                    reward: 0.0,
                });
            }
        }
        self.steps += 1;
        let error = if diverged { self.prev_error } else { self.tip_error() };
        let events = Events {
            reached: !diverged && error < self.task.threshold,
            boundary: !diverged && !self.task.within_limits(&self.state.x1),
            collision: !diverged && self.task.arm_collides(self.params(), &self.state.x1),
            diverged,
            timeout: self.steps >= self.task.max_steps,
        };
        let r = reward(self.prev_error, error, &events, &self.task);
        if let Some(last) = self.trace.last_mut() {
            last.reward = r;
        }
        self.prev_error = error;
        let reason = DoneReason::from_events(&events);
        Ok(StepResult { observation: self.observation(), reward: r, done: reason.is_done(), reason, tip_error: error })
    }

    /// Jacobian of the planar tip position with respect to the joints.
    pub fn tip_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        tip_jacobian(self.params(), q)
    }
}

pub fn tip_jacobian(params: &ArmParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let mut j = DMatrix::zeros(2, n);
    let mut phi = 0.0;
    let mut angles = Vec::with_capacity(n);
    for k in 0..n {
        phi += q[k];
        angles.push(phi);
    }
    for c in 0..n {
        for (k, link) in params.links.iter().enumerate().skip(c) {
            j[(0, c)] -= link.length * angles[k].sin();
            j[(1, c)] += link.length * angles[k].cos();
        }
    }
    j
}

impl Environment for ReachEnv {
    fn observation_dim(&self) -> usize {
        observation_dim(&self.task)
    }

    fn action_scale(&self) -> Vec<f64> {
        self.task.velocity_bounds.clone()
    }

    fn reset(&mut self, rng: &mut SimRng) -> Result<Vec<f64>> {
        Ok(ReachEnv::reset(self, rng))
    }

    fn step(&mut self, action: &[f64], rng: &mut SimRng) -> Result<EnvFeedback> {
        let r = ReachEnv::step(self, action, rng)?;
        Ok(EnvFeedback {
            observation: r.observation,
            reward: r.reward,
            terminal: r.reason.is_terminal(),
            truncated: r.reason == DoneReason::Timeout,
            success: r.reason == DoneReason::Reached,
            tip_error: r.tip_error,
        })
    }
}

/// Hand-written reaching policy: joint-space attraction towards the nearest
/// in-limits inverse-kinematics solution, plus a Cartesian push away from
/// nearby obstacles mapped through the damped pseudo-inverse, scaled
/// uniformly into the velocity bounds. Falls back to resolved rates when no
/// closed-form solution exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedPolicy {
    /// Attraction gain [1/s].
    pub gain: f64,
    /// Obstacle influence distance beyond the radius [m].
    pub influence: f64,
    pub repulsion: f64,
    pub damping: f64,
}

impl Default for ScriptedPolicy {
    fn default() -> Self {
        Self { gain: 3.0, influence: 0.15, repulsion: 0.05, damping: 0.05 }
    }
}

impl ScriptedPolicy {
    pub fn act(&self, env: &ReachEnv) -> Vec<f64> {
        let task = &env.task;
        let q = &env.state().x1;
        let tip = env.tip();
        let target = env.target();
        let j = env.tip_jacobian(q);
        let jjt = &j * j.transpose() + DMatrix::identity(2, 2) * self.damping.powi(2);
        let pinv = |v: nalgebra::Vector2<f64>| {
            j.transpose() * jjt.clone().lu().solve(&DVector::from_column_slice(v.as_slice())).unwrap_or_else(|| DVector::zeros(2))
        };

        let goal = two_link_ik(env.params(), task, target).into_iter().min_by(|a, b| {
            let da = (a[0] - q[0]).powi(2) + (a[1] - q[1]).powi(2);
            let db = (b[0] - q[0]).powi(2) + (b[1] - q[1]).powi(2);
            da.total_cmp(&db)
        });
        let mut qdot = match goal {
            Some(g) => DVector::from_iterator(q.len(), g.iter().zip(q.iter()).map(|(g, q)| self.gain * (g - q))),
            None => pinv(nalgebra::Vector2::new(self.gain * (target[0] - tip[0]), self.gain * (target[1] - tip[1]))),
        };
        let heading = &j * &qdot;
        for o in &task.obstacles {
            let d = o.distance(tip) - o.radius;
            if d < self.influence {
                let away = nalgebra::Vector2::new(tip[0] - o.center[0], tip[1] - o.center[1]).normalize();
                let push = self.repulsion * (1.0 / d.max(1e-3) - 1.0 / self.influence);
                // slide around the obstacle rather than straight into it
                let tangent = nalgebra::Vector2::new(-away.y, away.x);
                let side = if tangent.x * heading[0] + tangent.y * heading[1] >= 0.0 { 1.0 } else { -1.0 };
                qdot += pinv(away * push + tangent * side * push);
            }
        }
        let ratio = qdot.iter().zip(&task.velocity_bounds).map(|(v, b)| v.abs() / b).fold(1.0, f64::max);
        qdot.iter().map(|v| v / ratio).collect()
    }
}

/// Closed-form elbow solutions of the two-link arm; angles outside the
/// limits are dropped.
pub fn two_link_ik(params: &ArmParams, task: &TaskSpec, p: [f64; 2]) -> Vec<[f64; 2]> {
    if params.dof() != 2 {
        return Vec::new();
    }
    let (l1, l2) = (params.links[0].length, params.links[1].length);
    let c2 = (p[0] * p[0] + p[1] * p[1] - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Vec::new();
    }
    [c2.acos(), -c2.acos()]
        .into_iter()
        .map(|q2| {
            let q1 = p[1].atan2(p[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
            // wrap into the branch closest to the joint range
            let lo = task.joint_limits[0][0];
            let q1 = q1 - 2.0 * PI * ((q1 - lo) / (2.0 * PI)).floor();
            [q1, q2]
        })
        .filter(|q| task.within_limits(&DVector::from_row_slice(q)))
        .collect()
}
