//! Rigid-body model of a planar serial arm moving in the vertical plane.
//!
//! Joint 1 is measured from the horizontal `+x` axis, every following joint
//! relative to the previous link; gravity acts along `-y`. Inertia, Coriolis
//! and gravity terms are derived from the Lagrangian of an arbitrary number of
//! links; the shipped configuration is the two-link arm with 1 m and 0.8 m
//! links.
//!
//! The simulated plant is `x1' = x2`, `x2' = M^-1 (tau - C x2 - G) + F + tau_d`
//! where `F` is a state-dependent friction-like acceleration and `tau_d` a
//! time-dependent load disturbance, both in acceleration space.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_len, Error, Result};
use crate::SimRng;

/// State magnitude above which a simulation is declared unstable.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// Joint angles [rad].
    pub x1: DVector<f64>,
    /// Joint velocities [rad/s].
    pub x2: DVector<f64>,
    /// Simulation time [s].
    pub t: f64,
}

impl JointState {
    pub fn new(x1: DVector<f64>, x2: DVector<f64>, t: f64) -> Result<Self> {
        check_len(x1.len(), x2.len())?;
        if x1.is_empty() {
            return Err(Error::InvalidParameter("joint state must have n >= 1".into()));
        }
        let state = Self { x1, x2, t };
        if !state.is_finite() {
            return Err(Error::InvalidParameter("joint state must be finite".into()));
        }
        Ok(state)
    }

    /// At rest at the given angles, `t = 0`.
    pub fn at_rest(angles: &[f64]) -> Self {
        Self {
            x1: DVector::from_column_slice(angles),
            x2: DVector::zeros(angles.len()),
            t: 0.0,
        }
    }

    pub fn dof(&self) -> usize {
        self.x1.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x1.iter().chain(self.x2.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }

    fn magnitude(&self) -> f64 {
        self.x1
            .iter()
            .chain(self.x2.iter())
            .fold(0.0_f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v.abs()) })
    }
}

/// One rigid link: length, mass, distance of its centre of mass from the
/// proximal joint and rotational inertia about that centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    pub com: f64,
    pub inertia: f64,
}

impl Link {
    /// Uniform slender rod: centre of mass at mid-length, `I = m l^2 / 12`.
    pub fn uniform_rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            com: 0.5 * length,
            inertia: mass * length * length / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams {
    pub links: Vec<Link>,
    pub g: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self::two_link(1.0, 0.8)
    }
}

impl ArmParams {
    /// Two uniform 1 kg rods with the given lengths under standard gravity.
    pub fn two_link(l1: f64, l2: f64) -> Self {
        Self {
            links: vec![Link::uniform_rod(l1, 1.0), Link::uniform_rod(l2, 1.0)],
            g: 9.81,
        }
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Total reach `sum(l_i)`.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::InvalidParameter("arm needs at least one link".into()));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gravity must be positive, got {}", self.g)));
        }
        for (i, link) in self.links.iter().enumerate() {
            let fields = [link.length, link.mass, link.com, link.inertia];
            if fields.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "link {} parameters must be strictly positive: {:?}",
                    i + 1,
                    link
                )));
            }
            if link.com > link.length {
                return Err(Error::InvalidParameter(format!(
                    "link {}: centre of mass {} lies beyond link length {}",
                    i + 1,
                    link.com,
                    link.length
                )));
            }
        }
        Ok(())
    }
}

// Flat JSON form: l1, l2, ..., m1, ..., lc1, ..., I1, ..., g. Only the lengths
// are mandatory; missing masses default to 1 kg and missing lc/I to a uniform rod.
impl Serialize for ArmParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = BTreeMap::new();
        for (i, link) in self.links.iter().enumerate() {
            let k = i + 1;
            map.insert(format!("l{k}"), link.length);
            map.insert(format!("m{k}"), link.mass);
            map.insert(format!("lc{k}"), link.com);
            map.insert(format!("I{k}"), link.inertia);
        }
        map.insert("g".to_string(), self.g);
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ArmParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let g = map.remove("g").unwrap_or(9.81);
        let mut links = Vec::new();
        let mut k = 1;
        while let Some(length) = map.remove(&format!("l{k}")) {
            let mass = map.remove(&format!("m{k}")).unwrap_or(1.0);
            let rod = Link::uniform_rod(length, mass);
            let com = map.remove(&format!("lc{k}")).unwrap_or(rod.com);
            let inertia = map.remove(&format!("I{k}")).unwrap_or(rod.inertia);
            links.push(Link { length, mass, com, inertia });
            k += 1;
        }
        if let Some(key) = map.keys().next() {
            return Err(D::Error::custom(format!("unknown or out-of-sequence arm key `{key}`")));
        }
        let params = ArmParams { links, g };
        params.validate().map_err(D::Error::custom)?;
        Ok(params)
    }
}

fn absolute_angles(q: &DVector<f64>) -> Vec<f64> {
    q.iter()
        .scan(0.0, |acc, qi| {
            *acc += qi;
            Some(*acc)
        })
        .collect()
}

/// Lever arms `(radius, absolute-angle index)` whose sum forms column `j` of
/// the centre-of-mass Jacobian of link `i` (rotated by 90 degrees).
fn lever_terms(params: &ArmParams, i: usize, j: usize) -> impl Iterator<Item = (f64, usize)> + '_ {
    let upstream = (j..i).map(move |k| (params.links[k].length, k));
    let own = (j <= i).then(|| (params.links[i].com, i));
    upstream.chain(own)
}

fn check_dof(params: &ArmParams, q: &DVector<f64>) {
    assert_eq!(q.len(), params.dof(), "joint vector length does not match arm");
}

pub fn mass_matrix(q: &DVector<f64>, params: &ArmParams) -> DMatrix<f64> {
    check_dof(params, q);
    let n = params.dof();
    let phi = absolute_angles(q);
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let mut acc = 0.0;
            for (i, link) in params.links.iter().enumerate().skip(c) {
                let mut dot = 0.0;
                for (ra, a) in lever_terms(params, i, r) {
                    for (rb, b) in lever_terms(params, i, c) {
                        dot += ra * rb * (phi[a] - phi[b]).cos();
                    }
                }
                acc += link.mass * dot + link.inertia;
            }
            m[(r, c)] = acc;
            m[(c, r)] = acc;
        }
    }
    m
}

/// `dM/dq_p` for every joint `p`.
pub fn mass_matrix_partials(q: &DVector<f64>, params: &ArmParams) -> Vec<DMatrix<f64>> {
    check_dof(params, q);
    let n = params.dof();
    let phi = absolute_angles(q);
    let moves = |p: usize, a: usize| if p <= a { 1.0 } else { 0.0 };
    (0..n)
        .map(|p| {
            let mut dm = DMatrix::zeros(n, n);
            for r in 0..n {
                for c in r..n {
                    let mut acc = 0.0;
                    for (i, link) in params.links.iter().enumerate().skip(c) {
                        let mut dot = 0.0;
                        for (ra, a) in lever_terms(params, i, r) {
                            for (rb, b) in lever_terms(params, i, c) {
                                let rate = moves(p, a) - moves(p, b);
                                if rate != 0.0 {
                                    dot -= ra * rb * (phi[a] - phi[b]).sin() * rate;
                                }
                            }
                        }
                        acc += link.mass * dot;
                    }
                    dm[(r, c)] = acc;
                    dm[(c, r)] = acc;
                }
            }
            dm
        })
        .collect()
}

/// Coriolis/centrifugal matrix built from Christoffel symbols of the first
/// kind, so that `Mdot - 2C` is skew-symmetric.
pub fn coriolis_matrix(q: &DVector<f64>, qdot: &DVector<f64>, params: &ArmParams) -> DMatrix<f64> {
    let n = params.dof();
    assert_eq!(qdot.len(), n, "velocity vector length does not match arm");
    let dm = mass_matrix_partials(q, params);
    DMatrix::from_fn(n, n, |k, j| {
        (0..n)
            .map(|i| 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qdot[i])
            .sum()
    })
}

pub fn gravity_vector(q: &DVector<f64>, params: &ArmParams) -> DVector<f64> {
    check_dof(params, q);
    let n = params.dof();
    let phi = absolute_angles(q);
    DVector::from_fn(n, |j, _| {
        params
            .links
            .iter()
            .enumerate()
            .skip(j)
            .map(|(i, link)| {
                link.mass * params.g * lever_terms(params, i, j).map(|(r, a)| r * phi[a].cos()).sum::<f64>()
            })
            .sum()
    })
}

/// Planar tip position embedded in 3-D with `z = 0`.
pub fn forward_kinematics(q: &DVector<f64>, params: &ArmParams) -> Vector3<f64> {
    check_dof(params, q);
    let phi = absolute_angles(q);
    params
        .links
        .iter()
        .zip(&phi)
        .fold(Vector3::zeros(), |p, (link, a)| p + Vector3::new(link.length * a.cos(), link.length * a.sin(), 0.0))
}

/// Base, every joint and the tip, in order.
pub fn joint_positions(q: &DVector<f64>, params: &ArmParams) -> Vec<[f64; 2]> {
    check_dof(params, q);
    let phi = absolute_angles(q);
    let mut points = vec![[0.0, 0.0]];
    let mut p = [0.0, 0.0];
    for (link, a) in params.links.iter().zip(&phi) {
        p = [p[0] + link.length * a.cos(), p[1] + link.length * a.sin()];
        points.push(p);
    }
    points
}

pub fn kinetic_energy(q: &DVector<f64>, qdot: &DVector<f64>, params: &ArmParams) -> f64 {
    0.5 * qdot.dot(&(mass_matrix(q, params) * qdot))
}

pub fn potential_energy(q: &DVector<f64>, params: &ArmParams) -> f64 {
    let phi = absolute_angles(q);
    let mut base_y = 0.0;
    let mut energy = 0.0;
    for (link, a) in params.links.iter().zip(&phi) {
        energy += link.mass * params.g * (base_y + link.com * a.sin());
        base_y += link.length * a.sin();
    }
    energy
}

/// Which acceleration-space uncertainty acts on the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    /// No unmodelled friction and no load disturbance.
    Off,
    /// Two-joint friction and load profile:
    /// `F = [0.5 cos(0.7 x2(2)); -1.1 cos(1.8 x1(2)) + 1.8 cos(0.3 x1(2))]`,
    /// `tau_d = [3 cos(2t); -0.2 U(0,1)]`.
    #[default]
    FrictionAndLoad,
}

/// The simulated arm: rigid-body terms plus optional uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub params: ArmParams,
    /// When false the Coriolis and gravity terms are dropped, leaving
    /// `x2' = M^-1 tau + F + tau_d`.
    #[serde(default = "default_true")]
    pub rigid_body: bool,
    #[serde(default)]
    pub uncertainty: Uncertainty,
}

fn default_true() -> bool {
    true
}

impl Plant {
    pub fn new(params: ArmParams, rigid_body: bool, uncertainty: Uncertainty) -> Result<Self> {
        params.validate()?;
        if uncertainty == Uncertainty::FrictionAndLoad && params.dof() != 2 {
            return Err(Error::InvalidParameter(
                "friction-and-load uncertainty is defined for two joints only".into(),
            ));
        }
        Ok(Self { params, rigid_body, uncertainty })
    }

    /// The reference plant: full rigid body with friction and load disturbance.
    pub fn reference(params: ArmParams) -> Result<Self> {
        Self::new(params, true, Uncertainty::FrictionAndLoad)
    }

    /// Double integrator through the inertia matrix, `x2' = M^-1 tau`.
    pub fn nominal(params: ArmParams) -> Result<Self> {
        Self::new(params, false, Uncertainty::Off)
    }

    pub fn dof(&self) -> usize {
        self.params.dof()
    }

    pub fn friction(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> DVector<f64> {
        match self.uncertainty {
            Uncertainty::Off => DVector::zeros(self.dof()),
            Uncertainty::FrictionAndLoad => friction_terms(x1, x2),
        }
    }

    pub fn load_disturbance(&self, t: f64, rng: &mut SimRng) -> DVector<f64> {
        match self.uncertainty {
            Uncertainty::Off => DVector::zeros(self.dof()),
            Uncertainty::FrictionAndLoad => load_disturbance(t, rng.random::<f64>()),
        }
    }

    /// `x2'` for the given torque and (held) disturbance.
    pub fn acceleration(
        &self,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
        tau: &DVector<f64>,
        tau_d: &DVector<f64>,
    ) -> DVector<f64> {
        let m = mass_matrix(x1, &self.params);
        let mut rhs = tau.clone();
        if self.rigid_body {
            rhs -= coriolis_matrix(x1, x2, &self.params) * x2 + gravity_vector(x1, &self.params);
        }
        let qdd = match Cholesky::new(m.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::from_element(self.dof(), f64::NAN)),
        };
        qdd + self.friction(x1, x2) + tau_d
    }

    /// One fixed-step RK4 step. The load disturbance is drawn once from `rng`
    /// and held across the four stages.
    pub fn step(&self, state: &JointState, tau: &DVector<f64>, dt: f64, rng: &mut SimRng) -> Result<JointState> {
        let tau_d = self.load_disturbance(state.t, rng);
        self.step_with_disturbance(state, tau, &tau_d, dt)
    }

    pub fn step_with_disturbance(
        &self,
        state: &JointState,
        tau: &DVector<f64>,
        tau_d: &DVector<f64>,
        dt: f64,
    ) -> Result<JointState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        check_len(self.dof(), state.dof())?;
        check_len(self.dof(), tau.len())?;
        if tau.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { t: state.t, magnitude: f64::INFINITY });
        }

        let (x1, x2) = (&state.x1, &state.x2);
        let k1v = x2.clone();
        let k1a = self.acceleration(x1, x2, tau, tau_d);

        let x1b = x1 + &k1v * (0.5 * dt);
        let x2b = x2 + &k1a * (0.5 * dt);
        let k2a = self.acceleration(&x1b, &x2b, tau, tau_d);
        let k2v = x2b;

        let x1c = x1 + &k2v * (0.5 * dt);
        let x2c = x2 + &k2a * (0.5 * dt);
        let k3a = self.acceleration(&x1c, &x2c, tau, tau_d);
        let k3v = x2c;

        let x1e = x1 + &k3v * dt;
        let x2e = x2 + &k3a * dt;
        let k4a = self.acceleration(&x1e, &x2e, tau, tau_d);
        let k4v = x2e;

        let next = JointState {
            x1: x1 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
            x2: x2 + (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0),
            t: state.t + dt,
        };
        let magnitude = next.magnitude();
        if !(magnitude <= BLOWUP_LIMIT) {
            return Err(Error::NumericalBlowup { t: next.t, magnitude });
        }
        Ok(next)
    }
}

/// Friction-like acceleration of the two-joint reference arm.
pub fn friction_terms(x1: &DVector<f64>, x2: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        0.5 * (0.7 * x2[1]).cos(),
        -1.1 * (1.8 * x1[1]).cos() + 1.8 * (0.3 * x1[1]).cos(),
    ])
}

/// Load disturbance of the two-joint reference arm for a uniform draw `u` in `[0, 1)`.
pub fn load_disturbance(t: f64, u: f64) -> DVector<f64> {
    DVector::from_vec(vec![3.0 * (2.0 * t).cos(), -0.2 * u])
}

/// `(F, tau_d)` of the reference uncertainty profile at `state`.
pub fn uncertainty_terms(state: &JointState, rng: &mut SimRng) -> (DVector<f64>, DVector<f64>) {
    (friction_terms(&state.x1, &state.x2), load_disturbance(state.t, rng.random::<f64>()))
}
