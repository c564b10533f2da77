mod common;

use armreach::dynamics::{
    coriolis_matrix, gravity_vector, mass_matrix, uncertainty_terms, ArmParams, JointState, Link, Plant, Uncertainty,
};
use armreach::SimRng;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use std::f64::consts::{FRAC_PI_2, PI};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn angle() -> impl Strategy<Value = f64> {
    -PI..PI
}

#[test]
fn mass_matrix_matches_kinetic_energy_hessian() {
    let p = ArmParams::default();
    let mut rng = SimRng::seed_from_u64(1);
    for _ in 0..1000 {
        let q = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let m = mass_matrix(&v(&q), &p);
        let oracle = common::inertia_from_energy(&q, &p);
        assert!((m - &oracle).amax() < 1e-6, "q = {q:?}");
    }
}

#[test]
fn three_link_mass_matrix_matches_kinetic_energy_hessian() {
    let p = ArmParams { links: vec![Link::uniform_rod(0.7, 1.3), Link::uniform_rod(0.5, 0.8), Link::uniform_rod(0.3, 0.4)], g: 9.81 };
    let mut rng = SimRng::seed_from_u64(2);
    for _ in 0..200 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
        let m = mass_matrix(&v(&q), &p);
        assert!((m - common::inertia_from_energy(&q, &p)).amax() < 1e-6);
        let g = gravity_vector(&v(&q), &p);
        assert!((g - common::gravity_from_energy(&q, &p)).amax() < 1e-6);
    }
}

#[test]
fn mass_matrix_is_positive_definite() {
    let p = ArmParams::default();
    let mut rng = SimRng::seed_from_u64(3);
    for _ in 0..10_000 {
        let q = v(&[rng.random_range(-PI..PI), rng.random_range(-PI..PI)]);
        let m = mass_matrix(&q, &p);
        assert_eq!(m, m.transpose());
        assert!(m.cholesky().is_some());
    }
}

#[test]
fn gravity_at_rest_poses() {
    let p = ArmParams::default();
    let g = gravity_vector(&v(&[FRAC_PI_2, 0.0]), &p);
    assert!(g.amax() < 1e-12);
    let (l1, l2) = (p.links[0], p.links[1]);
    let g = gravity_vector(&v(&[0.0, 0.0]), &p);
    let g1 = p.g * (l1.mass * l1.com + l2.mass * l1.length + l2.mass * l2.com);
    assert!((g[0] - g1).abs() < 1e-12);
    assert!((g[1] - p.g * l2.mass * l2.com).abs() < 1e-12);
}

#[test]
fn coriolis_vanishes_for_straight_arm_and_at_rest() {
    let p = ArmParams::default();
    assert!(coriolis_matrix(&v(&[0.4, 0.0]), &v(&[1.0, -2.0]), &p).amax() < 1e-12);
    let c = coriolis_matrix(&v(&[0.4, 1.1]), &v(&[0.0, 0.0]), &p);
    assert!((c * v(&[0.0, 0.0])).amax() == 0.0);
}

/// Richardson estimate of the global error order of the integrator.
#[test]
fn integrator_is_fourth_order() {
    let plant = Plant::new(ArmParams::default(), true, Uncertainty::Off).unwrap();
    let s0 = JointState::new(v(&[0.3, -0.5]), v(&[1.0, -1.0]), 0.0).unwrap();
    let tau = v(&[2.0, -1.0]);
    let run = |dt: f64| {
        let mut s = s0.clone();
        let mut rng = SimRng::seed_from_u64(0);
        for _ in 0..(0.4 / dt).round() as usize {
            s = plant.step(&s, &tau, dt, &mut rng).unwrap();
        }
        s.x1
    };
    let (a, b, c) = (run(0.02), run(0.01), run(0.005));
    let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
    assert!((order - 4.0).abs() < 0.3, "observed order {order}");
}

#[test]
fn energy_is_conserved_without_torque() {
    let p = ArmParams::default();
    let plant = Plant::new(p.clone(), true, Uncertainty::Off).unwrap();
    let mut s = JointState::new(v(&[1.0, 0.5]), v(&[0.0, 2.0]), 0.0).unwrap();
    let energy = |s: &JointState| common::kinetic_energy(s.x1.as_slice(), s.x2.as_slice(), &p) + common::potential_energy(s.x1.as_slice(), &p);
    let e0 = energy(&s);
    let mut rng = SimRng::seed_from_u64(0);
    for _ in 0..5000 {
        s = plant.step(&s, &v(&[0.0, 0.0]), 1e-3, &mut rng).unwrap();
    }
    assert!((energy(&s) - e0).abs() / 5.0 < 1e-6);
}

#[test]
fn uncertainty_profile() {
    let mut rng = SimRng::seed_from_u64(9);
    let s = JointState::new(v(&[0.2, 0.0]), v(&[0.0, 0.0]), 0.0).unwrap();
    let (f, d) = uncertainty_terms(&s, &mut rng);
    assert!((f[0] - 0.5).abs() < 1e-15);
    assert!((f[1] - 0.7).abs() < 1e-15);
    assert!((d[0] - 3.0).abs() < 1e-15);
    assert!((-0.2..=0.0).contains(&d[1]));
}

#[test]
fn blowup_is_reported() {
    let plant = Plant::nominal(ArmParams::default()).unwrap();
    let s = JointState::at_rest(&[0.0, 0.0]);
    let r = plant.step(&s, &v(&[1e12, 0.0]), 1e-3, &mut SimRng::seed_from_u64(0));
    assert!(matches!(r, Err(armreach::Error::NumericalBlowup { .. })));
}

proptest! {
    #[test]
    fn mass_matrix_symmetric_positive(q1 in angle(), q2 in angle()) {
        let m = mass_matrix(&v(&[q1, q2]), &ArmParams::default());
        prop_assert_eq!(m[(0, 1)], m[(1, 0)]);
        prop_assert!(m[(0, 0)] > 0.0 && m.determinant() > 0.0);
    }

    #[test]
    fn skew_symmetry(q1 in angle(), q2 in angle(), w1 in -3.0..3.0f64, w2 in -3.0..3.0f64, z1 in -1.0..1.0f64, z2 in -1.0..1.0f64) {
        let p = ArmParams::default();
        let (q, qd, z) = (v(&[q1, q2]), v(&[w1, w2]), v(&[z1, z2]));
        let h = 1e-5;
        let m_dot = (mass_matrix(&(&q + &qd * h), &p) - mass_matrix(&(&q - &qd * h), &p)) / (2.0 * h);
        let n = m_dot - coriolis_matrix(&q, &qd, &p) * 2.0;
        prop_assert!((z.transpose() * n * &z)[(0, 0)].abs() <= 1e-9);
    }

    #[test]
    fn gravity_scales_with_g(q1 in angle(), q2 in angle(), k in 0.1..10.0f64) {
        let p = ArmParams::default();
        let scaled = ArmParams { g: p.g * k, ..p.clone() };
        let q = v(&[q1, q2]);
        let (a, b) = (gravity_vector(&q, &p) * k, gravity_vector(&q, &scaled));
        prop_assert!((a - b).amax() <= 1e-12 * (1.0 + k * 30.0));
    }

    #[test]
    fn step_is_deterministic_per_seed(q1 in angle(), q2 in angle(), seed in 0u64..1000) {
        let plant = Plant::reference(ArmParams::default()).unwrap();
        let s = JointState::at_rest(&[q1, q2]);
        let tau = v(&[5.0, -3.0]);
        let a = plant.step(&s, &tau, 1e-3, &mut SimRng::seed_from_u64(seed)).unwrap();
        let b = plant.step(&s, &tau, 1e-3, &mut SimRng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
