#![allow(dead_code)]

use armreach::dynamics::ArmParams;
use nalgebra::{DMatrix, DVector};

/// Absolute orientation of each link.
pub fn link_angles(q: &[f64]) -> Vec<f64> {
    q.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Centre-of-mass position of every link, by walking the chain.
pub fn com_positions(q: &[f64], p: &ArmParams) -> Vec<[f64; 2]> {
    let phi = link_angles(q);
    let (mut x, mut y) = (0.0, 0.0);
    let mut out = Vec::new();
    for (link, a) in p.links.iter().zip(&phi) {
        out.push([x + link.com * a.cos(), y + link.com * a.sin()]);
        x += link.length * a.cos();
        y += link.length * a.sin();
    }
    out
}

/// Translational Jacobians of the link centres by central differences.
fn com_jacobians(q: &[f64], p: &ArmParams) -> Vec<DMatrix<f64>> {
    let n = q.len();
    let h = 1e-6;
    let mut jac = vec![DMatrix::zeros(2, n); n];
    for j in 0..n {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[j] += h;
        qm[j] -= h;
        let (cp, cm) = (com_positions(&qp, p), com_positions(&qm, p));
        for (k, jk) in jac.iter_mut().enumerate() {
            jk[(0, j)] = (cp[k][0] - cm[k][0]) / (2.0 * h);
            jk[(1, j)] = (cp[k][1] - cm[k][1]) / (2.0 * h);
        }
    }
    jac
}

/// Kinetic energy from link-centre velocities and link spin rates.
pub fn kinetic_energy(q: &[f64], qd: &[f64], p: &ArmParams) -> f64 {
    let jac = com_jacobians(q, p);
    let v = DVector::from_column_slice(qd);
    let omega = link_angles(qd);
    p.links
        .iter()
        .zip(&jac)
        .zip(&omega)
        .map(|((link, j), w)| 0.5 * link.mass * (j * &v).norm_squared() + 0.5 * link.inertia * w * w)
        .sum()
}

pub fn potential_energy(q: &[f64], p: &ArmParams) -> f64 {
    com_positions(q, p).iter().zip(&p.links).map(|(c, l)| l.mass * p.g * c[1]).sum()
}

/// Inertia matrix as the Hessian of the kinetic energy in the joint rates.
/// The energy is quadratic in the rates, so unit-step differences are exact.
pub fn inertia_from_energy(q: &[f64], p: &ArmParams) -> DMatrix<f64> {
    let n = q.len();
    let ke = |v: &[f64]| kinetic_energy(q, v, p);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut pp = vec![0.0; n];
            let mut pm = vec![0.0; n];
            let mut mp = vec![0.0; n];
            let mut mm = vec![0.0; n];
            pp[i] += 1.0;
            pp[j] += 1.0;
            pm[i] += 1.0;
            pm[j] -= 1.0;
            mp[i] -= 1.0;
            mp[j] += 1.0;
            mm[i] -= 1.0;
            mm[j] -= 1.0;
            m[(i, j)] = (ke(&pp) - ke(&pm) - ke(&mp) + ke(&mm)) / 4.0;
        }
    }
    m
}

/// Gradient of the potential energy by central differences.
pub fn gravity_from_energy(q: &[f64], p: &ArmParams) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_iterator(
        q.len(),
        (0..q.len()).map(|j| {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[j] += h;
            qm[j] -= h;
            (potential_energy(&qp, p) - potential_energy(&qm, p)) / (2.0 * h)
        }),
    )
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
