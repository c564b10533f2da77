//! Cuckoo search with Levy flights for bounded black-box minimisation.
//!
//! Each iteration moves every nest by a Levy flight scaled by its distance to
//! the best nest, keeps the move only when it improves the nest, then
//! regenerates the worst `ceil(pa * eta)` nests by a differential step between
//! two randomly chosen nests (again kept only on improvement). The best cost
//! is therefore non-increasing.
//!
//! Objective evaluations inside a phase run in parallel. Every evaluation
//! receives a sub-seed derived from `(seed, iteration, slot)`, and all
//! proposals are drawn from the master stream before evaluation starts, so
//! results do not depend on scheduling.

pub mod tuning;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SimRng;

/// Scale of a Levy flight relative to the distance to the best nest.
pub const LEVY_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Uniform,
    /// Uniform in `ln x`; falls back to uniform on dimensions whose lower
    /// bound is not positive.
    #[default]
    LogUniform,
}

/// How the Levy step's numerator and denominator normals are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevySampling {
    /// Independent normals (Mantegna).
    #[default]
    Independent,
    /// The same normal draw feeds numerator, denominator and the step
    /// multiplier. Kept for comparison only: the step degenerates to
    /// `sigma * sign(l) * |l|^(2 - 1/beta)`, which is not heavy-tailed.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsoConfig {
    /// Population size.
    #[serde(default = "defaults::eta")]
    pub eta: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    /// Fraction of worst nests abandoned each iteration.
    #[serde(default = "defaults::pa")]
    pub pa: f64,
    /// Levy exponent.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Per-dimension `[lo, hi]`.
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default)]
    pub levy: LevySampling,
}

mod defaults {
    pub fn eta() -> usize {
        15
    }
    pub fn iterations() -> usize {
        200
    }
    pub fn pa() -> f64 {
        0.25
    }
    pub fn beta() -> f64 {
        1.5
    }
}

impl CsoConfig {
    /// Population 15, 200 iterations, 25 % abandonment, beta = 1.5.
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            eta: defaults::eta(),
            iterations: defaults::iterations(),
            pa: defaults::pa(),
            beta: defaults::beta(),
            bounds,
            seed,
            init: InitStrategy::Uniform,
            levy: LevySampling::Independent,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < 2 {
            return Err(Error::InvalidParameter(format!("population size must be >= 2, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.pa) {
            return Err(Error::InvalidParameter(format!("pa must lie in [0, 1], got {}", self.pa)));
        }
        if !(self.beta > 1.0 && self.beta <= 2.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (1, 2], got {}", self.beta)));
        }
        if self.bounds.is_empty() {
            return Err(Error::InvalidParameter("at least one dimension is required".into()));
        }
        for (d, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!("dimension {d}: invalid bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Number of nests regenerated per iteration.
    pub fn abandon_count(&self) -> usize {
        (self.pa * self.eta as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

/// Objective value; ties on `cost` are broken by the smaller `tie_break`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub cost: f64,
    pub tie_break: f64,
}

impl Fitness {
    pub fn new(cost: f64) -> Self {
        Self { cost, tie_break: 0.0 }
    }

    fn key(&self) -> (f64, f64) {
        let fix = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        (fix(self.cost), fix(self.tie_break))
    }

    pub fn is_better_than(&self, other: &Fitness) -> bool {
        let (a, b) = (self.key(), other.key());
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

/// Something to minimise. `seed` is a deterministic per-evaluation stream
/// seed that stochastic objectives may use.
pub trait Objective: Sync {
    fn evaluate(&self, x: &[f64], seed: u64) -> Fitness;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&self, x: &[f64], _seed: u64) -> Fitness {
        Fitness::new(self(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: Vec<f64>,
    pub fitness: Fitness,
}

impl Candidate {
    pub fn cost(&self) -> f64 {
        self.fitness.cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_cost: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsoOutcome {
    pub best: Candidate,
    /// Entry 0 describes the initial population.
    pub history: Vec<IterationRecord>,
    pub population: Vec<Candidate>,
    pub evaluations: usize,
}

/// `sigma_u` of the Mantegna sampler:
/// `(Gamma(1+b) sin(pi b / 2) / (Gamma((1+b)/2) b 2^((b-1)/2)))^(1/b)`.
pub fn levy_sigma(beta: f64) -> f64 {
    let num = libm::tgamma(1.0 + beta) * (std::f64::consts::PI * beta / 2.0).sin();
    let den = libm::tgamma((1.0 + beta) / 2.0) * beta * 2f64.powf((beta - 1.0) / 2.0);
    (num / den).powf(1.0 / beta)
}

/// `stp = sigma_u * u / |y|^(1/beta)` from two standard-normal draws.
pub fn levy_from_normals(u: f64, y: f64, beta: f64) -> f64 {
    levy_sigma(beta) * u / y.abs().powf(1.0 / beta)
}

fn nonzero_normal(rng: &mut SimRng) -> f64 {
    loop {
        let y: f64 = rng.sample(StandardNormal);
        if y.abs() >= 1e-12 {
            return y;
        }
    }
}

/// One symmetric, heavy-tailed Levy step.
pub fn levy_step(beta: f64, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.sample(StandardNormal);
    let y = nonzero_normal(rng);
    levy_from_normals(u, y, beta)
}

fn clamp_to(bounds: &[(f64, f64)], x: &mut [f64]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Levy flight of nest `current` relative to `best`:
/// `x + l * 0.01 * stp * (x - best)` per dimension, clamped to the bounds.
pub fn global_walk(
    current: &[f64],
    best: &[f64],
    beta: f64,
    sampling: LevySampling,
    bounds: &[(f64, f64)],
    rng: &mut SimRng,
) -> Vec<f64> {
    assert_eq!(current.len(), best.len());
    let mut next: Vec<f64> = current
        .iter()
        .zip(best)
        .map(|(x, b)| {
            let (ell, stp) = match sampling {
                LevySampling::Independent => {
                    let stp = levy_step(beta, rng);
                    (rng.sample::<f64, _>(StandardNormal), stp)
                }
                LevySampling::Coupled => {
                    let ell = nonzero_normal(rng);
                    (ell, levy_from_normals(ell, ell, beta))
                }
            };
            x + ell * LEVY_SCALE * stp * (x - b)
        })
        .collect();
    clamp_to(bounds, &mut next);
    next
}

/// Indices of the `count` worst candidates, worst first.
fn worst_indices(population: &[Candidate], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (&population[a].fitness, &population[b].fitness);
        if fb.is_better_than(fa) {
            std::cmp::Ordering::Less
        } else if fa.is_better_than(fb) {
            std::cmp::Ordering::Greater
        } else {
            a.cmp(&b)
        }
    });
    order.truncate(count);
    order
}

/// Replacement proposals for the worst `ceil(pa * eta)` nests:
/// `x_j + r * (x_i - x_k)` with `i`, `k` taken from two random permutations
/// and `r ~ U(0, 1)` per dimension.
pub fn abandonment_proposals(
    population: &[Candidate],
    pa: f64,
    bounds: &[(f64, f64)],
    rng: &mut SimRng,
) -> Vec<(usize, Vec<f64>)> {
    let eta = population.len();
    let count = (pa * eta as f64 - 1e-9).ceil().max(0.0) as usize;
    if count == 0 {
        return Vec::new();
    }
    let mut perm1: Vec<usize> = (0..eta).collect();
    let mut perm2 = perm1.clone();
    perm1.shuffle(rng);
    perm2.shuffle(rng);
    worst_indices(population, count)
        .into_iter()
        .map(|j| {
            let (a, b) = (&population[perm1[j]].position, &population[perm2[j]].position);
            let mut next: Vec<f64> = population[j]
                .position
                .iter()
                .zip(a.iter().zip(b))
                .map(|(x, (xa, xb))| x + rng.random::<f64>() * (xa - xb))
                .collect();
            clamp_to(bounds, &mut next);
            (j, next)
        })
        .collect()
}

/// Evaluate proposals and keep each only if it beats the nest it targets.
/// Returns the number of evaluations performed.
fn evaluate_and_select<O: Objective + ?Sized>(
    objective: &O,
    population: &mut [Candidate],
    proposals: Vec<(usize, Vec<f64>)>,
    seeds: impl Fn(usize) -> u64 + Sync,
) -> usize {
    let scored: Vec<(usize, Vec<f64>, Fitness)> = proposals
        .into_par_iter()
        .enumerate()
        .map(|(slot, (j, x))| {
            let f = objective.evaluate(&x, seeds(slot));
            (j, x, f)
        })
        .collect();
    let count = scored.len();
    for (j, x, f) in scored {
        if f.is_better_than(&population[j].fitness) {
            population[j] = Candidate { position: x, fitness: f };
        }
    }
    count
}

/// Abandon the worst nests and keep improving replacements. `seed_of(slot)`
/// supplies each evaluation's sub-seed.
pub fn abandon_and_replace<O: Objective + ?Sized>(
    objective: &O,
    population: &mut [Candidate],
    pa: f64,
    bounds: &[(f64, f64)],
    rng: &mut SimRng,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> usize {
    let proposals = abandonment_proposals(population, pa, bounds, rng);
    evaluate_and_select(objective, population, proposals, seed_of)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic evaluation seed for `(master, iteration, slot)`.
pub fn sub_seed(master: u64, iteration: usize, slot: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ iteration as u64) ^ slot as u64)
}

fn best_of(population: &[Candidate]) -> &Candidate {
    population
        .iter()
        .reduce(|best, c| if c.fitness.is_better_than(&best.fitness) { c } else { best })
        .expect("non-empty population")
}

fn record(iteration: usize, population: &[Candidate]) -> IterationRecord {
    let finite: Vec<f64> = population.iter().map(|c| c.cost()).filter(|c| c.is_finite()).collect();
    let mean_cost =
        if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    IterationRecord { iteration, best_cost: best_of(population).cost(), mean_cost }
}

fn initial_position(cfg: &CsoConfig, rng: &mut SimRng) -> Vec<f64> {
    cfg.bounds
        .iter()
        .map(|&(lo, hi)| match cfg.init {
            InitStrategy::LogUniform if lo > 0.0 => (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp(),
            _ => lo + rng.random::<f64>() * (hi - lo),
        })
        .zip(&cfg.bounds)
        .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
        .collect()
}

/// Minimise `objective` over the bounds box.
pub fn optimize<O: Objective + ?Sized>(objective: &O, cfg: &CsoConfig) -> Result<CsoOutcome> {
    optimize_with_progress(objective, cfg, |_| {})
}

/// [`optimize`] with a callback after every iteration record.
pub fn optimize_with_progress<O: Objective + ?Sized>(
    objective: &O,
    cfg: &CsoConfig,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<CsoOutcome> {
    cfg.validate()?;
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let eta = cfg.eta;

    let positions: Vec<Vec<f64>> = (0..eta).map(|_| initial_position(cfg, &mut rng)).collect();
    let fitness: Vec<Fitness> = positions
        .par_iter()
        .enumerate()
        .map(|(slot, x)| objective.evaluate(x, sub_seed(cfg.seed, 0, slot)))
        .collect();
    let mut population: Vec<Candidate> =
        positions.into_iter().zip(fitness).map(|(position, fitness)| Candidate { position, fitness }).collect();
    let mut evaluations = eta;
    let mut history = vec![record(0, &population)];
    progress(&history[0]);

    for iteration in 1..=cfg.iterations {
        let best = best_of(&population).position.clone();
        let walks: Vec<(usize, Vec<f64>)> = population
            .iter()
            .enumerate()
            .map(|(j, c)| (j, global_walk(&c.position, &best, cfg.beta, cfg.levy, &cfg.bounds, &mut rng)))
            .collect();
        evaluations += evaluate_and_select(objective, &mut population, walks, |slot| sub_seed(cfg.seed, iteration, slot));

        evaluations += abandon_and_replace(objective, &mut population, cfg.pa, &cfg.bounds, &mut rng, |slot| {
            sub_seed(cfg.seed, iteration, eta + slot)
        });

        let rec = record(iteration, &population);
        progress(&rec);
        history.push(rec);
    }

    Ok(CsoOutcome { best: best_of(&population).clone(), history, population, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sigma_for_beta_one_and_a_half() {
        // Gamma(2.5) = 3 sqrt(pi) / 4, Gamma(1.25) = 0.906402477055477
        let g25 = 0.75 * std::f64::consts::PI.sqrt();
        let g125 = 0.906_402_477_055_477;
        let expect = (g25 * (0.75 * std::f64::consts::PI).sin() / (g125 * 1.5 * 2f64.powf(0.25))).powf(1.0 / 1.5);
        assert!((levy_sigma(1.5) - expect).abs() < 1e-12);
        assert!((levy_sigma(1.5) - 0.6966).abs() < 1e-4);
    }

    #[test]
    fn zero_numerator_gives_zero_step() {
        assert_eq!(levy_from_normals(0.0, 0.7, 1.5), 0.0);
    }

    #[test]
    fn levy_steps_are_sign_symmetric() {
        let mut rng = SimRng::seed_from_u64(3);
        let n = 100_000;
        let mean_sign: f64 = (0..n).map(|_| levy_step(1.5, &mut rng).signum()).sum::<f64>() / n as f64;
        assert!(mean_sign.abs() < 0.02, "{mean_sign}");
    }

    #[test]
    fn walk_from_best_does_not_move() {
        let bounds = vec![(-5.0, 5.0); 3];
        let mut rng = SimRng::seed_from_u64(1);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(global_walk(&x, &x, 1.5, LevySampling::Independent, &bounds, &mut rng), x);
        for _ in 0..1000 {
            let y = global_walk(&x, &[0.0, 0.0, 0.0], 1.5, LevySampling::Independent, &bounds, &mut rng);
            assert!(y.iter().all(|v| (-5.0..=5.0).contains(v)));
        }
    }

    fn population(costs: &[f64]) -> Vec<Candidate> {
        costs
            .iter()
            .enumerate()
            .map(|(i, c)| Candidate { position: vec![i as f64, -(i as f64)], fitness: Fitness::new(*c) })
            .collect()
    }

    #[test]
    fn pa_zero_leaves_population_untouched() {
        let mut pop = population(&[3.0, 1.0, 2.0]);
        let before = pop.clone();
        let mut rng = SimRng::seed_from_u64(2);
        let n = abandon_and_replace(&|x: &[f64]| sphere(x), &mut pop, 0.0, &[(-9.0, 9.0); 2], &mut rng, |_| 0);
        assert_eq!(n, 0);
        assert_eq!(pop, before);
    }

    #[test]
    fn pa_one_proposes_every_nest() {
        let mut pop = population(&[5.0; 15]);
        let calls = AtomicUsize::new(0);
        let objective = |x: &[f64]| {
            calls.fetch_add(1, Ordering::SeqCst);
            sphere(x)
        };
        let mut rng = SimRng::seed_from_u64(2);
        let n = abandon_and_replace(&objective, &mut pop, 1.0, &[(-99.0, 99.0); 2], &mut rng, |_| 0);
        assert_eq!(n, 15);
        assert_eq!(calls.load(Ordering::SeqCst), 15);
    }

    #[test]
    fn abandonment_targets_the_worst() {
        let pop = population(&[0.5, 9.0, 1.0, 7.0, 3.0, 2.0, 8.0, 4.0]);
        let mut rng = SimRng::seed_from_u64(5);
        let props = abandonment_proposals(&pop, 0.25, &[(-99.0, 99.0); 2], &mut rng);
        let idx: Vec<usize> = props.iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![1, 6]);
    }

    #[test]
    fn equal_cost_replacement_is_rejected() {
        let mut pop = population(&[1.0, 1.0]);
        pop[1].position = pop[0].position.clone();
        let before = pop.clone();
        // Identical nests make every differential step zero: ties keep the original.
        let mut rng = SimRng::seed_from_u64(5);
        abandon_and_replace(&|_x: &[f64]| 1.0, &mut pop, 1.0, &[(-9.0, 9.0); 2], &mut rng, |_| 0);
        assert_eq!(pop, before);
    }

    #[test]
    fn constant_objective_gives_flat_history() {
        let cfg = CsoConfig { iterations: 20, ..CsoConfig::new(vec![(-1.0, 1.0); 3], 4) };
        let out = optimize(&|_x: &[f64]| 2.5, &cfg).unwrap();
        assert_eq!(out.best.cost(), 2.5);
        assert!(out.history.iter().all(|r| r.best_cost == 2.5 && r.mean_cost == 2.5));
    }

    #[test]
    fn zero_iterations_returns_initial_best() {
        let cfg = CsoConfig { iterations: 0, ..CsoConfig::new(vec![(-5.0, 5.0); 2], 11) };
        let out = optimize(&|x: &[f64]| sphere(x), &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.evaluations, cfg.eta);
        let min = out.population.iter().map(|c| c.cost()).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.cost(), min);
    }

    #[test]
    fn config_validation() {
        let base = CsoConfig::new(vec![(0.0, 1.0)], 0);
        assert!(base.validate().is_ok());
        assert!(CsoConfig { eta: 1, ..base.clone() }.validate().is_err());
        assert!(CsoConfig { pa: 1.5, ..base.clone() }.validate().is_err());
        assert!(CsoConfig { beta: 1.0, ..base.clone() }.validate().is_err());
        assert!(CsoConfig { bounds: vec![(1.0, 0.0)], ..base }.validate().is_err());
    }

    #[test]
    fn tie_break_orders_equal_costs() {
        let a = Fitness { cost: 1.0, tie_break: 0.1 };
        let b = Fitness { cost: 1.0, tie_break: 0.2 };
        assert!(a.is_better_than(&b));
        assert!(!b.is_better_than(&a));
        assert!(Fitness::new(0.0).is_better_than(&Fitness::new(f64::NAN)));
    }
}
