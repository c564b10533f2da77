use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Action in physical units [rad/s].
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True when the episode ended in a terminal state (no bootstrap).
    /// Time-limit truncation is not terminal.
    pub done: bool,
}

/// Fixed-capacity FIFO pool with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub r: Vec<f64>,
    pub s_next: DMatrix<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let n = ts.len();
        let (sd, ad) = (ts[0].s.len(), ts[0].a.len());
        Self {
            s: DMatrix::from_fn(n, sd, |i, j| ts[i].s[j]),
            a: DMatrix::from_fn(n, ad, |i, j| ts[i].a[j]),
            r: ts.iter().map(|t| t.r).collect(),
            s_next: DMatrix::from_fn(n, sd, |i, j| ts[i].s_next[j]),
            done: ts.iter().map(|t| t.done).collect(),
        }
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Batch> {
        if self.items.is_empty() || n == 0 {
            return None;
        }
        let picks: Vec<&Transition> = (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Some(Batch::from_transitions(&picks))
    }
}
