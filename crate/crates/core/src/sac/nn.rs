//! Fully connected tanh networks over a flat parameter vector, with batched
//! forward and reverse passes, and the Adam optimiser.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Multilayer perceptron: tanh on hidden layers, identity on the output.
///
/// Layer `k` stores its weights as an `in x out` column-major block followed
/// by `out` biases. Batches are row-major in the sense that each row of an
/// input matrix is one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `layers[k]` is the input to layer `k`; the last entry is the output.
    layers: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.layers.last().expect("tape holds at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_views(&self) -> impl Iterator<Item = (DMatrixView<'_, f64>, &[f64])> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = DMatrixView::from_slice(&self.params[off..off + n_in * n_out], n_in, n_out);
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            (weights, bias)
        })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Tape {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(x.clone());
        for (k, (w, b)) in self.layer_views().enumerate() {
            let mut z = &layers[k] * w;
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[j]);
            }
            if k + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            layers.push(z);
        }
        Tape { layers }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).layers.pop().unwrap()
    }

    /// Reverse pass. Adds `d loss / d params` into `grads` and returns
    /// `d loss / d input`.
    pub fn backward(&self, tape: &Tape, grad_out: &DMatrix<f64>, grads: &mut [f64]) -> DMatrix<f64> {
        assert_eq!(grads.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.clone();
        for k in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            if k + 1 < n_layers {
                let h = &tape.layers[k + 1];
                delta.zip_apply(h, |d, h| *d *= 1.0 - h * h);
            }
            let a = &tape.layers[k];
            let dw = a.transpose() * &delta;
            let o = offsets[k];
            for (g, d) in grads[o..o + n_in * n_out].iter_mut().zip(dw.as_slice()) {
                *g += d;
            }
            for (j, g) in grads[o + n_in * n_out..o + n_in * n_out + n_out].iter_mut().enumerate() {
                *g += delta.column(j).sum();
            }
            let w = DMatrixView::from_slice(&self.params[o..o + n_in * n_out], n_in, n_out);
            delta = &delta * w.transpose();
        }
        delta
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Stack equal-length rows into a matrix.
pub fn rows_to_matrix<'a, I>(rows: I, width: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j])
}
