//! Dense layers with hand-written backward passes, a parameter visitor and
//! the Adam optimizer.
//!
//! Gradients live in a structure of the same type as the parameters they
//! belong to (`grad: &mut Linear` next to `&self: Linear`), which keeps the
//! flattening order of parameters, gradients and optimizer moments aligned.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

/// Visits every learned tensor in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, _, v| v.iter_mut().for_each(|x| *x = value));
    }

    /// A same-shaped copy with every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Rounds every parameter to the nearest 32-bit float.
    fn round_to_f32(&mut self) {
        self.visit_mut("", &mut |_, _, v| {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64)
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x W^T + b` on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    /// Kaiming-uniform weights with unit gain, bound `sqrt(3 / in)`, so a
    /// layer preserves the variance of its input. Biases use `1 / sqrt(in)`.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let w_bound = (3.0 / input as f64).sqrt();
        let b_bound = 1.0 / (input as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| rng.gen_range(-w_bound..w_bound));
        let bias = bias.then(|| Array1::from_shape_fn(output, |_| rng.gen_range(-b_bound..b_bound)));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients only.
    pub fn accumulate(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) {
        ndarray::linalg::general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.weight);
        if let Some(gb) = &mut grad.bias {
            for row in dy.rows() {
                gb.zip_mut_with(&row, |g, &d| *g += d);
            }
        }
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.weight)
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.shape(),
            self.weight.as_slice().expect("standard layout"),
        );
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b.shape(), b.as_slice().unwrap());
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.weight.shape().to_vec();
        f(
            &join(prefix, "weight"),
            &shape,
            self.weight.as_slice_mut().expect("standard layout"),
        );
        if let Some(b) = &mut self.bias {
            let shape = b.shape().to_vec();
            f(&join(prefix, "bias"), &shape, b.as_slice_mut().unwrap());
        }
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct MlpCache {
    hidden: Array2<f64>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(input, hidden, true, rng),
            out: Linear::new(hidden, output, true, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut h = self.hidden.forward(x);
        h.mapv_inplace(|v| v.max(0.0));
        let y = self.out.forward(h.view());
        (y, MlpCache { hidden: h })
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &MlpCache,
        dy: ArrayView2<f64>,
        grad: &mut Mlp,
    ) -> Array2<f64> {
        let mut dh = self.out.backward(cache.hidden.view(), dy, &mut grad.out);
        ndarray::Zip::from(&mut dh)
            .and(&cache.hidden)
            .for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
        self.hidden.backward(x, dh.view(), &mut grad.hidden)
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Adam with bias correction over a flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
