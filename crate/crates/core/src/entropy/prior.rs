//! Fully factorized learned prior: one monotone CDF per latent channel built
//! from a 1-3-3-1 cascade of non-negative affine maps with gated `tanh`
//! nonlinearities, squashed by a sigmoid.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

use crate::nn::{join, Params};

/// Probabilities are clamped from below before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

const WIDTHS: [usize; 4] = [1, 3, 3, 1];
const INIT_SCALE: f64 = 10.0;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    /// Stage `i` holds `[C, out_i, in_i]` raw matrices; the effective weight
    /// is their softplus.
    pub matrices: Vec<Array3<f64>>,
    /// `[C, out_i]`
    pub biases: Vec<Array2<f64>>,
    /// `[C, out_i]` for every stage but the last.
    pub factors: Vec<Array2<f64>>,
}

/// Per-evaluation activations, fixed maximum width 3.
#[derive(Clone, Copy, Default)]
struct Trace {
    /// Input to each stage.
    input: [[f64; 3]; 3],
    /// Pre-gate affine output of the gated stages.
    pre: [[f64; 3]; 2],
    logit: f64,
}

impl FactorizedPrior {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let stages = WIDTHS.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / stages as f64);
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for i in 0..stages {
            let (fin, fout) = (WIDTHS[i], WIDTHS[i + 1]);
            let init = (1.0 / scale / fout as f64).exp_m1().ln();
            matrices.push(Array3::from_elem((channels, fout, fin), init));
            biases.push(Array2::from_shape_fn((channels, fout), |_| rng.gen_range(-0.5..0.5)));
            if i + 1 < stages {
                factors.push(Array2::zeros((channels, fout)));
            }
        }
        Self { matrices, biases, factors }
    }

    pub fn channels(&self) -> usize {
        self.biases[0].nrows()
    }

    fn forward_trace(&self, ch: usize, x: f64) -> Trace {
        let mut t = Trace::default();
        let mut cur = [x, 0.0, 0.0];
        let stages = self.matrices.len();
        for s in 0..stages {
            let (fin, fout) = (WIDTHS[s], WIDTHS[s + 1]);
            t.input[s] = cur;
            let m = &self.matrices[s];
            let mut next = [0.0; 3];
            for o in 0..fout {
                let mut acc = self.biases[s][[ch, o]];
                for i in 0..fin {
                    acc += softplus(m[[ch, o, i]]) * cur[i];
                }
                next[o] = acc;
            }
            if s + 1 < stages {
                t.pre[s] = next;
                for o in 0..fout {
                    next[o] += self.factors[s][[ch, o]].tanh() * next[o].tanh();
                }
            }
            cur = next;
        }
        t.logit = cur[0];
        t
    }

    /// Logit of the cumulative distribution of channel `ch` at `x`.
    pub fn logit(&self, ch: usize, x: f64) -> f64 {
        self.forward_trace(ch, x).logit
    }

    pub fn cdf(&self, ch: usize, x: f64) -> f64 {
        sigmoid(self.logit(ch, x))
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grad`, returns
    /// `d(logit)/dx * dlogit`.
    fn backward_trace(&self, ch: usize, t: &Trace, dlogit: f64, grad: &mut Self) -> f64 {
        let stages = self.matrices.len();
        let mut dcur = [dlogit, 0.0, 0.0];
        for s in (0..stages).rev() {
            let (fin, fout) = (WIDTHS[s], WIDTHS[s + 1]);
            if s + 1 < stages {
                for o in 0..fout {
                    let a = self.factors[s][[ch, o]];
                    let th = t.pre[s][o].tanh();
                    grad.factors[s][[ch, o]] += dcur[o] * (1.0 - a.tanh().powi(2)) * th;
                    dcur[o] *= 1.0 + a.tanh() * (1.0 - th * th);
                }
            }
            let m = &self.matrices[s];
            let mut din = [0.0; 3];
            for o in 0..fout {
                grad.biases[s][[ch, o]] += dcur[o];
                for i in 0..fin {
                    let raw = m[[ch, o, i]];
                    grad.matrices[s][[ch, o, i]] += dcur[o] * t.input[s][i] * sigmoid(raw);
                    din[i] += dcur[o] * softplus(raw);
                }
            }
            dcur = din;
        }
        dcur[0]
    }

    /// Probability mass of the unit interval centered on `x`.
    pub fn likelihood(&self, ch: usize, x: f64) -> f64 {
        let lo = self.logit(ch, x - 0.5);
        let hi = self.logit(ch, x + 0.5);
        let sign = -(lo + hi).signum();
        let sign = if sign == 0.0 { -1.0 } else { sign };
        (sigmoid(sign * hi) - sigmoid(sign * lo)).abs()
    }

    /// Bits of one value and their gradient: accumulates parameter
    /// gradients scaled by `scale` into `grad` and returns `scale * dbits/dx`.
    fn bits_backward(&self, ch: usize, x: f64, scale: f64, grad: &mut Self) -> (f64, f64) {
        let lo = self.forward_trace(ch, x - 0.5);
        let hi = self.forward_trace(ch, x + 0.5);
        let sign = -(lo.logit + hi.logit).signum();
        let sign = if sign == 0.0 { -1.0 } else { sign };
        let (sh, sl) = (sigmoid(sign * hi.logit), sigmoid(sign * lo.logit));
        let diff = sh - sl;
        let p = diff.abs();
        let pc = p.max(LIKELIHOOD_FLOOR);
        let bits = -pc.log2();
        // Gradient passes through the floor unchanged.
        let dp = -scale / (pc * std::f64::consts::LN_2);
        let ddiff = dp * diff.signum();
        let dhi = ddiff * sign * sh * (1.0 - sh);
        let dlo = -ddiff * sign * sl * (1.0 - sl);
        let dx = self.backward_trace(ch, &hi, dhi, grad) + self.backward_trace(ch, &lo, dlo, grad);
        (bits, dx)
    }

    /// Total bits of `f_hat` (`[M, C]`, channel per column), accumulating
    /// `scale`-weighted gradients into `grad` and returning `scale * dbits/df_hat`.
    pub fn rate_backward(
        &self,
        f_hat: ArrayView2<f64>,
        scale: f64,
        grad: &mut Self,
    ) -> (f64, Array2<f64>) {
        let mut dx = Array2::zeros(f_hat.raw_dim());
        let mut bits = 0.0;
        for ((r, ch), &x) in f_hat.indexed_iter() {
            let (b, d) = self.bits_backward(ch, x, scale, grad);
            bits += b;
            dx[[r, ch]] = d;
        }
        (bits, dx)
    }
}

/// Estimated bits of `f_hat` under the prior: `sum -log2 max(p, floor)`.
pub fn rate_estimate(f_hat: ArrayView2<f64>, prior: &FactorizedPrior) -> f64 {
    f_hat
        .indexed_iter()
        .map(|((_, ch), &x)| -prior.likelihood(ch, x).max(LIKELIHOOD_FLOOR).log2())
        .sum()
}

impl Params for FactorizedPrior {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, m) in self.matrices.iter().enumerate() {
            f(&join(prefix, &format!("matrix{i}")), m.shape(), m.as_slice().unwrap());
        }
        for (i, b) in self.biases.iter().enumerate() {
            f(&join(prefix, &format!("bias{i}")), b.shape(), b.as_slice().unwrap());
        }
        for (i, a) in self.factors.iter().enumerate() {
            f(&join(prefix, &format!("factor{i}")), a.shape(), a.as_slice().unwrap());
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, m) in self.matrices.iter_mut().enumerate() {
            let shape = m.shape().to_vec();
            f(&join(prefix, &format!("matrix{i}")), &shape, m.as_slice_mut().unwrap());
        }
        for (i, b) in self.biases.iter_mut().enumerate() {
            let shape = b.shape().to_vec();
            f(&join(prefix, &format!("bias{i}")), &shape, b.as_slice_mut().unwrap());
        }
        for (i, a) in self.factors.iter_mut().enumerate() {
            let shape = a.shape().to_vec();
            f(&join(prefix, &format!("factor{i}")), &shape, a.as_slice_mut().unwrap());
        }
    }
}
