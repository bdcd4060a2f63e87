//! Helpers shared by unit tests.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::Params;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform2(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(lo..hi))
}

pub fn uniform3(dim: (usize, usize, usize), lo: f64, hi: f64, seed: u64) -> Array3<f64> {
    let mut r = rng(seed);
    Array3::from_shape_fn(dim, |_| r.gen_range(lo..hi))
}

/// Largest per-tensor relative error `|g - fd| / max(|g|, |fd|, 1e-6)` (norms
/// over each named tensor) between `analytic` and central differences of `loss`.
pub fn fd_max_rel_error<P: Params + Clone>(
    params: &P,
    analytic: &P,
    step: f64,
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let flat = params.flatten();
    let grad = analytic.flatten();
    let mut spans = Vec::new();
    let mut at = 0;
    params.visit("", &mut |_, _, v| {
        spans.push(at..at + v.len());
        at += v.len();
    });
    let mut numeric = vec![0.0; flat.len()];
    let mut probe = params.clone();
    for i in 0..flat.len() {
        let mut f = flat.clone();
        f[i] = flat[i] + step;
        probe.load_flat(&f);
        let up = loss(&probe);
        f[i] = flat[i] - step;
        probe.load_flat(&f);
        let down = loss(&probe);
        numeric[i] = (up - down) / (2.0 * step);
    }
    spans
        .into_iter()
        .map(|span| {
            let diff: f64 = span.clone().map(|i| (grad[i] - numeric[i]).powi(2)).sum::<f64>().sqrt();
            let a: f64 = span.clone().map(|i| grad[i] * grad[i]).sum::<f64>().sqrt();
            let b: f64 = span.map(|i| numeric[i] * numeric[i]).sum::<f64>().sqrt();
            // Tensors whose true gradient vanishes (key biases under a
            // softmax) compare absolutely against the difference noise floor.
            diff / a.max(b).max(1e-6)
        })
        .fold(0.0, f64::max)
}
