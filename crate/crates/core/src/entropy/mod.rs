//! Quantization, the learned factorized prior, range coding and the
//! bitstream container.

mod bitstream;
mod coder;
mod prior;

pub use bitstream::{pack_bitstream, unpack_bitstream, PatchHeader, StreamHeader, MAGIC, VERSION};
pub use coder::{ac_decode, ac_encode, CodingTables, FREQ_BITS};
pub use prior::{rate_estimate, FactorizedPrior, LIKELIHOOD_FLOOR};

use ndarray::{Array, Dimension};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise in `[-0.5, 0.5)`.
    Train,
    /// Round half away from zero.
    Eval,
}

pub fn quantize<D: Dimension, R: Rng + ?Sized>(
    f: &Array<f64, D>,
    mode: QuantMode,
    rng: &mut R,
) -> Array<f64, D> {
    match mode {
        QuantMode::Eval => f.mapv(f64::round),
        QuantMode::Train => f.mapv(|v| v + rng.gen_range(-0.5..0.5)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rng, uniform2};
    use ndarray::{array, Array1};

    #[test]
    fn eval_rounds_half_away_from_zero() {
        let q = quantize(&array![0.4, -1.5, 2.5, -0.4, 0.5], QuantMode::Eval, &mut rng(0));
        assert_eq!(q, array![0.0, -2.0, 3.0, -0.0, 1.0]);
    }

    #[test]
    fn train_noise_is_bounded() {
        let f = uniform2(100, 16, -50.0, 50.0, 1);
        let q = quantize(&f, QuantMode::Train, &mut rng(2));
        assert!((&q - &f).iter().all(|d| d.abs() <= 0.5));
    }

    #[test]
    fn train_noise_has_zero_mean() {
        let n = 1_000_000;
        let q = quantize(&Array1::zeros(n), QuantMode::Train, &mut rng(3));
        let mean = q.sum() / n as f64;
        // Uniform on a unit interval has variance 1/12.
        let sigma = (1.0 / 12.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "{mean}");
    }
}
