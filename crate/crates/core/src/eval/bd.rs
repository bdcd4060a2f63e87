//! Bjøntegaard deltas from polynomial fits on log10 rate.

use nalgebra::{DMatrix, DVector};

use super::RDCurve;
use crate::error::{precondition, Error, Result};

/// BD-BR magnitudes above this are flagged as abnormal.
pub const ABNORMAL_BD_BR: f64 = 999.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quality {
    Y,
    Yuv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdMetrics {
    /// Percent rate change of `test` against `anchor` at equal quality.
    pub bd_br: f64,
    /// Mean dB gain of `test` over `anchor` at equal rate.
    pub bd_psnr: f64,
    /// `|bd_br| > 999%`.
    pub abnormal: bool,
}

/// Least-squares polynomial on centered, scaled abscissae.
struct Fit {
    coeffs: Vec<f64>,
    center: f64,
    scale: f64,
}

impl Fit {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        let degree = 3.min(n - 1);
        let center = x.iter().sum::<f64>() / n as f64;
        let spread = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
        let scale = if spread > 0.0 { spread } else { 1.0 };
        let a = DMatrix::from_fn(n, degree + 1, |i, j| ((x[i] - center) / scale).powi(j as i32));
        let b = DVector::from_column_slice(y);
        let coeffs = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Precondition(format!("polynomial fit failed: {e}")))?;
        Ok(Self { coeffs: coeffs.iter().copied().collect(), center, scale })
    }

    /// Integral over `[lo, hi]` in original units.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |x: f64| {
            let t = (x - self.center) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * t.powi(j as i32 + 1) / (j as f64 + 1.0))
                .sum::<f64>()
        };
        self.scale * (prim(hi) - prim(lo))
    }
}

fn series(c: &RDCurve, q: Quality) -> Result<(Vec<f64>, Vec<f64>)> {
    if c.points.len() < 2 {
        return Err(precondition(format!("curve '{}' needs at least 2 points", c.label)));
    }
    if c.points.iter().any(|p| p.bpp <= 0.0) {
        return Err(precondition(format!("curve '{}' has non-positive rates", c.label)));
    }
    let rate = c.points.iter().map(|p| p.bpp.log10()).collect();
    let quality = c
        .points
        .iter()
        .map(|p| match q {
            Quality::Y => p.psnr_y,
            Quality::Yuv => p.psnr_yuv,
        })
        .collect();
    Ok((rate, quality))
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(Error::DisjointRanges)
    }
}

/// Mean quality difference `test - anchor` over the shared log-rate range.
pub fn bd_psnr(anchor: &RDCurve, test: &RDCurve, q: Quality) -> Result<f64> {
    let (ra, qa) = series(anchor, q)?;
    let (rt, qt) = series(test, q)?;
    let (lo, hi) = overlap(&ra, &rt)?;
    let fa = Fit::new(&ra, &qa)?;
    let ft = Fit::new(&rt, &qt)?;
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

/// Percent rate difference `test` vs `anchor` over the shared quality range.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve, q: Quality) -> Result<f64> {
    let (ra, qa) = series(anchor, q)?;
    let (rt, qt) = series(test, q)?;
    let (lo, hi) = overlap(&qa, &qt)?;
    let fa = Fit::new(&qa, &ra)?;
    let ft = Fit::new(&qt, &rt)?;
    let avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

pub fn bd_metrics(anchor: &RDCurve, test: &RDCurve, q: Quality) -> Result<BdMetrics> {
    let bd_br = bd_rate(anchor, test, q)?;
    let bd_psnr = bd_psnr(anchor, test, q)?;
    Ok(BdMetrics { bd_br, bd_psnr, abnormal: bd_br.abs() > ABNORMAL_BD_BR })
}
