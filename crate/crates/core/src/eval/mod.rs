//! Quality and rate measurement, Bjøntegaard deltas and RD reports.

mod bd;
mod report;

pub use bd::{bd_metrics, bd_psnr, bd_rate, BdMetrics, Quality, ABNORMAL_BD_BR};
pub use report::{append_rd_point, read_rd_csv, rd_report, render_svg};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, shape, Result};

/// Reported when the error is exactly zero.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(precondition("empty signals"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

fn psnr_of_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_of_mse(mse(a, b)?, peak))
}

fn channel_mse(orig: ArrayView2<f64>, rec: ArrayView2<f64>) -> Result<[f64; 3]> {
    if orig.dim() != rec.dim() || orig.ncols() != 3 {
        return Err(shape("color matrices must both be [N, 3]"));
    }
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let a: Vec<f64> = orig.column(c).to_vec();
        let b: Vec<f64> = rec.column(c).to_vec();
        *slot = mse(&a, &b)?;
    }
    Ok(out)
}

/// PSNR of the first (luma) channel, peak 1.
pub fn psnr_y(orig: ArrayView2<f64>, rec: ArrayView2<f64>) -> Result<f64> {
    Ok(psnr_of_mse(channel_mse(orig, rec)?[0], 1.0))
}

/// Composite PSNR from `(6 MSE_Y + MSE_U + MSE_V) / 8`, peak 1.
pub fn psnr_yuv(orig: ArrayView2<f64>, rec: ArrayView2<f64>) -> Result<f64> {
    let [y, u, v] = channel_mse(orig, rec)?;
    Ok(psnr_of_mse((6.0 * y + u + v) / 8.0, 1.0))
}

/// Bits per point of a complete stream, headers included.
pub fn bpp(stream: &[u8], n_points: usize) -> Result<f64> {
    if n_points == 0 {
        return Err(precondition("bpp needs at least one point"));
    }
    Ok(8.0 * stream.len() as f64 / n_points as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr_y: f64,
    pub psnr_yuv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    pub label: String,
    /// Sorted by strictly increasing bpp.
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts `points` by bpp; rejects repeated rates and non-finite values.
    pub fn new(label: impl Into<String>, mut points: Vec<RDPoint>) -> Result<Self> {
        if points
            .iter()
            .any(|p| !(p.bpp.is_finite() && p.psnr_y.is_finite() && p.psnr_yuv.is_finite()))
        {
            return Err(precondition("RD points must be finite"));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[1].bpp <= w[0].bpp) {
            return Err(precondition("RD curve rates must be strictly increasing"));
        }
        Ok(Self { label: label.into(), points })
    }
}
