//! Synthetic data, the rate-distortion objective and the Adam training loop.

mod synth;

pub use synth::synth_dataset;

use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{build_pyramid, Model, ScalePyramid};
use crate::error::{precondition, shape, Error, Result};
use crate::nn::{Adam, Params};
use crate::pointcloud::Patch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    /// Patches per step.
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(lambda: f64, steps: usize, seed: u64) -> Self {
        Self { lambda, steps, lr: 5e-4, batch: 8, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `sum ||pred - target||^2 + lambda * rate_bits`, with the rate as total
/// bits of the patch.
pub fn rd_loss(
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
    rate_bits: f64,
    lambda: f64,
) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(shape("prediction and target differ in shape"));
    }
    let distortion: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(distortion + lambda * rate_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    /// Mean over the batch of `distortion + lambda * bits`.
    pub loss: f64,
    /// Mean summed squared error per patch.
    pub distortion: f64,
    /// Estimated bits per point from the prior on noisy latents.
    pub est_bpp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Pyramids for every patch of a dataset; built once per training run.
pub fn pyramids(model: &Model, data: &[Patch]) -> Result<Vec<ScalePyramid>> {
    use rayon::prelude::*;
    data.par_iter()
        .map(|p| build_pyramid(p.positions.view(), &model.cfg))
        .collect()
}

/// Optimizes the autoencoder and the prior jointly with Adam. Batches are
/// drawn uniformly with replacement. Deterministic given `cfg.seed`.
pub fn train(model: &mut Model, data: &[Patch], cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with(
    model: &mut Model,
    data: &[Patch],
    cfg: &TrainConfig,
    on_step: impl FnMut(&LogRow),
) -> Result<TrainLog> {
    let pyrs = pyramids(model, data)?;
    train_on_pyramids(model, data, &pyrs, cfg, on_step)
}

/// [`train_with`] on pyramids already built by [`pyramids`], so several
/// runs can share them.
pub fn train_on_pyramids(
    model: &mut Model,
    data: &[Patch],
    pyrs: &[ScalePyramid],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(precondition("training needs at least one patch"));
    }
    if pyrs.len() != data.len() {
        return Err(shape("one pyramid per patch is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.param_count(), cfg.lr);
    let mut flat = model.flatten();
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let mut grad = model.zeros_like();
        let (mut loss, mut distortion, mut bits, mut points) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..data.len());
            let colors = data[i].colors.view();
            let (out, cache) = model.forward_train(&pyrs[i], colors, &mut rng)?;
            model.backward_train(&pyrs[i], colors, &out, &cache, cfg.lambda, &mut grad)?;
            loss += out.distortion + cfg.lambda * out.bits;
            distortion += out.distortion;
            bits += out.bits;
            points += data[i].len();
        }
        let b = cfg.batch as f64;
        let row = LogRow {
            step,
            loss: loss / b,
            distortion: distortion / b,
            est_bpp: bits / points as f64,
        };
        if !row.loss.is_finite() {
            return Err(Error::Divergence { step, loss: row.loss });
        }
        let g: Vec<f64> = grad.flatten().into_iter().map(|v| v / b).collect();
        opt.step(&mut flat, &g);
        model.load_flat(&flat);
        log::debug!("step {step} loss {:.4} bpp {:.4}", row.loss, row.est_bpp);
        on_step(&row);
        log.rows.push(row);
    }
    Ok(log)
}
