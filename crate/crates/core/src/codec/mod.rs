//! The multiscale attention autoencoder: FPS pyramid, downsampling and
//! zero-padding upsampling blocks, bottleneck maps and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::CodecConfig;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::attention::{Eca, EcaCache};
use crate::entropy::{quantize, FactorizedPrior, QuantMode};
use crate::error::{shape, Error, Result};
use crate::nn::{join, Linear, Params};
use crate::pointcloud::Patch;
use crate::sampling::{fps, knn, nearest, Neighborhood};

/// Positions of every scale, finest first, with the FPS selections linking
/// consecutive levels and the neighborhoods attention uses on each level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    pub levels: Vec<Array2<f64>>,
    /// `selections[s][j]` is the row of level `s` that became row `j` of
    /// level `s + 1`.
    pub selections: Vec<Vec<usize>>,
    /// KNN of every level but the coarsest against itself.
    pub neighborhoods: Vec<Neighborhood>,
}

impl ScalePyramid {
    pub fn num_scales(&self) -> usize {
        self.selections.len()
    }

    pub fn coarsest(&self) -> &Array2<f64> {
        self.levels.last().expect("pyramid has a base level")
    }
}

pub fn build_pyramid(p0: ArrayView2<f64>, cfg: &CodecConfig) -> Result<ScalePyramid> {
    if p0.ncols() != 3 {
        return Err(shape("pyramid positions must have 3 columns"));
    }
    cfg.validate_for(p0.nrows())?;
    let mut levels = vec![p0.to_owned()];
    let mut selections = Vec::new();
    let mut neighborhoods = Vec::new();
    for _ in 0..cfg.num_scales {
        let cur = levels.last().unwrap();
        neighborhoods.push(knn(cur.view(), cur.view(), cfg.k_neighbors)?);
        let sel = fps(cur.view(), cur.nrows() / cfg.sample_ratio)?;
        let next = cur.select(Axis(0), &sel);
        selections.push(sel);
        levels.push(next);
    }
    Ok(ScalePyramid { levels, selections, neighborhoods })
}

/// Places coarse feature rows at their fine-level indices; every other row
/// is zero.
pub fn zero_pad(coarse: ArrayView2<f64>, selection: &[usize], fine_rows: usize) -> Result<Array2<f64>> {
    if coarse.nrows() != selection.len() {
        return Err(shape("coarse features and selection disagree"));
    }
    let mut out = Array2::zeros((fine_rows, coarse.ncols()));
    for (row, &i) in coarse.rows().into_iter().zip(selection) {
        if i >= fine_rows {
            return Err(Error::Precondition("pyramid mismatch: selection out of range".into()));
        }
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Geometric form of [`zero_pad`]: each fine point takes the feature of a
/// coarse point at exactly its position, or zero. Kept as a cross-check.
pub fn zero_pad_by_search(
    coarse_pos: ArrayView2<f64>,
    coarse: ArrayView2<f64>,
    fine_pos: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let near = nearest(fine_pos, coarse_pos)?;
    let mut out = Array2::zeros((fine_pos.nrows(), coarse.ncols()));
    for (i, &j) in near.iter().enumerate() {
        if fine_pos.row(i) == coarse_pos.row(j) {
            out.row_mut(i).assign(&coarse.row(j));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: CodecConfig,
    /// Colors to hidden features.
    pub lift: Linear,
    pub down: Vec<Vec<Eca>>,
    pub to_latent: Linear,
    pub from_latent: Linear,
    /// `up[s]` refines level `s`, so decoding runs it from the last block down.
    pub up: Vec<Vec<Eca>>,
    pub head: Linear,
    pub prior: FactorizedPrior,
}

pub fn model_init(cfg: &CodecConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.channels;
    let block = |rng: &mut ChaCha8Rng| {
        (0..cfg.eca_layers_per_block)
            .map(|_| Eca::new(c, c, cfg.attn_dim, rng))
            .collect::<Vec<_>>()
    };
    let lift = Linear::new(3, c, true, &mut rng);
    let down = (0..cfg.num_scales).map(|_| block(&mut rng)).collect();
    let to_latent = Linear::new(c, cfg.latent_channels, true, &mut rng);
    let from_latent = Linear::new(cfg.latent_channels, c, true, &mut rng);
    let up = (0..cfg.num_scales).map(|_| block(&mut rng)).collect();
    let head = Linear::new(c, 3, true, &mut rng);
    let prior = FactorizedPrior::new(cfg.latent_channels, &mut rng);
    Ok(Model { cfg: cfg.clone(), lift, down, to_latent, from_latent, up, head, prior })
}

fn run_block(
    layers: &[Eca],
    mut f: Array2<f64>,
    nbh: &Neighborhood,
    caches: Option<&mut Vec<(Array2<f64>, EcaCache)>>,
) -> Result<Array2<f64>> {
    match caches {
        None => {
            for layer in layers {
                f = layer.forward(f.view(), nbh)?;
            }
        }
        Some(store) => {
            for layer in layers {
                let (out, cache) = layer.forward_cached(f.view(), nbh)?;
                store.push((f, cache));
                f = out;
            }
        }
    }
    Ok(f)
}

/// Pre-attention inputs of one upsampling block, for inspection.
#[derive(Debug, Clone)]
pub struct UpTrace {
    pub coarse: Array2<f64>,
    pub padded: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct TrainCache {
    down: Vec<Vec<(Array2<f64>, EcaCache)>>,
    bottleneck: Array2<f64>,
    latent_hat: Array2<f64>,
    up: Vec<Vec<(Array2<f64>, EcaCache)>>,
    head_in: Array2<f64>,
}

/// One training forward pass.
pub struct TrainOutput {
    pub reconstruction: Array2<f64>,
    pub distortion: f64,
    pub bits: f64,
}

impl Model {
    fn check_colors(&self, pyr: &ScalePyramid, colors: ArrayView2<f64>) -> Result<()> {
        if colors.dim() != (pyr.levels[0].nrows(), 3) {
            return Err(shape("colors must be [N, 3] matching the pyramid"));
        }
        if pyr.num_scales() != self.cfg.num_scales {
            return Err(Error::Precondition("pyramid depth differs from the model".into()));
        }
        Ok(())
    }

    fn encode_inner(
        &self,
        pyr: &ScalePyramid,
        colors: ArrayView2<f64>,
        mut caches: Option<&mut Vec<Vec<(Array2<f64>, EcaCache)>>>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_colors(pyr, colors)?;
        let mut f = self.lift.forward(colors);
        for (s, layers) in self.down.iter().enumerate() {
            let store = caches.as_deref_mut().map(|c| {
                c.push(Vec::new());
                c.last_mut().unwrap()
            });
            f = run_block(layers, f, &pyr.neighborhoods[s], store)?;
            f = f.select(Axis(0), &pyr.selections[s]);
        }
        let latent = self.to_latent.forward(f.view());
        Ok((latent, f))
    }

    /// Continuous latent `[M, latent_channels]` of YUV `colors` on `pyr`.
    pub fn encode_pyramid(&self, pyr: &ScalePyramid, colors: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode_inner(pyr, colors, None)?.0)
    }

    pub fn encode(&self, patch: &Patch) -> Result<Array2<f64>> {
        let pyr = build_pyramid(patch.positions.view(), &self.cfg)?;
        self.encode_pyramid(&pyr, patch.colors.view())
    }

    fn decode_inner(
        &self,
        latent: ArrayView2<f64>,
        pyr: &ScalePyramid,
        mut traces: Option<&mut Vec<UpTrace>>,
        mut caches: Option<&mut Vec<Vec<(Array2<f64>, EcaCache)>>>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if pyr.num_scales() != self.cfg.num_scales {
            return Err(Error::Precondition("pyramid depth differs from the model".into()));
        }
        if latent.dim() != (pyr.coarsest().nrows(), self.cfg.latent_channels) {
            return Err(shape(format!(
                "latent {:?} does not match the coarsest level of {} points",
                latent.dim(),
                pyr.coarsest().nrows()
            )));
        }
        let mut f = self.from_latent.forward(latent);
        for s in (0..self.cfg.num_scales).rev() {
            let padded = zero_pad(f.view(), &pyr.selections[s], pyr.levels[s].nrows())?;
            if let Some(t) = traces.as_deref_mut() {
                t.push(UpTrace { coarse: f.clone(), padded: padded.clone() });
            }
            let store = caches.as_deref_mut().map(|c| {
                c.push(Vec::new());
                c.last_mut().unwrap()
            });
            f = run_block(&self.up[s], padded, &pyr.neighborhoods[s], store)?;
        }
        Ok((self.head.forward(f.view()), f))
    }

    /// Unclipped YUV reconstruction `[N, 3]` from a latent on `pyr`.
    pub fn decode(&self, latent: ArrayView2<f64>, pyr: &ScalePyramid) -> Result<Array2<f64>> {
        Ok(self.decode_inner(latent, pyr, None, None)?.0)
    }

    /// Like [`Model::decode`], also returning the inputs of every
    /// upsampling block in decoding order.
    pub fn decode_traced(
        &self,
        latent: ArrayView2<f64>,
        pyr: &ScalePyramid,
    ) -> Result<(Array2<f64>, Vec<UpTrace>)> {
        let mut traces = Vec::new();
        let out = self.decode_inner(latent, pyr, Some(&mut traces), None)?.0;
        Ok((out, traces))
    }

    /// Forward pass with training noise. The rate term is reported in bits.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        pyr: &ScalePyramid,
        colors: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(TrainOutput, TrainCache)> {
        let mut down = Vec::new();
        let (latent, bottleneck) = self.encode_inner(pyr, colors, Some(&mut down))?;
        let latent_hat = quantize(&latent, QuantMode::Train, rng);
        let bits = crate::entropy::rate_estimate(latent_hat.view(), &self.prior);
        let mut up = Vec::new();
        let (reconstruction, head_in) = self.decode_inner(latent_hat.view(), pyr, None, Some(&mut up))?;
        let distortion = (&reconstruction - &colors).mapv(|v| v * v).sum();
        Ok((
            TrainOutput { reconstruction, distortion, bits },
            TrainCache { down, bottleneck, latent_hat, up, head_in },
        ))
    }

    /// Accumulates the gradient of `distortion + lambda * bits` into `grad`.
    pub fn backward_train(
        &self,
        pyr: &ScalePyramid,
        colors: ArrayView2<f64>,
        out: &TrainOutput,
        cache: &TrainCache,
        lambda: f64,
        grad: &mut Model,
    ) -> Result<()> {
        let dy = 2.0 * (&out.reconstruction - &colors);
        let mut df = self.head.backward(cache.head_in.view(), dy.view(), &mut grad.head);
        // Decoding ran level S-1 first, so its cache sits at the front.
        for s in 0..self.cfg.num_scales {
            let block = self.cfg.num_scales - 1 - s;
            let nbh = &pyr.neighborhoods[s];
            for (l, (input, c)) in cache.up[block].iter().enumerate().rev() {
                df = self.up[s][l].backward(input.view(), nbh, c, df.view(), &mut grad.up[s][l]);
            }
            df = df.select(Axis(0), &pyr.selections[s]);
        }
        let (_, drate) = self.prior.rate_backward(cache.latent_hat.view(), lambda, &mut grad.prior);
        let dlatent_hat = self
            .from_latent
            .backward(cache.latent_hat.view(), df.view(), &mut grad.from_latent)
            + drate;
        // Additive noise passes gradients straight through.
        let mut df = self
            .to_latent
            .backward(cache.bottleneck.view(), dlatent_hat.view(), &mut grad.to_latent);
        for s in (0..self.cfg.num_scales).rev() {
            let mut scattered = Array2::zeros((pyr.levels[s].nrows(), df.ncols()));
            for (row, &i) in df.rows().into_iter().zip(&pyr.selections[s]) {
                scattered.row_mut(i).assign(&row);
            }
            df = scattered;
            let nbh = &pyr.neighborhoods[s];
            for (l, (input, c)) in cache.down[s].iter().enumerate().rev() {
                df = self.down[s][l].backward(input.view(), nbh, c, df.view(), &mut grad.down[s][l]);
            }
        }
        self.lift.accumulate(colors, df.view(), &mut grad.lift);
        Ok(())
    }

    /// First 8 bytes (little-endian) of SHA-256 over the JSON config and all
    /// parameters as 32-bit floats. Identifies a model in bitstreams.
    pub fn config_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.cfg).expect("config serializes"));
        self.visit("", &mut |name, shape, v| {
            h.update(name.as_bytes());
            for &d in shape {
                h.update((d as u64).to_le_bytes());
            }
            for &x in v {
                h.update((x as f32).to_le_bytes());
            }
        });
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

impl Params for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.lift.visit(&join(prefix, "lift"), f);
        for (s, block) in self.down.iter().enumerate() {
            for (l, layer) in block.iter().enumerate() {
                layer.visit(&join(prefix, &format!("down{s}.eca{l}")), f);
            }
        }
        self.to_latent.visit(&join(prefix, "to_latent"), f);
        self.from_latent.visit(&join(prefix, "from_latent"), f);
        for (s, block) in self.up.iter().enumerate() {
            for (l, layer) in block.iter().enumerate() {
                layer.visit(&join(prefix, &format!("up{s}.eca{l}")), f);
            }
        }
        self.head.visit(&join(prefix, "head"), f);
        self.prior.visit(&join(prefix, "prior"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.lift.visit_mut(&join(prefix, "lift"), f);
        for (s, block) in self.down.iter_mut().enumerate() {
            for (l, layer) in block.iter_mut().enumerate() {
                layer.visit_mut(&join(prefix, &format!("down{s}.eca{l}")), f);
            }
        }
        self.to_latent.visit_mut(&join(prefix, "to_latent"), f);
        self.from_latent.visit_mut(&join(prefix, "from_latent"), f);
        for (s, block) in self.up.iter_mut().enumerate() {
            for (l, layer) in block.iter_mut().enumerate() {
                layer.visit_mut(&join(prefix, &format!("up{s}.eca{l}")), f);
            }
        }
        self.head.visit_mut(&join(prefix, "head"), f);
        self.prior.visit_mut(&join(prefix, "prior"), f);
    }
}

#[cfg(test)]
mod tests;
