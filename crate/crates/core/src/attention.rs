//! Internal self-attention over relative positions, the position embedding
//! multiplier/bias it feeds, and external cross attention between color
//! features and neighborhood geometry.
//!
//! Tensors shaped `[N, K, C]` are stored row-major as `[N * K, C]` matrices
//! internally so the learned maps reduce to plain matrix products.
//!
//! External cross attention normalizes its scores with a softmax over the
//! `K` neighbors, independently for every channel:
//!
//! ```text
//! S   = softmax_K((psi_k(F)[nbr] - psi_q(X)) * Pem + Peb)
//! out = W_out * sum_K((psi_v(F)[nbr] + Peb) * S)
//! ```

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, CowArray, Ix2};
use rand::Rng;

use crate::error::{precondition, shape, Result};
use crate::nn::{join, Linear, Mlp, MlpCache, Params};
use crate::sampling::{group, knn, Neighborhood};

/// Views an `[N, K, C]` tensor as `[N * K, C]`.
fn as_rows(x: &Array3<f64>) -> CowArray<'_, f64, Ix2> {
    let (n, k, c) = x.dim();
    if x.is_standard_layout() {
        x.view().into_shape((n * k, c)).expect("standard layout").into()
    } else {
        let owned = x.as_standard_layout().into_owned();
        owned.into_shape((n * k, c)).expect("standard layout").into()
    }
}

fn to_tensor(x: Array2<f64>, n: usize, k: usize) -> Array3<f64> {
    let c = x.ncols();
    x.into_shape((n, k, c)).expect("row count is n * k")
}

/// Scaled dot-product self-attention among the `K` relative positions of
/// each neighborhood. Single head; the value map has no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Isa {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

pub struct IsaCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// `[N * K, K]` attention weights.
    attn: Array2<f64>,
}

impl Isa {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(3, dim, true, rng),
            key: Linear::new(3, dim, true, rng),
            value: Linear::new(3, dim, false, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    /// `x` is `[N * K, 3]`, attention runs within each group of `k` rows.
    pub fn forward_cached(&self, x: ArrayView2<f64>, k: usize) -> (Array2<f64>, IsaCache) {
        let rows = x.nrows();
        let d = self.dim();
        let q = self.query.forward(x);
        let kk = self.key.forward(x);
        let v = self.value.forward(x);
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = Array2::<f64>::zeros((rows, k));
        let mut out = Array2::<f64>::zeros((rows, d));
        {
            let (qs, ks, vs) = (q.as_slice().unwrap(), kk.as_slice().unwrap(), v.as_slice().unwrap());
            let a = attn.as_slice_mut().unwrap();
            let o = out.as_slice_mut().unwrap();
            for base in (0..rows).step_by(k) {
                let span = base * d..(base + k) * d;
                let (qg, kg, vg) = (&qs[span.clone()], &ks[span.clone()], &vs[span.clone()]);
                let og = &mut o[span];
                let ag = &mut a[base * k..(base + k) * k];
                for (i, (qi, oi)) in qg.chunks_exact(d).zip(og.chunks_exact_mut(d)).enumerate() {
                    let arow = &mut ag[i * k..(i + 1) * k];
                    let mut max = f64::NEG_INFINITY;
                    for (w, kj) in arow.iter_mut().zip(kg.chunks_exact(d)) {
                        let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                        *w = s;
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for w in arow.iter_mut() {
                        *w = (*w - max).exp();
                        sum += *w;
                    }
                    let inv = 1.0 / sum;
                    for (w, vj) in arow.iter_mut().zip(vg.chunks_exact(d)) {
                        *w *= inv;
                        for (acc, &val) in oi.iter_mut().zip(vj) {
                            *acc += *w * val;
                        }
                    }
                }
            }
        }
        (
            out,
            IsaCache {
                q,
                k: kk,
                v,
                attn,
            },
        )
    }

    /// Parameter gradients only; the geometry input is not learned.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        k: usize,
        cache: &IsaCache,
        dout: ArrayView2<f64>,
        grad: &mut Isa,
    ) {
        let rows = x.nrows();
        let d = self.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = Array2::<f64>::zeros((rows, d));
        let mut dk = Array2::<f64>::zeros((rows, d));
        let mut dv = Array2::<f64>::zeros((rows, d));
        let dout = dout.as_standard_layout();
        {
            let qs = cache.q.as_slice().unwrap();
            let ks = cache.k.as_slice().unwrap();
            let vs = cache.v.as_slice().unwrap();
            let a = cache.attn.as_slice().unwrap();
            let dos = dout.as_slice().unwrap();
            let (dqs, dks, dvs) = (
                dq.as_slice_mut().unwrap(),
                dk.as_slice_mut().unwrap(),
                dv.as_slice_mut().unwrap(),
            );
            let mut da = vec![0.0; k];
            for base in (0..rows).step_by(k) {
                let span = base * d..(base + k) * d;
                let (qg, kg, vg) = (&qs[span.clone()], &ks[span.clone()], &vs[span.clone()]);
                let dog = &dos[span.clone()];
                let dqg = &mut dqs[span.clone()];
                let dkg = &mut dks[span.clone()];
                let dvg = &mut dvs[span];
                let ag = &a[base * k..(base + k) * k];
                for i in 0..k {
                    let arow = &ag[i * k..(i + 1) * k];
                    let doi = &dog[i * d..(i + 1) * d];
                    let mut dot = 0.0;
                    for (j, (vj, dvj)) in vg.chunks_exact(d).zip(dvg.chunks_exact_mut(d)).enumerate() {
                        let w = arow[j];
                        let mut s = 0.0;
                        for ((dv, &v), &g) in dvj.iter_mut().zip(vj).zip(doi) {
                            *dv += w * g;
                            s += g * v;
                        }
                        da[j] = s;
                        dot += w * s;
                    }
                    let qi = &qg[i * d..(i + 1) * d];
                    let dqi = &mut dqg[i * d..(i + 1) * d];
                    for (j, (kj, dkj)) in kg.chunks_exact(d).zip(dkg.chunks_exact_mut(d)).enumerate() {
                        let ds = arow[j] * (da[j] - dot) * scale;
                        for (((dq, dk), &kv), &qv) in dqi.iter_mut().zip(dkj.iter_mut()).zip(kj).zip(qi) {
                            *dq += ds * kv;
                            *dk += ds * qv;
                        }
                    }
                }
            }
        }
        self.query.accumulate(x, dq.view(), &mut grad.query);
        self.key.accumulate(x, dk.view(), &mut grad.key);
        self.value.accumulate(x, dv.view(), &mut grad.value);
    }
}

impl Params for Isa {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
    }
}

/// Self-attention over each point's `K` relative positions.
/// `x` is `[N, K, 3]`, the result `[N, K, d]`.
pub fn isa_forward(x: &Array3<f64>, p: &Isa) -> Array3<f64> {
    let (n, k, _) = x.dim();
    to_tensor(p.forward_cached(as_rows(x).view(), k).0, n, k)
}

/// Two independent attention + MLP branches producing the multiplicative
/// (`pem`) and additive (`peb`) position embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEmbed {
    pub isa_pem: Isa,
    pub isa_peb: Isa,
    pub mlp_pem: Mlp,
    pub mlp_peb: Mlp,
}

pub struct PosEmbedCache {
    pem_attn: (Array2<f64>, IsaCache),
    peb_attn: (Array2<f64>, IsaCache),
    pem_mlp: MlpCache,
    peb_mlp: MlpCache,
}

impl PosEmbed {
    pub fn new<R: Rng + ?Sized>(dim: usize, channels: usize, rng: &mut R) -> Self {
        Self {
            isa_pem: Isa::new(dim, rng),
            isa_peb: Isa::new(dim, rng),
            mlp_pem: Mlp::new(dim, dim, channels, rng),
            mlp_peb: Mlp::new(dim, dim, channels, rng),
        }
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        k: usize,
    ) -> (Array2<f64>, Array2<f64>, PosEmbedCache) {
        let pem_attn = self.isa_pem.forward_cached(x, k);
        let peb_attn = self.isa_peb.forward_cached(x, k);
        let (pem, pem_mlp) = self.mlp_pem.forward_cached(pem_attn.0.view());
        let (peb, peb_mlp) = self.mlp_peb.forward_cached(peb_attn.0.view());
        (
            pem,
            peb,
            PosEmbedCache {
                pem_attn,
                peb_attn,
                pem_mlp,
                peb_mlp,
            },
        )
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        k: usize,
        cache: &PosEmbedCache,
        dpem: ArrayView2<f64>,
        dpeb: ArrayView2<f64>,
        grad: &mut PosEmbed,
    ) {
        let d_attn = self.mlp_pem.backward(
            cache.pem_attn.0.view(),
            &cache.pem_mlp,
            dpem,
            &mut grad.mlp_pem,
        );
        self.isa_pem
            .backward(x, k, &cache.pem_attn.1, d_attn.view(), &mut grad.isa_pem);
        let d_attn = self.mlp_peb.backward(
            cache.peb_attn.0.view(),
            &cache.peb_mlp,
            dpeb,
            &mut grad.mlp_peb,
        );
        self.isa_peb
            .backward(x, k, &cache.peb_attn.1, d_attn.view(), &mut grad.isa_peb);
    }
}

impl Params for PosEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.isa_pem.visit(&join(prefix, "isa_pem"), f);
        self.isa_peb.visit(&join(prefix, "isa_peb"), f);
        self.mlp_pem.visit(&join(prefix, "mlp_pem"), f);
        self.mlp_peb.visit(&join(prefix, "mlp_peb"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.isa_pem.visit_mut(&join(prefix, "isa_pem"), f);
        self.isa_peb.visit_mut(&join(prefix, "isa_peb"), f);
        self.mlp_pem.visit_mut(&join(prefix, "mlp_pem"), f);
        self.mlp_peb.visit_mut(&join(prefix, "mlp_peb"), f);
    }
}

/// Position embeddings for `[N, K, 3]` relative positions, each `[N, K, C]`.
pub fn position_embed(x: &Array3<f64>, p: &PosEmbed) -> (Array3<f64>, Array3<f64>) {
    let (n, k, _) = x.dim();
    let (pem, peb, _) = p.forward_cached(as_rows(x).view(), k);
    (to_tensor(pem, n, k), to_tensor(peb, n, k))
}

/// External cross attention layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Eca {
    /// Relative positions to channels.
    pub psi_q: Linear,
    pub psi_k: Linear,
    /// Value path, no bias.
    pub psi_v: Linear,
    pub pos: PosEmbed,
    /// Projection after aggregation, no bias.
    pub out: Linear,
}

pub struct EcaCache {
    kf: Array2<f64>,
    vf: Array2<f64>,
    qx: Array2<f64>,
    pem: Array2<f64>,
    peb: Array2<f64>,
    pos: PosEmbedCache,
    /// `[N * K, C]` softmax scores.
    scores: Array2<f64>,
    agg: Array2<f64>,
}

impl EcaCache {
    /// Scores as `[N, K, C]`; sums over `K` are one.
    pub fn scores(&self, k: usize) -> ArrayView3<'_, f64> {
        let (rows, c) = self.scores.dim();
        self.scores
            .view()
            .into_shape((rows / k, k, c))
            .expect("rows are a multiple of k")
    }
}

impl Eca {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        channels: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            psi_q: Linear::new(3, channels, true, rng),
            psi_k: Linear::new(in_channels, channels, true, rng),
            psi_v: Linear::new(in_channels, channels, false, rng),
            pos: PosEmbed::new(attn_dim, channels, rng),
            out: Linear::new(channels, channels, false, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.psi_k.input_dim()
    }

    pub fn channels(&self) -> usize {
        self.psi_k.output_dim()
    }

    fn check(&self, features: &ArrayView2<f64>, nbh: &Neighborhood) -> Result<()> {
        if features.ncols() != self.in_channels() {
            return Err(shape(format!(
                "ECA expects {} input channels, got {}",
                self.in_channels(),
                features.ncols()
            )));
        }
        if let Some(&bad) = nbh.indices.iter().find(|&&i| i >= features.nrows()) {
            return Err(shape(format!(
                "neighbor index {bad} out of range for {} feature rows",
                features.nrows()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: ArrayView2<f64>, nbh: &Neighborhood) -> Result<Array2<f64>> {
        Ok(self.forward_cached(features, nbh)?.0)
    }

    /// `features` holds one row per reference point indexed by `nbh`.
    pub fn forward_cached(
        &self,
        features: ArrayView2<f64>,
        nbh: &Neighborhood,
    ) -> Result<(Array2<f64>, EcaCache)> {
        self.check(&features, nbh)?;
        let (n, k) = nbh.indices.dim();
        let c = self.channels();
        let x = as_rows(&nbh.rel_pos);
        let x = x.view();
        let kf = self.psi_k.forward(features);
        let vf = self.psi_v.forward(features);
        let qx = self.psi_q.forward(x);
        let (pem, peb, pos) = self.pos.forward_cached(x, k);
        let mut scores = Array2::<f64>::zeros((n * k, c));
        let mut agg = Array2::<f64>::zeros((n, c));
        {
            let (kfs, vfs, qxs) = (kf.as_slice().unwrap(), vf.as_slice().unwrap(), qx.as_slice().unwrap());
            let (pems, pebs) = (pem.as_slice().unwrap(), peb.as_slice().unwrap());
            let ss = scores.as_slice_mut().unwrap();
            let aggs = agg.as_slice_mut().unwrap();
            let idx = nbh.indices.as_slice().expect("standard layout");
            for g in 0..n {
                for j in 0..k {
                    let r = g * k + j;
                    let src = idx[r];
                    for ch in 0..c {
                        let at = r * c + ch;
                        ss[at] = (kfs[src * c + ch] - qxs[at]) * pems[at] + pebs[at];
                    }
                }
                for ch in 0..c {
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..k {
                        max = max.max(ss[(g * k + j) * c + ch]);
                    }
                    let mut sum = 0.0;
                    for j in 0..k {
                        let at = (g * k + j) * c + ch;
                        ss[at] = (ss[at] - max).exp();
                        sum += ss[at];
                    }
                    let mut acc = 0.0;
                    for j in 0..k {
                        let r = g * k + j;
                        let at = r * c + ch;
                        ss[at] /= sum;
                        acc += (vfs[idx[r] * c + ch] + pebs[at]) * ss[at];
                    }
                    aggs[g * c + ch] = acc;
                }
            }
        }
        let out = self.out.forward(agg.view());
        Ok((
            out,
            EcaCache {
                kf,
                vf,
                qx,
                pem,
                peb,
                pos,
                scores,
                agg,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dfeatures`.
    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        nbh: &Neighborhood,
        cache: &EcaCache,
        dout: ArrayView2<f64>,
        grad: &mut Eca,
    ) -> Array2<f64> {
        let (n, k) = nbh.indices.dim();
        let c = self.channels();
        let rows_in = features.nrows();
        let x = as_rows(&nbh.rel_pos);
        let x = x.view();
        let dagg = self.out.backward(cache.agg.view(), dout, &mut grad.out);
        let mut dkf = Array2::<f64>::zeros((rows_in, c));
        let mut dvf = Array2::<f64>::zeros((rows_in, c));
        let mut dqx = Array2::<f64>::zeros((n * k, c));
        let mut dpem = Array2::<f64>::zeros((n * k, c));
        let mut dpeb = Array2::<f64>::zeros((n * k, c));
        {
            let kfs = cache.kf.as_slice().unwrap();
            let vfs = cache.vf.as_slice().unwrap();
            let qxs = cache.qx.as_slice().unwrap();
            let pems = cache.pem.as_slice().unwrap();
            let pebs = cache.peb.as_slice().unwrap();
            let ss = cache.scores.as_slice().unwrap();
            let dagg = dagg.as_slice().unwrap();
            let idx = nbh.indices.as_slice().unwrap();
            let dkfs = dkf.as_slice_mut().unwrap();
            let dvfs = dvf.as_slice_mut().unwrap();
            let dqxs = dqx.as_slice_mut().unwrap();
            let dpems = dpem.as_slice_mut().unwrap();
            let dpebs = dpeb.as_slice_mut().unwrap();
            let mut dscore = vec![0.0; k];
            for g in 0..n {
                for ch in 0..c {
                    let da = dagg[g * c + ch];
                    let mut dot = 0.0;
                    for j in 0..k {
                        let r = g * k + j;
                        let at = r * c + ch;
                        let src = idx[r];
                        let s = ss[at];
                        let value = vfs[src * c + ch] + pebs[at];
                        dscore[j] = da * value;
                        dot += s * dscore[j];
                        dvfs[src * c + ch] += da * s;
                        dpebs[at] += da * s;
                    }
                    for j in 0..k {
                        let r = g * k + j;
                        let at = r * c + ch;
                        let src = idx[r];
                        let dl = ss[at] * (dscore[j] - dot);
                        let pem = pems[at];
                        dkfs[src * c + ch] += dl * pem;
                        dqxs[at] = -dl * pem;
                        dpems[at] = dl * (kfs[src * c + ch] - qxs[at]);
                        dpebs[at] += dl;
                    }
                }
            }
        }
        self.psi_q.accumulate(x, dqx.view(), &mut grad.psi_q);
        self.pos
            .backward(x, k, &cache.pos, dpem.view(), dpeb.view(), &mut grad.pos);
        let mut dfeat = self.psi_k.backward(features, dkf.view(), &mut grad.psi_k);
        dfeat += &self.psi_v.backward(features, dvf.view(), &mut grad.psi_v);
        dfeat
    }
}

impl Params for Eca {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.psi_q.visit(&join(prefix, "psi_q"), f);
        self.psi_k.visit(&join(prefix, "psi_k"), f);
        self.psi_v.visit(&join(prefix, "psi_v"), f);
        self.pos.visit(&join(prefix, "pos"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.psi_q.visit_mut(&join(prefix, "psi_q"), f);
        self.psi_k.visit_mut(&join(prefix, "psi_k"), f);
        self.psi_v.visit_mut(&join(prefix, "psi_v"), f);
        self.pos.visit_mut(&join(prefix, "pos"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Cross attention on already-gathered neighbor features.
/// `f_nbr` is `[N, K, C_in]`, `x` the matching `[N, K, 3]` relative
/// positions; returns `[N, C]`.
pub fn eca_forward(f_nbr: &Array3<f64>, x: &Array3<f64>, p: &Eca) -> Result<Array2<f64>> {
    let (n, k, c_in) = f_nbr.dim();
    if x.dim() != (n, k, 3) {
        return Err(shape("neighbor features and relative positions disagree"));
    }
    if c_in != p.in_channels() {
        return Err(shape("unexpected input channel count"));
    }
    let c = p.channels();
    let rows = as_rows(f_nbr);
    let rows = rows.view();
    let kf = p.psi_k.forward(rows);
    let vf = p.psi_v.forward(rows);
    let qx = p.psi_q.forward(as_rows(x).view());
    let (pem, peb, _) = p.pos.forward_cached(as_rows(x).view(), k);
    let logits = (&kf - &qx) * &pem + &peb;
    let mut agg = Array2::<f64>::zeros((n, c));
    for g in 0..n {
        for ch in 0..c {
            let max = (0..k)
                .map(|j| logits[[g * k + j, ch]])
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = (0..k).map(|j| (logits[[g * k + j, ch]] - max).exp()).collect();
            let sum: f64 = w.iter().sum();
            agg[[g, ch]] = (0..k)
                .map(|j| (vf[[g * k + j, ch]] + peb[[g * k + j, ch]]) * w[j] / sum)
                .sum();
        }
    }
    Ok(p.out.forward(agg.view()))
}

/// KNN grouping over `positions` followed by cross attention.
pub fn eca_layer(
    positions: ArrayView2<f64>,
    features: ArrayView2<f64>,
    k: usize,
    p: &Eca,
) -> Result<Array2<f64>> {
    if positions.nrows() < k {
        return Err(precondition(format!(
            "eca_layer needs at least k = {k} points, got {}",
            positions.nrows()
        )));
    }
    if positions.nrows() != features.nrows() {
        return Err(shape("positions and features disagree in row count"));
    }
    let nbh = knn(positions, positions, k)?;
    let f_nbr = group(features, nbh.indices.view())?;
    eca_forward(&f_nbr, &nbh.rel_pos, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_max_rel_error, rng, uniform2, uniform3};
    use ndarray::{s, Axis};
    use rand::seq::SliceRandom;

    fn apply(lin: &Linear, x: &[f64]) -> Vec<f64> {
        (0..lin.output_dim())
            .map(|o| {
                let mut acc = lin.bias.as_ref().map_or(0.0, |b| b[o]);
                for (i, &xi) in x.iter().enumerate() {
                    acc += lin.weight[[o, i]] * xi;
                }
                acc
            })
            .collect()
    }

    fn mlp_loop(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = apply(&m.hidden, x).into_iter().map(|v| v.max(0.0)).collect();
        apply(&m.out, &h)
    }

    /// Explicit-loop self-attention for one neighborhood `[K][3]`.
    fn isa_loop(p: &Isa, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = x.len();
        let d = p.dim();
        let q: Vec<_> = x.iter().map(|r| apply(&p.query, r)).collect();
        let kk: Vec<_> = x.iter().map(|r| apply(&p.key, r)).collect();
        let v: Vec<_> = x.iter().map(|r| apply(&p.value, r)).collect();
        (0..k)
            .map(|i| {
                let logits: Vec<f64> = (0..k)
                    .map(|j| (0..d).map(|t| q[i][t] * kk[j][t]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                (0..d)
                    .map(|t| (0..k).map(|j| logits[j].exp() / z * v[j][t]).sum())
                    .collect()
            })
            .collect()
    }

    /// Explicit-loop cross attention for one point given gathered features.
    fn eca_loop(p: &Eca, f_nbr: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<f64> {
        let k = x.len();
        let c = p.channels();
        let pem: Vec<_> = isa_loop(&p.pos.isa_pem, x).iter().map(|r| mlp_loop(&p.pos.mlp_pem, r)).collect();
        let peb: Vec<_> = isa_loop(&p.pos.isa_peb, x).iter().map(|r| mlp_loop(&p.pos.mlp_peb, r)).collect();
        let mut agg = vec![0.0; c];
        for ch in 0..c {
            let logits: Vec<f64> = (0..k)
                .map(|j| {
                    let kf = apply(&p.psi_k, &f_nbr[j])[ch];
                    let qx = apply(&p.psi_q, &x[j])[ch];
                    (kf - qx) * pem[j][ch] + peb[j][ch]
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..k {
                let vf = apply(&p.psi_v, &f_nbr[j])[ch];
                agg[ch] += (vf + peb[j][ch]) * logits[j].exp() / z;
            }
        }
        apply(&p.out, &agg)
    }

    fn rows_of(t: &Array3<f64>, n: usize) -> Vec<Vec<f64>> {
        t.index_axis(Axis(0), n).rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn isa_single_key_returns_values() {
        let p = Isa::new(5, &mut rng(1));
        let x = uniform3((4, 1, 3), -1.0, 1.0, 2);
        let out = isa_forward(&x, &p);
        let v = p.value.forward(x.view().into_shape((4, 3)).unwrap());
        let diff = (&out.into_shape((4, 5)).unwrap() - &v).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn isa_zero_input_gives_zero() {
        let p = Isa::new(6, &mut rng(3));
        let out = isa_forward(&Array3::zeros((3, 4, 3)), &p);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isa_matches_loop_oracle() {
        let p = Isa::new(8, &mut rng(4));
        let x = uniform3((2, 4, 3), -1.0, 1.0, 5);
        let out = isa_forward(&x, &p);
        for n in 0..2 {
            let want = isa_loop(&p, &rows_of(&x, n));
            for i in 0..4 {
                for t in 0..8 {
                    assert!((out[[n, i, t]] - want[i][t]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn position_embed_zero_and_shapes() {
        let mut p = PosEmbed::new(4, 7, &mut rng(6));
        p.visit_mut("", &mut |name, _, v| {
            if name.ends_with("bias") {
                v.fill(0.0)
            }
        });
        let (pem, peb) = position_embed(&Array3::zeros((5, 3, 3)), &p);
        assert_eq!(pem.dim(), (5, 3, 7));
        assert_eq!(peb.dim(), (5, 3, 7));
        assert!(pem.iter().chain(peb.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn position_embed_is_equivariant_over_keys() {
        let p = PosEmbed::new(4, 6, &mut rng(7));
        let x = uniform3((3, 5, 3), -1.0, 1.0, 8);
        let perm = [3, 0, 4, 1, 2];
        let xp = x.select(Axis(1), &perm);
        let (pem, peb) = position_embed(&x, &p);
        let (pem_p, peb_p) = position_embed(&xp, &p);
        let diff_pem = (&pem.select(Axis(1), &perm) - &pem_p).mapv(f64::abs);
        let diff_peb = (&peb.select(Axis(1), &perm) - &peb_p).mapv(f64::abs);
        assert!(diff_pem.iter().chain(diff_peb.iter()).all(|&d| d < 1e-12));
    }

    #[test]
    fn eca_single_neighbor_passes_values() {
        let p = Eca::new(4, 6, 3, &mut rng(9));
        let f = uniform3((5, 1, 4), -1.0, 1.0, 10);
        let x = uniform3((5, 1, 3), -1.0, 1.0, 11);
        let out = eca_forward(&f, &x, &p).unwrap();
        let (_, peb) = position_embed(&x, &p.pos);
        let vf = p.psi_v.forward(f.view().into_shape((5, 4)).unwrap());
        let want = p.out.forward((vf + peb.into_shape((5, 6)).unwrap()).view());
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn eca_matches_loop_oracle_both_paths() {
        let p = Eca::new(5, 6, 4, &mut rng(12));
        let positions = uniform2(20, 3, -1.0, 1.0, 13);
        let features = uniform2(20, 5, -1.0, 1.0, 14);
        let nbh = knn(positions.view(), positions.view(), 4).unwrap();
        let f_nbr = group(features.view(), nbh.indices.view()).unwrap();
        let gathered = eca_forward(&f_nbr, &nbh.rel_pos, &p).unwrap();
        let fast = p.forward(features.view(), &nbh).unwrap();
        for n in 0..20 {
            let want = eca_loop(&p, &rows_of(&f_nbr, n), &rows_of(&nbh.rel_pos, n));
            for ch in 0..6 {
                assert!((gathered[[n, ch]] - want[ch]).abs() < 1e-6);
                assert!((fast[[n, ch]] - want[ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn eca_scores_sum_to_one() {
        let p = Eca::new(3, 5, 4, &mut rng(15));
        let positions = uniform2(30, 3, -1.0, 1.0, 16);
        let features = uniform2(30, 3, -2.0, 2.0, 17);
        let nbh = knn(positions.view(), positions.view(), 6).unwrap();
        let (_, cache) = p.forward_cached(features.view(), &nbh).unwrap();
        let sums = cache.scores(6).sum_axis(Axis(1));
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn eca_layer_is_permutation_equivariant_and_translation_invariant() {
        let p = Eca::new(3, 4, 4, &mut rng(18));
        let positions = uniform2(40, 3, -1.0, 1.0, 19);
        let features = uniform2(40, 3, 0.0, 1.0, 20);
        let base = eca_layer(positions.view(), features.view(), 8, &p).unwrap();

        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng(21));
        let pp = positions.select(Axis(0), &perm);
        let fp = features.select(Axis(0), &perm);
        let permuted = eca_layer(pp.view(), fp.view(), 8, &p).unwrap();
        assert!((&base.select(Axis(0), &perm) - &permuted).iter().all(|d| d.abs() < 1e-5));

        // Power-of-two shift keeps relative positions exact.
        let shifted = &positions + 4.0;
        let moved = eca_layer(shifted.view(), features.view(), 8, &p).unwrap();
        assert!((&base - &moved).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn eca_layer_rejects_too_few_points() {
        let p = Eca::new(3, 4, 2, &mut rng(22));
        let positions = uniform2(3, 3, -1.0, 1.0, 23);
        assert!(eca_layer(positions.view(), positions.view(), 4, &p).is_err());
    }

    #[test]
    fn isa_gradients_match_finite_differences() {
        for seed in 0..3 {
            let p = Isa::new(5, &mut rng(30 + seed));
            let x = uniform2(12, 3, -1.0, 1.0, 40 + seed);
            let loss = |p: &Isa| p.forward_cached(x.view(), 4).0.mapv(|v| v * v).sum();
            let (out, cache) = p.forward_cached(x.view(), 4);
            let mut grad = p.zeros_like();
            p.backward(x.view(), 4, &cache, (2.0 * &out).view(), &mut grad);
            let err = fd_max_rel_error(&p, &grad, 1e-4, loss);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn eca_gradients_match_finite_differences() {
        for seed in 0..3 {
            let p = Eca::new(3, 4, 3, &mut rng(50 + seed));
            let positions = uniform2(16, 3, -1.0, 1.0, 60 + seed);
            let features = uniform2(16, 3, -1.0, 1.0, 70 + seed);
            let nbh = knn(positions.view(), positions.view(), 5).unwrap();
            let loss = |p: &Eca| p.forward(features.view(), &nbh).unwrap().mapv(|v| v * v).sum();
            let (out, cache) = p.forward_cached(features.view(), &nbh).unwrap();
            let mut grad = p.zeros_like();
            let dfeat = p.backward(features.view(), &nbh, &cache, (2.0 * &out).view(), &mut grad);
            let err = fd_max_rel_error(&p, &grad, 1e-4, loss);
            assert!(err < 1e-4, "seed {seed}: {err}");

            let h = 1e-5;
            for (r, c) in [(0, 0), (5, 2), (15, 1)] {
                let mut fp = features.clone();
                fp[[r, c]] += h;
                let up = p.forward(fp.view(), &nbh).unwrap().mapv(|v| v * v).sum();
                fp[[r, c]] -= 2.0 * h;
                let down = p.forward(fp.view(), &nbh).unwrap().mapv(|v| v * v).sum();
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - dfeat[[r, c]]).abs() < 1e-6 * numeric.abs().max(1.0));
            }
        }
    }

    #[test]
    fn eca_rejects_wrong_channel_count() {
        let p = Eca::new(3, 4, 2, &mut rng(24));
        let positions = uniform2(10, 3, -1.0, 1.0, 25);
        let nbh = knn(positions.view(), positions.view(), 3).unwrap();
        let features = uniform2(10, 5, -1.0, 1.0, 26);
        assert!(p.forward(features.view(), &nbh).is_err());
        let _ = s![..];
    }
}
