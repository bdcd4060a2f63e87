//! Whole-cloud compression: patching, per-patch coding and the container.
//! Geometry is not coded; the decoder receives the original positions.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::codec::{build_pyramid, Model};
use crate::entropy::{
    ac_decode, ac_encode, pack_bitstream, unpack_bitstream, CodingTables, PatchHeader,
    StreamHeader,
};
use crate::error::{precondition, Error, Result};
use crate::eval::{bpp, psnr_y, psnr_yuv, RDPoint};
use crate::pointcloud::{
    make_patches, merge_patches, yuv_to_rgb, ColorSpace, Patch, PointCloud, FILLER, PATCH_SIZE,
};

/// Rounds a latent to integer symbols, saturating at the `i32` range.
pub fn latent_symbols(latent: &Array2<f64>) -> Array2<i32> {
    latent.mapv(|v| v.round() as i32)
}

/// Codes already normalized patches into one stream. `n_points` is the
/// size of the cloud the patches came from.
pub fn encode_patches(patches: &[Patch], n_points: usize, model: &Model) -> Result<Vec<u8>> {
    let tables = CodingTables::new(&model.prior, model.cfg.alphabet)?;
    let coded: Vec<(PatchHeader, Vec<u8>)> = patches
        .par_iter()
        .map(|p| {
            let pyr = build_pyramid(p.positions.view(), &model.cfg)?;
            let latent = model.encode_pyramid(&pyr, p.colors.view())?;
            let symbols = latent_symbols(&latent);
            let payload = ac_encode(symbols.view(), &tables)?;
            let header = PatchHeader {
                point_count: p.owned_count() as u32,
                latent_rows: symbols.nrows() as u32,
                latent_channels: symbols.ncols() as u32,
            };
            Ok((header, payload))
        })
        .collect::<Result<_>>()?;
    let n_points = u32::try_from(n_points).map_err(|_| precondition("cloud too large"))?;
    let (headers, payloads): (Vec<_>, Vec<_>) = coded.into_iter().unzip();
    let header = StreamHeader { config_hash: model.config_hash(), n_points, patches: headers };
    pack_bitstream(&header, &payloads)
}

/// Decodes every patch of `stream` on the given patch geometry. Returns
/// unclipped YUV colors per patch row.
pub fn decode_patches(stream: &[u8], patches: &[Patch], model: &Model) -> Result<Vec<Array2<f64>>> {
    let (header, payloads) = unpack_bitstream(stream)?;
    if header.config_hash != model.config_hash() {
        return Err(Error::ModelMismatch);
    }
    if header.patches.len() != patches.len() {
        return Err(Error::Bitstream(format!(
            "stream has {} patches, geometry gives {}",
            header.patches.len(),
            patches.len()
        )));
    }
    let tables = CodingTables::new(&model.prior, model.cfg.alphabet)?;
    patches
        .par_iter()
        .zip(header.patches.par_iter().zip(payloads.par_iter()))
        .map(|(p, (h, payload))| {
            if h.point_count as usize != p.owned_count()
                || h.latent_channels as usize != model.cfg.latent_channels
            {
                return Err(Error::Bitstream("patch header disagrees with geometry".into()));
            }
            let pyr = build_pyramid(p.positions.view(), &model.cfg)?;
            if h.latent_rows as usize != pyr.coarsest().nrows() {
                return Err(Error::Bitstream("latent size disagrees with geometry".into()));
            }
            let symbols = ac_decode(payload, h.latent_rows as usize, &tables)?;
            model.decode(symbols.mapv(f64::from).view(), &pyr)
        })
        .collect()
}

/// Compresses the colors of `pc` with `model`.
pub fn compress(pc: &PointCloud, model: &Model) -> Result<Vec<u8>> {
    let patches = make_patches(pc, PATCH_SIZE)?;
    encode_patches(&patches, pc.len(), model)
}

/// Reconstructs a cloud from `stream` and the original `positions`. Colors
/// come back in RGB, clipped to `[0, 1]`.
pub fn decompress(stream: &[u8], positions: &Array2<f64>, model: &Model) -> Result<PointCloud> {
    let (header, _) = unpack_bitstream(stream)?;
    if header.config_hash != model.config_hash() {
        return Err(Error::ModelMismatch);
    }
    if header.n_points as usize != positions.nrows() {
        return Err(Error::Bitstream(format!(
            "stream codes {} points, geometry has {}",
            header.n_points,
            positions.nrows()
        )));
    }
    let geometry = PointCloud::new(
        positions.clone(),
        Array2::zeros((positions.nrows(), 3)),
        ColorSpace::Yuv,
    )?;
    let patches = make_patches(&geometry, PATCH_SIZE)?;
    let decoded = decode_patches(stream, &patches, model)?;
    let yuv = merge_patches(&patches, &decoded, positions.nrows())?.mapv(|v| v.clamp(0.0, 1.0));
    PointCloud::new(positions.clone(), yuv_to_rgb(&yuv), ColorSpace::Rgb)
}

/// Codes `patches` as one stream and measures the decoded result against
/// their YUV colors. Filler rows are excluded from the quality figures.
pub fn evaluate_patches(patches: &[Patch], model: &Model, lambda: f64) -> Result<RDPoint> {
    let n_points: usize = patches.iter().map(Patch::owned_count).sum();
    let stream = encode_patches(patches, n_points, model)?;
    let decoded = decode_patches(&stream, patches, model)?;
    let (orig, rec) = owned_rows(patches, |i, _| decoded[i].mapv(|v| v.clamp(0.0, 1.0)));
    Ok(RDPoint {
        lambda,
        bpp: bpp(&stream, n_points)?,
        psnr_y: psnr_y(orig.view(), rec.view())?,
        psnr_yuv: psnr_yuv(orig.view(), rec.view())?,
    })
}

/// Quality of predicting every point by its patch's mean color, which
/// costs next to no rate.
pub fn mean_color_baseline(patches: &[Patch]) -> Result<(f64, f64)> {
    let (orig, rec) = owned_rows(patches, |_, p| {
        let owned = owned_colors(p);
        let mean = owned.mean_axis(Axis(0)).expect("patches own points");
        Array2::from_shape_fn((p.len(), 3), |(_, c)| mean[c])
    });
    Ok((psnr_y(orig.view(), rec.view())?, psnr_yuv(orig.view(), rec.view())?))
}

fn owned_colors(p: &Patch) -> Array2<f64> {
    let rows: Vec<usize> = (0..p.len()).filter(|&r| p.parent_indices[r] != FILLER).collect();
    p.colors.select(Axis(0), &rows)
}

/// Stacks owned rows of original and predicted colors over all patches.
fn owned_rows(
    patches: &[Patch],
    predict: impl Fn(usize, &Patch) -> Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut orig = Vec::new();
    let mut rec = Vec::new();
    for (i, p) in patches.iter().enumerate() {
        let pred = predict(i, p);
        for r in (0..p.len()).filter(|&r| p.parent_indices[r] != FILLER) {
            orig.extend(p.colors.row(r).iter().copied());
            rec.extend(pred.row(r).iter().copied());
        }
    }
    let n = orig.len() / 3;
    (
        Array2::from_shape_vec((n, 3), orig).expect("three channels"),
        Array2::from_shape_vec((n, 3), rec).expect("three channels"),
    )
}
