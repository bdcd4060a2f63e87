//! Splitting a cloud into fixed-size, normalized patches and merging the
//! decoded patch colors back.
//!
//! Patch centers are picked by farthest point sampling over the whole cloud.
//! Each point belongs to exactly one patch: its nearest center, or the
//! nearest center with spare capacity once a patch is full. Patches with
//! fewer owned points than `patch_size` are topped up by repeating their own
//! rows cyclically; those filler rows carry parent index `-1`.

use ndarray::{Array2, Axis};

use super::PointCloud;
use crate::error::{precondition, Error, Result};
use crate::sampling::{canonical_centroid, dist2, fps_run};

/// Points per patch.
pub const PATCH_SIZE: usize = 2048;

/// Filler marker in [`Patch::parent_indices`].
pub const FILLER: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `[S, 3]`, centered and scaled into the unit ball.
    pub positions: Array2<f64>,
    /// `[S, 3]` YUV colors.
    pub colors: Array2<f64>,
    /// Parent row per patch row, `-1` for filler rows.
    pub parent_indices: Vec<i64>,
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    /// Number of non-filler rows.
    pub fn owned_count(&self) -> usize {
        self.parent_indices.iter().filter(|&&i| i != FILLER).count()
    }

    /// Positions mapped back to the parent cloud's frame.
    pub fn denormalized_positions(&self) -> Array2<f64> {
        let mut out = &self.positions * self.scale;
        for mut row in out.rows_mut() {
            for d in 0..3 {
                row[d] += self.centroid[d];
            }
        }
        out
    }

    /// Builds a patch from raw positions, centering and scaling them. All
    /// rows are owned, parent indices are `0..n`.
    pub fn from_raw(positions: &Array2<f64>, colors: Array2<f64>) -> Result<Self> {
        let n = positions.nrows();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if colors.nrows() != n || positions.ncols() != 3 || colors.ncols() != 3 {
            return Err(precondition("patch positions and colors disagree in shape"));
        }
        let (normalized, centroid, scale) = normalize(positions);
        Ok(Self {
            positions: normalized,
            colors,
            parent_indices: (0..n as i64).collect(),
            centroid,
            scale,
        })
    }
}

fn normalize(positions: &Array2<f64>) -> (Array2<f64>, [f64; 3], f64) {
    let centroid = canonical_centroid(positions.view());
    let mut centered = positions.clone();
    for mut row in centered.rows_mut() {
        for d in 0..3 {
            row[d] -= centroid[d];
        }
    }
    let max_norm = centered
        .rows()
        .into_iter()
        .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
        .fold(0.0f64, f64::max);
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    centered.mapv_inplace(|v| v / scale);
    (centered, centroid, scale)
}

/// Splits `pc` into `ceil(N / patch_size)` patches of exactly `patch_size`
/// rows. Colors are converted to YUV. Deterministic in the cloud's contents.
pub fn make_patches(pc: &PointCloud, patch_size: usize) -> Result<Vec<Patch>> {
    let n = pc.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if patch_size == 0 {
        return Err(precondition("patch size must be positive"));
    }
    let positions = pc.positions();
    let yuv = pc.yuv();
    let count = n.div_ceil(patch_size);
    let run = fps_run(positions.view(), count)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        run.owner_dist[a]
            .total_cmp(&run.owner_dist[b])
            .then(a.cmp(&b))
    });

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    let mut overflow = Vec::new();
    for &i in &order {
        let o = run.owner[i];
        if members[o].len() < patch_size {
            members[o].push(i);
        } else {
            overflow.push(i);
        }
    }
    if !overflow.is_empty() {
        let centers: Vec<[f64; 3]> = run
            .selected
            .iter()
            .map(|&c| [positions[[c, 0]], positions[[c, 1]], positions[[c, 2]]])
            .collect();
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(count);
        for &i in &overflow {
            let p = [positions[[i, 0]], positions[[i, 1]], positions[[i, 2]]];
            ranked.clear();
            ranked.extend(centers.iter().enumerate().map(|(s, c)| (dist2(&p, c), s)));
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let slot = ranked
                .iter()
                .map(|&(_, s)| s)
                .find(|&s| members[s].len() < patch_size)
                .expect("total capacity covers every point");
            members[slot].push(i);
        }
    }

    let mut patches = Vec::with_capacity(count);
    for mut owned in members {
        owned.sort_unstable();
        let own = owned.len();
        let rows: Vec<usize> = (0..patch_size).map(|r| owned[r % own]).collect();
        let raw = positions.select(Axis(0), &owned);
        let (_, centroid, scale) = normalize(&raw);
        let mut patch_pos = positions.select(Axis(0), &rows);
        for mut row in patch_pos.rows_mut() {
            for d in 0..3 {
                row[d] = (row[d] - centroid[d]) / scale;
            }
        }
        let parent_indices = (0..patch_size)
            .map(|r| if r < own { owned[r] as i64 } else { FILLER })
            .collect();
        patches.push(Patch {
            positions: patch_pos,
            colors: yuv.select(Axis(0), &rows),
            parent_indices,
            centroid,
            scale,
        });
    }
    Ok(patches)
}

/// Scatters decoded patch colors back to the parent cloud's rows.
pub fn merge_patches(
    patches: &[Patch],
    decoded_colors: &[Array2<f64>],
    n: usize,
) -> Result<Array2<f64>> {
    if patches.len() != decoded_colors.len() {
        return Err(precondition(format!(
            "{} patches but {} decoded color blocks",
            patches.len(),
            decoded_colors.len()
        )));
    }
    let mut out = Array2::<f64>::zeros((n, 3));
    let mut covered = vec![false; n];
    for (patch, colors) in patches.iter().zip(decoded_colors) {
        if colors.nrows() != patch.len() || colors.ncols() != 3 {
            return Err(precondition("decoded colors do not match patch shape"));
        }
        for (r, &parent) in patch.parent_indices.iter().enumerate() {
            if parent == FILLER {
                continue;
            }
            let p = parent as usize;
            if p >= n {
                return Err(precondition(format!("parent index {p} out of range")));
            }
            if covered[p] {
                return Err(precondition(format!("point {p} owned by two patch rows")));
            }
            covered[p] = true;
            out.row_mut(p).assign(&colors.row(r));
        }
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::PatchCoverIncomplete(missing));
    }
    Ok(out)
}
