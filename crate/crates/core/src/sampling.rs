//! Farthest point sampling, exact k-nearest-neighbor search and feature
//! gathering.
//!
//! Every routine here is deterministic and independent of input row order
//! up to ties between bit-identical coordinates: candidates are ranked by
//! squared distance, then lexicographically by `(x, y, z)`, then by row
//! index. The decoder relies on this to rebuild the encoder's sampling
//! pyramid from the transmitted geometry alone.

use std::cmp::Ordering;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{precondition, Result};

/// KNN index table with the matching relative positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    /// `[Q, K]` rows of the reference set, nearest first.
    pub indices: Array2<usize>,
    /// `[Q, K, 3]` with `rel_pos[i][j] = ref[indices[i][j]] - query[i]`.
    pub rel_pos: Array3<f64>,
}

impl Neighborhood {
    pub fn k(&self) -> usize {
        self.indices.ncols()
    }

    pub fn len(&self) -> usize {
        self.indices.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.nrows() == 0
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

fn row(positions: &ArrayView2<f64>, i: usize) -> [f64; 3] {
    [positions[[i, 0]], positions[[i, 1]], positions[[i, 2]]]
}

fn check_xyz(positions: &ArrayView2<f64>, what: &str) -> Result<()> {
    if positions.ncols() != 3 {
        return Err(precondition(format!(
            "{what} must have 3 columns, got {}",
            positions.ncols()
        )));
    }
    Ok(())
}

/// Centroid summed in lexicographic coordinate order so the result is
/// bit-identical for every permutation of the rows.
pub fn canonical_centroid(positions: ArrayView2<f64>) -> [f64; 3] {
    let n = positions.nrows();
    if n == 0 {
        return [0.0; 3];
    }
    let pts: Vec<[f64; 3]> = (0..n).map(|i| row(&positions, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(&pts[a], &pts[b]));
    let mut sum = [0.0; 3];
    for &i in &order {
        for d in 0..3 {
            sum[d] += pts[i][d];
        }
    }
    [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64]
}

/// Result of a farthest point sampling run over a full cloud.
#[derive(Debug, Clone)]
pub(crate) struct FpsRun {
    pub selected: Vec<usize>,
    /// Position in `selected` of the nearest selected point, per row.
    pub owner: Vec<usize>,
    /// Squared distance to that owner.
    pub owner_dist: Vec<f64>,
}

pub(crate) fn fps_run(positions: ArrayView2<f64>, m: usize) -> Result<FpsRun> {
    check_xyz(&positions, "positions")?;
    let n = positions.nrows();
    if m == 0 || m > n {
        return Err(precondition(format!(
            "fps needs 1 <= m <= N, got m = {m}, N = {n}"
        )));
    }
    let pts: Vec<[f64; 3]> = (0..n).map(|i| row(&positions, i)).collect();

    // `better(a, b)`: a is preferred over b as the next pick.
    let better = |key: &[f64], a: usize, b: usize| -> bool {
        match key[a].total_cmp(&key[b]) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match lex_cmp(&pts[a], &pts[b]) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => a < b,
            },
        }
    };

    let c = canonical_centroid(positions);
    let from_centroid: Vec<f64> = pts.iter().map(|p| dist2(p, &c)).collect();
    let mut seed = 0;
    for i in 1..n {
        if better(&from_centroid, i, seed) {
            seed = i;
        }
    }

    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut owner = vec![0usize; n];
    let mut min_d: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[seed])).collect();
    selected.push(seed);
    taken[seed] = true;

    while selected.len() < m {
        let mut best = usize::MAX;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best == usize::MAX || better(&min_d, i, best) {
                best = i;
            }
        }
        let slot = selected.len();
        selected.push(best);
        taken[best] = true;
        let pb = pts[best];
        for i in 0..n {
            let d = dist2(&pts[i], &pb);
            if d < min_d[i] {
                min_d[i] = d;
                owner[i] = slot;
            }
        }
    }
    Ok(FpsRun {
        selected,
        owner,
        owner_dist: min_d,
    })
}

/// Greedy farthest point sampling. Returns `m` row indices in selection
/// order. The first pick is the point farthest from the centroid.
pub fn fps(positions: ArrayView2<f64>, m: usize) -> Result<Vec<usize>> {
    Ok(fps_run(positions, m)?.selected)
}

/// Exact k nearest neighbors of every query row among `refs`.
pub fn knn(queries: ArrayView2<f64>, refs: ArrayView2<f64>, k: usize) -> Result<Neighborhood> {
    check_xyz(&queries, "queries")?;
    check_xyz(&refs, "refs")?;
    let r = refs.nrows();
    if k == 0 || k > r {
        return Err(precondition(format!(
            "knn needs 1 <= k <= R, got k = {k}, R = {r}"
        )));
    }
    let q = queries.nrows();
    let ref_pts: Vec<[f64; 3]> = (0..r).map(|i| row(&refs, i)).collect();
    let mut indices = Array2::<usize>::zeros((q, k));
    let mut rel_pos = Array3::<f64>::zeros((q, k, 3));
    // Sorted by (distance, index). References arrive in index order, so a
    // candidate only displaces strictly farther entries.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..q {
        let qp = row(&queries, i);
        best.clear();
        for (j, p) in ref_pts.iter().enumerate() {
            let d = dist2(p, &qp);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let at = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(at, (d, j));
            best.truncate(k);
        }
        for (slot, &(_, j)) in best.iter().enumerate() {
            indices[[i, slot]] = j;
            for d in 0..3 {
                rel_pos[[i, slot, d]] = ref_pts[j][d] - qp[d];
            }
        }
    }
    Ok(Neighborhood { indices, rel_pos })
}

/// Index of the nearest reference point for every query.
pub fn nearest(queries: ArrayView2<f64>, refs: ArrayView2<f64>) -> Result<Vec<usize>> {
    if refs.nrows() == 0 {
        return Err(precondition("nearest needs at least one reference point"));
    }
    let nbh = knn(queries, refs, 1)?;
    Ok(nbh.indices.column(0).to_vec())
}

/// `out[i][j] = features[indices[i][j]]`.
pub fn group(features: ArrayView2<f64>, indices: ArrayView2<usize>) -> Result<Array3<f64>> {
    let rows = features.nrows();
    let (n, k) = indices.dim();
    let c = features.ncols();
    let mut out = Array3::<f64>::zeros((n, k, c));
    for ((i, j), &src) in indices.indexed_iter() {
        if src >= rows {
            return Err(precondition(format!(
                "group index {src} out of range for {rows} feature rows"
            )));
        }
        out.index_axis_mut(Axis(0), i)
            .index_axis_mut(Axis(0), j)
            .assign(&features.row(src));
    }
    Ok(out)
}
