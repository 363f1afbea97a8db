//! Point-set kernels used to build each hierarchy stage: farthest point
//! sampling, k-nearest-neighbour grouping in time order and per-group
//! coordinate standardization.
//!
//! Row order of a [`PointSet`] is timestamp order and every kernel here
//! preserves it. Distances are squared Euclidean over the three coordinate
//! columns; ties always go to the lowest row index.

use std::time::Instant;

/// Guard added to the group standard deviation.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PointOpsError {
    #[error("requested {requested} points from a set of {available}")]
    TooMany { requested: usize, available: usize },
    #[error("requested zero points")]
    Empty,
    #[error("feature rows ({feats}) do not match coordinate rows ({coords})")]
    RowMismatch { coords: usize, feats: usize },
}

/// Coordinates plus an optional per-point feature block of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub coords: Vec<[f64; 3]>,
    pub feats: Vec<f64>,
    pub dim: usize,
}

impl PointSet {
    pub fn from_coords(coords: Vec<[f64; 3]>) -> Self {
        Self { coords, feats: Vec::new(), dim: 0 }
    }

    pub fn with_features(coords: Vec<[f64; 3]>, feats: Vec<f64>, dim: usize) -> Result<Self, PointOpsError> {
        if feats.len() != coords.len() * dim {
            return Err(PointOpsError::RowMismatch { coords: coords.len(), feats: feats.len() / dim.max(1) });
        }
        Ok(Self { coords, feats, dim })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.feats[row * self.dim..(row + 1) * self.dim]
    }
}

/// Result of [`knn_group`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSet {
    pub k: usize,
    pub centroid_idx: Vec<usize>,
    pub centroid_coords: Vec<[f64; 3]>,
    /// `N' * D`.
    pub centroid_feats: Vec<f64>,
    /// `N' * K` source row indices, time-ordered within each group.
    pub member_idx: Vec<usize>,
    /// `N' * K` member coordinates relative to their centroid.
    pub rel_coords: Vec<[f64; 3]>,
    /// `N' * K * 2D`: member features followed by centroid features.
    pub feats: Vec<f64>,
    /// `N' * K` normalized member timestamps.
    pub member_t: Vec<f64>,
    pub dim: usize,
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling seeded at row 0. Returns indices in pick order.
pub fn farthest_point_order(coords: &[[f64; 3]], n_out: usize) -> Result<Vec<usize>, PointOpsError> {
    if n_out == 0 {
        return Err(PointOpsError::Empty);
    }
    if n_out > coords.len() {
        return Err(PointOpsError::TooMany { requested: n_out, available: coords.len() });
    }
    let mut picks = Vec::with_capacity(n_out);
    let mut min_d = vec![f64::INFINITY; coords.len()];
    let mut current = 0;
    picks.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while picks.len() < n_out {
        let c = coords[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, md)) in coords.iter().zip(min_d.iter_mut()).enumerate() {
            if *md == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < *md {
                *md = d;
            }
            if *md > best_d {
                best_d = *md;
                best = i;
            }
        }
        current = best;
        min_d[current] = f64::NEG_INFINITY;
        picks.push(current);
    }
    Ok(picks)
}

/// Farthest point sampling; indices returned in ascending (time) order.
pub fn farthest_point_sample(points: &PointSet, n_out: usize) -> Result<Vec<usize>, PointOpsError> {
    let mut idx = farthest_point_order(&points.coords, n_out)?;
    idx.sort_unstable();
    Ok(idx)
}

/// Indices of the `k` nearest rows to each centroid (self included), each
/// group sorted ascending by row index. Output is `centroids.len() * k`.
pub fn knn_indices(coords: &[[f64; 3]], centroid_idx: &[usize], k: usize) -> Result<Vec<usize>, PointOpsError> {
    if k == 0 {
        return Err(PointOpsError::Empty);
    }
    if k > coords.len() {
        return Err(PointOpsError::TooMany { requested: k, available: coords.len() });
    }
    let mut out = Vec::with_capacity(centroid_idx.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(coords.len());
    for &c in centroid_idx {
        let centre = coords[c];
        scratch.clear();
        scratch.extend(coords.iter().enumerate().map(|(i, p)| (dist2(p, &centre), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let start = out.len();
        out.extend(scratch[..k].iter().map(|&(_, i)| i));
        out[start..].sort_unstable();
    }
    Ok(out)
}

/// Groups the `k` nearest neighbours of every centroid, keeping time order
/// and concatenating centroid features onto member features.
pub fn knn_group(points: &PointSet, centroid_idx: &[usize], k: usize) -> Result<GroupedSet, PointOpsError> {
    let member_idx = knn_indices(&points.coords, centroid_idx, k)?;
    let dim = points.dim;
    let mut rel_coords = Vec::with_capacity(member_idx.len());
    let mut feats = Vec::with_capacity(member_idx.len() * 2 * dim);
    let mut member_t = Vec::with_capacity(member_idx.len());
    for (g, &c) in centroid_idx.iter().enumerate() {
        let centre = points.coords[c];
        for &m in &member_idx[g * k..(g + 1) * k] {
            let p = points.coords[m];
            rel_coords.push([p[0] - centre[0], p[1] - centre[1], p[2] - centre[2]]);
            member_t.push(p[2]);
            if dim > 0 {
                feats.extend_from_slice(points.feature(m));
                feats.extend_from_slice(points.feature(c));
            }
        }
    }
    Ok(GroupedSet {
        k,
        centroid_idx: centroid_idx.to_vec(),
        centroid_coords: centroid_idx.iter().map(|&c| points.coords[c]).collect(),
        centroid_feats: centroid_idx.iter().flat_map(|&c| points.feature(c).iter().copied()).collect(),
        member_idx,
        rel_coords,
        feats,
        member_t,
        dim,
    })
}

/// Sample standard deviation of the flattened coordinates of one group
/// (denominator `3n - 1`).
pub fn group_std(rel: &[[f64; 3]]) -> f64 {
    let count = rel.len() * 3;
    if count < 2 {
        return 0.0;
    }
    let mean = rel.iter().flat_map(|r| r.iter()).sum::<f64>() / count as f64;
    let ss: f64 = rel.iter().flat_map(|r| r.iter()).map(|v| (v - mean) * (v - mean)).sum();
    (ss / (count - 1) as f64).sqrt()
}

/// Divides centroid-relative coordinates by the group's flattened standard
/// deviation plus [`STD_EPS`].
pub fn standardize_group(rel: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let denom = group_std(rel) + STD_EPS;
    rel.iter().map(|r| [r[0] / denom, r[1] / denom, r[2] / denom]).collect()
}

/// In-place standardization of every `k`-row group in `rel`.
pub fn standardize_groups(rel: &mut [[f64; 3]], k: usize) {
    for group in rel.chunks_mut(k) {
        let denom = group_std(group) + STD_EPS;
        for r in group.iter_mut() {
            for v in r.iter_mut() {
                *v /= denom;
            }
        }
    }
}

/// Latency summary for one kernel, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kernel: String,
    pub n: usize,
    pub n_out: usize,
    pub k: usize,
    pub reps: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "kernel,n,n_out,k,reps,p50_us,p90_us,p99_us,mean_us";

    pub fn from_samples(kernel: &str, n: usize, n_out: usize, k: usize, mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let reps = samples.len();
        let pct = |q: f64| samples[((reps as f64 - 1.0) * q).round() as usize];
        Self {
            kernel: kernel.to_string(),
            n,
            n_out,
            k,
            reps,
            p50_us: pct(0.5),
            p90_us: pct(0.9),
            p99_us: pct(0.99),
            mean_us: samples.iter().sum::<f64>() / reps as f64,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            self.kernel, self.n, self.n_out, self.k, self.reps, self.p50_us, self.p90_us, self.p99_us, self.mean_us
        )
    }
}

/// Random time-sorted cloud in the unit cube.
pub fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    pts
}

/// Times FPS and KNN separately on random clouds.
pub fn bench_grouping(n: usize, n_out: usize, k: usize, reps: usize) -> Result<Vec<BenchRow>, PointOpsError> {
    let reps = reps.max(1);
    let mut fps = Vec::with_capacity(reps);
    let mut knn = Vec::with_capacity(reps);
    for rep in 0..reps {
        let coords = random_cloud(n, rep as u64);
        let t0 = Instant::now();
        let mut centroids = farthest_point_order(&coords, n_out)?;
        centroids.sort_unstable();
        fps.push(t0.elapsed().as_secs_f64() * 1e6);
        let t1 = Instant::now();
        let groups = knn_indices(&coords, &centroids, k)?;
        knn.push(t1.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(groups);
    }
    Ok(vec![BenchRow::from_samples("fps", n, n_out, k, fps), BenchRow::from_samples("knn", n, n_out, k, knn)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> PointSet {
        PointSet::from_coords(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    }

    #[test]
    fn fps_picks_opposite_corner() {
        assert_eq!(farthest_point_sample(&square(), 2).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_full_selection_is_every_index() {
        assert_eq!(farthest_point_sample(&square(), 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_rejects_oversized_request() {
        assert_eq!(farthest_point_sample(&square(), 5), Err(PointOpsError::TooMany { requested: 5, available: 4 }));
    }

    #[test]
    fn knn_with_k1_is_the_centroid() {
        let g = knn_group(&square(), &[0, 2], 1).unwrap();
        assert_eq!(g.member_idx, vec![0, 2]);
        assert_eq!(g.rel_coords, vec![[0.0; 3]; 2]);
    }

    #[test]
    fn knn_with_k_equal_n_is_everything() {
        let g = knn_group(&square(), &[3], 4).unwrap();
        assert_eq!(g.member_idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn knn_ties_go_to_lowest_index() {
        // Rows 1 and 2 are equidistant from row 0.
        let g = knn_indices(&square().coords, &[0], 2).unwrap();
        assert_eq!(g, vec![0, 1]);
    }

    #[test]
    fn grouped_features_concatenate_centroid() {
        let pts = PointSet::with_features(square().coords, vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let g = knn_group(&pts, &[3], 2).unwrap();
        assert_eq!(g.member_idx, vec![1, 3]);
        assert_eq!(g.feats, vec![2.0, 4.0, 4.0, 4.0]);
        assert_eq!(g.centroid_feats, vec![4.0]);
    }

    #[test]
    fn standardization_hand_example() {
        let rel = [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]];
        // g = [0,0,0,2,2,2] shifted; Std = sqrt(6/5).
        assert!((group_std(&rel) - (6.0f64 / 5.0).sqrt()).abs() < 1e-15);
        let out = standardize_group(&rel);
        assert!((out[0][0] + 0.912_870_929).abs() < 1e-8);
    }

    #[test]
    fn degenerate_group_standardizes_to_zero() {
        let out = standardize_group(&[[0.0; 3]; 5]);
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bench_rows_have_expected_shape() {
        let rows = bench_grouping(64, 16, 4, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].csv().starts_with("fps,64,16,4,3,"));
    }
}
