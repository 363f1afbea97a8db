//! Parameter-free part of every hierarchy stage.
//!
//! Sampling and grouping depend only on coordinates, and each stage's
//! coordinates are the centroids of the previous one, so the whole
//! sequence of index sets can be computed once per cloud and reused for
//! every forward pass.

use crate::point_ops::{farthest_point_order, knn_indices, standardize_groups, PointOpsError};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub n_in: usize,
    pub n_out: usize,
    pub k: usize,
    /// Time-ordered centroid rows of the stage input.
    pub centroid_idx: Vec<usize>,
    /// `n_out * k` member rows, time-ordered within each group.
    pub member_idx: Vec<usize>,
    /// `n_out * k` standardized centroid-relative member coordinates.
    pub rel_coords: Vec<[f64; 3]>,
    /// Coordinates carried to the next stage.
    pub coords: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyPlan {
    pub n_points: usize,
    pub stages: Vec<StagePlan>,
}

impl StagePlan {
    pub fn build(coords: &[[f64; 3]], n_out: usize, k: usize) -> Result<Self, PointOpsError> {
        let mut centroid_idx = farthest_point_order(coords, n_out)?;
        centroid_idx.sort_unstable();
        let member_idx = knn_indices(coords, &centroid_idx, k)?;
        let mut rel_coords: Vec<[f64; 3]> = member_idx
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let c = coords[centroid_idx[i / k]];
                let p = coords[m];
                [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
            })
            .collect();
        standardize_groups(&mut rel_coords, k);
        Ok(Self {
            n_in: coords.len(),
            n_out,
            k,
            coords: centroid_idx.iter().map(|&c| coords[c]).collect(),
            centroid_idx,
            member_idx,
            rel_coords,
        })
    }
}

impl HierarchyPlan {
    pub fn build(cloud: &[[f64; 3]], cfg: &ModelConfig) -> Result<Self, PointOpsError> {
        if cloud.len() != cfg.n_points {
            return Err(PointOpsError::TooMany { requested: cfg.n_points, available: cloud.len() });
        }
        let mut stages = Vec::with_capacity(cfg.s_num());
        let mut coords = cloud.to_vec();
        for &n_out in &cfg.stage_points {
            let stage = StagePlan::build(&coords, n_out, cfg.k)?;
            coords = stage.coords.clone();
            stages.push(stage);
        }
        Ok(Self { n_points: cloud.len(), stages })
    }

    pub fn final_points(&self) -> usize {
        self.stages.last().map_or(self.n_points, |s| s.n_out)
    }
}
