//! Analytic Gaussian estimation from point clouds.
//!
//! A cloud is voxelized, each occupied voxel fits one Gaussian to the points
//! of its 27-cell neighborhood by moment matching, and redundant Gaussians are
//! then fused with a curvature-aware merge criterion. No iterative
//! optimization is involved.

mod merge;
mod voxel;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Rgb, Vec3};

pub use merge::{curvature_proxy, gaussian_distance, merge_pair, merge_set, mergeable, MergeStats};
pub use voxel::{voxel_of, voxelize, VoxelCoord, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    pub covariance: Matrix3<f64>,
    pub color: Rgb,
    pub opacity: f64,
    /// Number of source points that contributed to this Gaussian.
    pub support: u64,
}

impl Gaussian3D {
    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite())
            && self.covariance.iter().all(|x| x.is_finite())
            && self.color.iter().all(|x| x.is_finite())
            && self.opacity.is_finite()
    }

    /// Isotropic Gaussian with standard deviation `sigma`.
    pub fn isotropic(mean: Vec3, sigma: f64, color: Rgb, opacity: f64) -> Self {
        Self {
            mean,
            covariance: Matrix3::identity() * (sigma * sigma),
            color,
            opacity,
            support: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian3D>,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Gaussian3D> {
        self.gaussians.iter()
    }

    pub fn total_support(&self) -> u64 {
        self.gaussians.iter().map(|g| g.support).sum()
    }

    /// Support-weighted mean of the Gaussian means.
    pub fn weighted_mean(&self) -> Option<Vec3> {
        let n = self.total_support();
        if n == 0 {
            return None;
        }
        let sum = self
            .gaussians
            .iter()
            .fold(Vec3::zeros(), |acc, g| acc + g.mean * g.support as f64);
        Some(sum / n as f64)
    }

    /// Covariance of the support-weighted mixture: weighted member covariances
    /// plus the scatter of member means about the mixture mean.
    pub fn mixture_covariance(&self) -> Option<Matrix3<f64>> {
        let mu = self.weighted_mean()?;
        let n = self.total_support() as f64;
        let mut acc = Matrix3::zeros();
        for g in &self.gaussians {
            let d = g.mean - mu;
            acc += (g.covariance + d * d.transpose()) * g.support as f64;
        }
        Some(acc / n)
    }
}

impl FromIterator<Gaussian3D> for GaussianSet {
    fn from_iter<I: IntoIterator<Item = Gaussian3D>>(iter: I) -> Self {
        Self {
            gaussians: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Threshold grows with curvature, exactly as the merge inequality reads.
    #[default]
    Verbatim,
    /// Threshold grows with flatness, so planar patches merge more eagerly.
    Flatness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub voxel_size: f64,
    /// Diagonal covariance regularizer (m²).
    pub epsilon: f64,
    pub lambda_sigma: f64,
    pub lambda_color: f64,
    /// Curvature scale in the merge threshold.
    pub tau: f64,
    /// Distance scale multiplying the curvature-modulated merge bracket.
    pub base_threshold: f64,
    pub opacity: f64,
    pub merge_mode: MergeMode,
    pub max_merge_passes: u32,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::with_voxel_size(0.01)
    }
}

impl EstimatorConfig {
    /// Defaults with the voxel-dependent parameters derived from `voxel_size`.
    pub fn with_voxel_size(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            epsilon: (voxel_size / 10.0).powi(2),
            lambda_sigma: 0.6,
            lambda_color: 0.4,
            tau: 1.0,
            base_threshold: 2.0 * voxel_size,
            opacity: 0.8,
            merge_mode: MergeMode::Verbatim,
            max_merge_passes: 8,
        }
    }

    pub fn with_merge_mode(mut self, mode: MergeMode) -> Self {
        self.merge_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if !(self.lambda_sigma >= 0.0 && self.lambda_color >= 0.0) {
            return bad("lambda weights must be non-negative");
        }
        if self.base_threshold.is_nan() || self.base_threshold <= 0.0 {
            return bad("base_threshold must be positive");
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return bad("opacity must lie in (0, 1]");
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return bad("tau must be non-negative");
        }
        Ok(())
    }
}

/// Moment-matched Gaussian over the given point indices.
///
/// Covariance is the biased (1/N) scatter about the mean plus `epsilon * I`.
pub fn fit_voxel_gaussian(cloud: &PointCloud, indices: &[usize], config: &EstimatorConfig) -> Gaussian3D {
    assert!(!indices.is_empty(), "cannot fit a Gaussian to zero points");
    let n = indices.len() as f64;
    let mut mean = Vec3::zeros();
    let mut color = Rgb::zeros();
    for &i in indices {
        mean += cloud.points[i];
        color += cloud.colors[i];
    }
    mean /= n;
    color /= n;

    let mut scatter = Matrix3::zeros();
    for &i in indices {
        let d = cloud.points[i] - mean;
        scatter += d * d.transpose();
    }
    let covariance = scatter / n + Matrix3::identity() * config.epsilon;

    Gaussian3D {
        mean,
        covariance,
        color,
        opacity: config.opacity,
        support: indices.len() as u64,
    }
}

/// One Gaussian per occupied voxel, fitted over its Chebyshev-1 neighborhood,
/// in ascending voxel order.
pub fn fit_voxels(cloud: &PointCloud, grid: &VoxelGrid, config: &EstimatorConfig) -> Vec<Gaussian3D> {
    let keys: Vec<&VoxelCoord> = grid.occupied.keys().collect();
    keys.par_iter()
        .map(|v| fit_voxel_gaussian(cloud, &grid.gather_neighborhood(v), config))
        .collect()
}

/// Full estimator: voxelize, fit per voxel, then merge redundant Gaussians.
pub fn estimate(cloud: &PointCloud, config: &EstimatorConfig) -> GaussianSet {
    if cloud.is_empty() {
        return GaussianSet::default();
    }
    let grid = voxelize(&cloud.points, config.voxel_size);
    let fitted = GaussianSet::new(fit_voxels(cloud, &grid, config));
    merge_set(fitted, config).0
}
