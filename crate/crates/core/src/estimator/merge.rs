use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};

use super::{voxel_of, EstimatorConfig, Gaussian3D, GaussianSet, MergeMode, VoxelCoord};

/// Smallest eigenvalue over trace; ~0 for planar patches, 1/3 when isotropic.
pub fn curvature_proxy(covariance: &Matrix3<f64>) -> f64 {
    let trace = covariance.trace();
    if trace <= 0.0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(*covariance);
    (eig.eigenvalues.min() / trace).clamp(0.0, 1.0 / 3.0)
}

/// Weighted sum of mean distance, covariance Frobenius distance and color distance.
pub fn gaussian_distance(a: &Gaussian3D, b: &Gaussian3D, config: &EstimatorConfig) -> f64 {
    (a.mean - b.mean).norm()
        + config.lambda_sigma * (a.covariance - b.covariance).norm()
        + config.lambda_color * (a.color - b.color).norm()
}

fn merge_threshold(a: &Gaussian3D, b: &Gaussian3D, config: &EstimatorConfig) -> f64 {
    let ka = curvature_proxy(&a.covariance);
    let kb = curvature_proxy(&b.covariance);
    let bracket = match config.merge_mode {
        MergeMode::Verbatim => 1.0 + config.tau * (ka + kb),
        MergeMode::Flatness => 1.0 + config.tau * ((1.0 / 3.0 - ka) + (1.0 / 3.0 - kb)) * 3.0,
    };
    config.base_threshold * bracket
}

pub fn mergeable(a: &Gaussian3D, b: &Gaussian3D, config: &EstimatorConfig) -> bool {
    gaussian_distance(a, b, config) < merge_threshold(a, b, config)
}

fn floor_eigenvalues(cov: Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.min() >= floor {
        return cov;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&clamped) * v.transpose();
    (out + out.transpose()) * 0.5
}

/// Support-weighted moment match of two Gaussians.
///
/// Preserves the first and second moments of the two-component mixture. The
/// result is re-floored to eigenvalues >= `epsilon` when one is given.
pub fn merge_pair(a: &Gaussian3D, b: &Gaussian3D) -> Gaussian3D {
    merge_pair_floored(a, b, None)
}

pub(crate) fn merge_pair_floored(a: &Gaussian3D, b: &Gaussian3D, epsilon: Option<f64>) -> Gaussian3D {
    let support = a.support + b.support;
    let n = support as f64;
    let wa = a.support as f64 / n;
    let wb = b.support as f64 / n;
    let d = a.mean - b.mean;
    // symmetric in (a, b): the between-mean term uses d·dᵀ which is sign-invariant
    let mut covariance = a.covariance * wa + b.covariance * wb + (d * d.transpose()) * (wa * wb);
    covariance = (covariance + covariance.transpose()) * 0.5;
    if let Some(eps) = epsilon {
        covariance = floor_eigenvalues(covariance, eps);
    }
    Gaussian3D {
        mean: a.mean * wa + b.mean * wb,
        covariance,
        color: a.color * wa + b.color * wb,
        opacity: a.opacity * wa + b.opacity * wb,
        support,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub passes: u32,
    pub merges: usize,
}

struct Candidate {
    distance: f64,
    key: VoxelCoord,
    i: usize,
    j: usize,
}

fn candidate_pairs(gaussians: &[Gaussian3D], config: &EstimatorConfig) -> Vec<Candidate> {
    let keys: Vec<VoxelCoord> = gaussians.iter().map(|g| voxel_of(&g.mean, config.voxel_size)).collect();
    let mut buckets: HashMap<VoxelCoord, Vec<usize>> = HashMap::with_capacity(gaussians.len());
    for (i, k) in keys.iter().enumerate() {
        buckets.entry(*k).or_default().push(i);
    }

    let mut out = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = buckets.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let (a, b) = (&gaussians[i], &gaussians[j]);
                        if mergeable(a, b, config) {
                            out.push(Candidate {
                                distance: gaussian_distance(a, b, config),
                                key: *key,
                                i,
                                j,
                            });
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then_with(|| x.key.cmp(&y.key))
            .then_with(|| (x.i, x.j).cmp(&(y.i, y.j)))
    });
    out
}

/// Repeatedly fuses mergeable Gaussians whose means sit in neighboring voxels.
///
/// Each pass greedily takes candidate pairs in ascending distance, each
/// Gaussian joining at most one merge per pass. Stops after a pass with no
/// merges or after `max_merge_passes`.
pub fn merge_set(set: GaussianSet, config: &EstimatorConfig) -> (GaussianSet, MergeStats) {
    let mut gaussians = set.gaussians;
    let mut stats = MergeStats::default();

    while stats.passes < config.max_merge_passes && gaussians.len() > 1 {
        stats.passes += 1;
        let candidates = candidate_pairs(&gaussians, config);

        let mut partner: Vec<Option<usize>> = vec![None; gaussians.len()];
        let mut merged_here = 0;
        for c in &candidates {
            if partner[c.i].is_none() && partner[c.j].is_none() {
                partner[c.i] = Some(c.j);
                partner[c.j] = Some(c.i);
                merged_here += 1;
            }
        }
        if merged_here == 0 {
            break;
        }
        stats.merges += merged_here;

        let mut next = Vec::with_capacity(gaussians.len() - merged_here);
        for (i, g) in gaussians.iter().enumerate() {
            match partner[i] {
                None => next.push(*g),
                Some(j) if j > i => next.push(merge_pair_floored(g, &gaussians[j], Some(config.epsilon))),
                Some(_) => {}
            }
        }
        gaussians = next;
    }

    (GaussianSet::new(gaussians), stats)
}
