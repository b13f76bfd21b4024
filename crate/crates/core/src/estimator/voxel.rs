use std::collections::BTreeMap;

use crate::geometry::Vec3;

pub type VoxelCoord = [i64; 3];

#[inline]
pub fn voxel_of(p: &Vec3, voxel_size: f64) -> VoxelCoord {
    [
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ]
}

/// Sparse partition of point indices by integer voxel coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub occupied: BTreeMap<VoxelCoord, Vec<usize>>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn get(&self, v: &VoxelCoord) -> Option<&[usize]> {
        self.occupied.get(v).map(Vec::as_slice)
    }

    /// Point indices of every occupied voxel within Chebyshev distance 1 of `v`,
    /// in stencil order (dx, then dy, then dz).
    pub fn gather_neighborhood(&self, v: &VoxelCoord) -> Vec<usize> {
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.occupied.get(&[v[0] + dx, v[1] + dy, v[2] + dz]) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out
    }
}

pub fn voxelize(points: &[Vec3], voxel_size: f64) -> VoxelGrid {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut occupied: BTreeMap<VoxelCoord, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        occupied.entry(voxel_of(p, voxel_size)).or_default().push(i);
    }
    VoxelGrid { voxel_size, occupied }
}
