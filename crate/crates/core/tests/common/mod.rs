//! Shared builders and brute-force oracles for the integration tests.
//!
//! Every oracle here recomputes its quantity directly from the definition,
//! without going through the library routine it is compared against.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use glmap::estimator::{Gaussian3D, GaussianSet};
use glmap::fixture::Fixture;
use glmap::geometry::{PointCloud, Rgb, Vec3};
use glmap::grid::{Cell, GridBounds, Occupancy, OccupancyRaster};
use glmap::map::{GlMap, IngestReport, MapConfig};
use glmap::query::ScoredUnit;
use glmap::semantics::TextModels;
use nalgebra::Matrix3;
use rand::Rng;

/// Builds a map from every frame of `fixture` with default settings.
pub fn build(fixture: &Fixture) -> (GlMap, Vec<IngestReport>) {
    build_with(fixture, MapConfig::default())
}

pub fn build_with(fixture: &Fixture, config: MapConfig) -> (GlMap, Vec<IngestReport>) {
    let models = TextModels::mock();
    let mut map = GlMap::new(config).expect("valid config");
    let reports = fixture
        .observations()
        .map(|obs| map.ingest_frame(&obs, &models).expect("fixture frame ingests"))
        .collect();
    (map, reports)
}

// ---------------------------------------------------------------------------
// Synthetic clouds

/// One of several cloud shapes inside a 15 cm cube, with random colors.
pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    let shape = rng.gen_range(0..3);
    let centers: Vec<Vec3> = (0..4)
        .map(|_| {
            Vec3::new(
                rng.gen_range(0.0..0.15),
                rng.gen_range(0.0..0.15),
                rng.gen_range(0.0..0.15),
            )
        })
        .collect();
    let mut cloud = PointCloud::default();
    for _ in 0..n {
        let p = match shape {
            0 => Vec3::new(
                rng.gen_range(0.0..0.15),
                rng.gen_range(0.0..0.15),
                rng.gen_range(0.0..0.15),
            ),
            1 => {
                let c = centers[rng.gen_range(0..centers.len())];
                c + Vec3::new(
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                )
            }
            _ => Vec3::new(
                rng.gen_range(0.0..0.15),
                rng.gen_range(0.0..0.15),
                0.07 + rng.gen_range(-0.002..0.002),
            ),
        };
        let c = Rgb::new(rng.gen(), rng.gen(), rng.gen());
        cloud.push(p, c);
    }
    cloud
}

/// 1,000 points spread uniformly over a horizontal 0.3×0.3 m square.
pub fn plane_cloud(rng: &mut impl Rng) -> PointCloud {
    let points = (0..1000)
        .map(|_| Vec3::new(rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), 0.5))
        .collect();
    PointCloud::uniform(points, Rgb::new(0.5, 0.5, 0.5))
}

/// 1,000 points spread uniformly over a sphere of the given radius.
pub fn sphere_cloud(rng: &mut impl Rng, radius: f64) -> PointCloud {
    let points = (0..1000)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            Vec3::new(0.5 + radius * s * t.cos(), 0.5 + radius * s * t.sin(), 0.5 + radius * z)
        })
        .collect();
    PointCloud::uniform(points, Rgb::new(0.5, 0.5, 0.5))
}

pub fn occupied_voxel_count(cloud: &PointCloud, voxel: f64) -> usize {
    cloud
        .points
        .iter()
        .map(|p| {
            (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            )
        })
        .collect::<BTreeSet<_>>()
        .len()
}

// ---------------------------------------------------------------------------
// Estimator oracle

pub struct VoxelFit {
    pub key: [i64; 3],
    pub mean: Vec3,
    pub covariance: Matrix3<f64>,
    pub support: usize,
}

/// Per occupied voxel (ascending key): mean and biased scatter of every point
/// whose voxel lies within Chebyshev distance 1, found by scanning all points.
pub fn oracle_voxel_fits(cloud: &PointCloud, voxel: f64, epsilon: f64) -> Vec<VoxelFit> {
    let keys: Vec<[i64; 3]> = cloud
        .points
        .iter()
        .map(|p| {
            [
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ]
        })
        .collect();
    let occupied: BTreeSet<[i64; 3]> = keys.iter().copied().collect();
    occupied
        .into_iter()
        .map(|v| {
            let members: Vec<usize> = (0..keys.len())
                .filter(|&i| (0..3).all(|a| (keys[i][a] - v[a]).abs() <= 1))
                .collect();
            let n = members.len() as f64;
            let mean = members.iter().fold(Vec3::zeros(), |acc, &i| acc + cloud.points[i]) / n;
            let mut cov = Matrix3::zeros();
            for &i in &members {
                let d = cloud.points[i] - mean;
                for r in 0..3 {
                    for c in 0..3 {
                        cov[(r, c)] += d[r] * d[c];
                    }
                }
            }
            VoxelFit {
                key: v,
                mean,
                covariance: cov / n + Matrix3::identity() * epsilon,
                support: members.len(),
            }
        })
        .collect()
}

/// Total support, support-weighted mean and mixture covariance (weighted
/// covariances plus between-mean scatter) of a set.
pub fn mixture_moments(set: &GaussianSet) -> (u64, Vec3, Matrix3<f64>) {
    let total: u64 = set.gaussians.iter().map(|g| g.support).sum();
    let w = total as f64;
    let mean = set
        .gaussians
        .iter()
        .fold(Vec3::zeros(), |acc, g| acc + g.mean * g.support as f64)
        / w;
    let mut second = Matrix3::zeros();
    for g in &set.gaussians {
        let d = g.mean - mean;
        second += (g.covariance + d * d.transpose()) * (g.support as f64 / w);
    }
    (total, mean, second)
}

// ---------------------------------------------------------------------------
// Value-map, footprint and frontier oracles

/// Direct O(cells·units) sum of score-weighted Gaussian kernels, truncated at
/// 3σ (inclusive, so a cell exactly 3σ away counts even when its distance
/// rounds a hair above), with anchors outside the bounds ignored.
pub fn oracle_value_field(scored: &[ScoredUnit], bounds: &GridBounds, cell_size: f64, sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(bounds.width * bounds.height);
    for row in 0..bounds.height {
        for col in 0..bounds.width {
            let (cx, cy) = (bounds.origin.x + col as i32, bounds.origin.y + row as i32);
            let mut h = 0.0;
            for u in scored {
                let a = u.anchor;
                let inside = a.x >= bounds.origin.x
                    && a.y >= bounds.origin.y
                    && a.x < bounds.origin.x + bounds.width as i32
                    && a.y < bounds.origin.y + bounds.height as i32;
                if !inside {
                    continue;
                }
                let dx = (cx - a.x) as f64 * cell_size;
                let dy = (cy - a.y) as f64 * cell_size;
                let d = (dx * dx + dy * dy).sqrt();
                if d <= 3.0 * sigma * (1.0 + 1e-12) {
                    h += u.score * (-(d * d) / (2.0 * sigma * sigma)).exp();
                }
            }
            out.push(h);
        }
    }
    out
}

/// First maximum in row-major order of a field laid out over `bounds`.
pub fn oracle_argmax(field: &[f64], bounds: &GridBounds) -> Cell {
    let mut best = 0;
    for i in 1..field.len() {
        if field[i] > field[best] {
            best = i;
        }
    }
    Cell::new(
        bounds.origin.x + (best % bounds.width) as i32,
        bounds.origin.y + (best / bounds.width) as i32,
    )
}

/// Ground cells covered by the 2σ x/y boxes of the given Gaussians.
pub fn oracle_footprint<'a>(gaussians: impl IntoIterator<Item = &'a Gaussian3D>, cell_size: f64) -> BTreeSet<Cell> {
    let mut cells = BTreeSet::new();
    for g in gaussians {
        let sx = 2.0 * g.covariance[(0, 0)].sqrt();
        let sy = 2.0 * g.covariance[(1, 1)].sqrt();
        let x0 = ((g.mean.x - sx) / cell_size).floor() as i32;
        let x1 = ((g.mean.x + sx) / cell_size).floor() as i32;
        let y0 = ((g.mean.y - sy) / cell_size).floor() as i32;
        let y1 = ((g.mean.y + sy) / cell_size).floor() as i32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                cells.insert(Cell::new(x, y));
            }
        }
    }
    cells
}

/// Centroid of a cell set rounded to the nearest cell.
pub fn oracle_centroid(cells: &BTreeSet<Cell>) -> Cell {
    let n = cells.len() as f64;
    let sx: f64 = cells.iter().map(|c| c.x as f64).sum();
    let sy: f64 = cells.iter().map(|c| c.y as f64).sum();
    Cell::new((sx / n).round() as i32, (sy / n).round() as i32)
}

/// Free cells with an unexplored (or out-of-grid) 8-neighbor.
pub fn oracle_frontiers(raster: &OccupancyRaster) -> BTreeSet<Cell> {
    let b = raster.bounds;
    let state = |x: i32, y: i32| {
        let inside =
            x >= b.origin.x && y >= b.origin.y && x < b.origin.x + b.width as i32 && y < b.origin.y + b.height as i32;
        if inside {
            raster.cells[((y - b.origin.y) as usize) * b.width + (x - b.origin.x) as usize]
        } else {
            Occupancy::Unexplored
        }
    };
    let mut out = BTreeSet::new();
    for y in b.origin.y..b.origin.y + b.height as i32 {
        for x in b.origin.x..b.origin.x + b.width as i32 {
            if state(x, y) != Occupancy::Free {
                continue;
            }
            let mut touches = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy) != (0, 0) && state(x + dx, y + dy) == Occupancy::Unexplored {
                        touches = true;
                    }
                }
            }
            if touches {
                out.insert(Cell::new(x, y));
            }
        }
    }
    out
}

/// 8-connected components of a cell set via repeated label propagation.
pub fn oracle_components(cells: &BTreeSet<Cell>) -> BTreeSet<BTreeSet<Cell>> {
    let mut label: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    loop {
        let mut changed = false;
        for c in cells {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let n = Cell::new(c.x + dx, c.y + dy);
                    if let Some(&ln) = label.get(&n) {
                        let lc = label[c];
                        if ln < lc {
                            label.insert(*c, ln);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<Cell>> = BTreeMap::new();
    for (c, l) in label {
        groups.entry(l).or_default().insert(c);
    }
    groups.into_values().collect()
}

/// Random occupancy grid mixing noise with free-space blobs.
pub fn random_raster(rng: &mut impl Rng) -> OccupancyRaster {
    let w = rng.gen_range(1..60);
    let h = rng.gen_range(1..60);
    let origin = Cell::new(rng.gen_range(-30..30), rng.gen_range(-30..30));
    let mut raster = OccupancyRaster::filled(GridBounds::new(origin, w, h), 0.05, Occupancy::Unexplored);
    let p_free: f64 = rng.gen_range(0.1..0.9);
    let p_occ: f64 = rng.gen_range(0.0..0.3);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let r: f64 = rng.gen();
            let s = if r < p_free {
                Occupancy::Free
            } else if r < p_free + p_occ {
                Occupancy::Occupied
            } else {
                Occupancy::Unexplored
            };
            raster.set(&Cell::new(origin.x + x, origin.y + y), s);
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        let (bx, by) = (rng.gen_range(0..w as i32), rng.gen_range(0..h as i32));
        let rad = rng.gen_range(1..10);
        for y in by - rad..=by + rad {
            for x in bx - rad..=bx + rad {
                if x >= 0 && y >= 0 && x < w as i32 && y < h as i32 {
                    raster.set(&Cell::new(origin.x + x, origin.y + y), Occupancy::Free);
                }
            }
        }
    }
    raster
}
