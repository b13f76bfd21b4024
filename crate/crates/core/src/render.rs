//! CPU Gaussian-splat rasterizer and viewpoint selection.
//!
//! Projection uses the affine EWA approximation: the pinhole Jacobian at the
//! splat mean maps the camera-frame covariance to a screen-space ellipse.
//! Splats are composited front to back, each pixel evaluated only inside the
//! 3σ ellipse, until transmittance drops below [`TRANSMITTANCE_CUTOFF`].

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Point2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Gaussian3D, GaussianSet};
use crate::geometry::{self, CameraIntrinsics, Pose, Rgb, Vec3};
use crate::grid::{Cell, Occupancy, OccupancyRaster};

pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
const SIGMA_CUTOFF_SQ: f64 = 9.0;
const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderCamera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub near: f64,
    pub far: f64,
    /// Screen-space low-pass filter: pixel² added to each splat's screen
    /// covariance diagonal. Zero keeps the pure EWA projection; a fraction of
    /// a pixel keeps sub-pixel splats from aliasing away in display renders.
    pub low_pass: f64,
}

/// Low-pass filter used for images meant to be looked at.
pub const DISPLAY_LOW_PASS: f64 = 0.3;

impl RenderCamera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self {
            intrinsics,
            pose,
            near: 0.05,
            far: 20.0,
            low_pass: 0.0,
        }
    }

    pub fn with_low_pass(mut self, pixels_sq: f64) -> Self {
        self.low_pass = pixels_sq;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        if !(self.low_pass >= 0.0 && self.low_pass.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "low_pass must be non-negative, got {}",
                self.low_pass
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidConfig(format!(
                "camera clip range must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// Plain-text record of the camera: intrinsics line, clip line, low-pass
    /// line, then the row-major 3x4 pose.
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let pose = self
            .pose
            .to_row_major()
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "intrinsics {} {} {} {} {} {}\nclip {} {}\nlow_pass {}\npose {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, self.near, self.far, self.low_pass, pose
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatProjection {
    pub center: Point2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`, the conic used for per-pixel falloff.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Rgb,
    pub opacity: f64,
    /// 3σ radius of the screen ellipse along its major axis, in pixels.
    pub radius: f64,
}

impl SplatProjection {
    #[inline]
    pub fn mahalanobis_sq(&self, px: f64, py: f64) -> f64 {
        let d = Vector2::new(px - self.center.x, py - self.center.y);
        (d.transpose() * self.conic * d)[(0, 0)]
    }

    /// Inclusive pixel bounding box of the 3σ ellipse, clipped to the image.
    fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = (self.center.x - self.radius).ceil().max(0.0);
        let y0 = (self.center.y - self.radius).ceil().max(0.0);
        let x1 = (self.center.x + self.radius).floor().min((width - 1) as f64);
        let y1 = (self.center.y + self.radius).floor().min((height - 1) as f64);
        (x0 <= x1 && y0 <= y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// Projects a Gaussian into the camera, or `None` when culled by the clip
/// range or when its 3σ ellipse misses the image entirely.
pub fn project_gaussian(g: &Gaussian3D, camera: &RenderCamera) -> Option<SplatProjection> {
    let k = &camera.intrinsics;
    let p = camera.pose.inverse_transform_point(&g.mean);
    if !(p.z > camera.near && p.z < camera.far) {
        return None;
    }
    let w = camera.pose.rotation.transpose();
    let iz = 1.0 / p.z;
    let j = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    );
    let t = j * w;
    let mut cov2d = t * g.covariance * t.transpose();
    cov2d = (cov2d + cov2d.transpose()) * 0.5;
    cov2d[(0, 0)] += camera.low_pass;
    cov2d[(1, 1)] += camera.low_pass;
    let conic = cov2d.try_inverse()?;

    let center = Point2::new(k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy);
    let half_trace = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let det = cov2d.determinant();
    let lambda_max = half_trace + (half_trace * half_trace - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();

    let proj = SplatProjection {
        center,
        cov2d,
        conic,
        depth: p.z,
        color: g.color,
        opacity: g.opacity,
        radius,
    };
    proj.pixel_bounds(k.width, k.height)?;
    Some(proj)
}

/// RGBA image, channels in [0, 1]. Alpha is accumulated coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 4]>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgba: [f64; 4]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgba; width * height],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> [f64; 4] {
        self.pixels[v * self.width + u]
    }

    /// Pixel whose coverage is largest; ties resolve to the first in row-major order.
    pub fn max_alpha_pixel(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, p) in self.pixels.iter().enumerate() {
            if p[3] > self.pixels[best][3] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| [p[0], p[1], p[2]].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

fn splat_order(a: &SplatProjection, b: &SplatProjection) -> Ordering {
    // full-content key so equal-depth splats still order independently of input order
    let key = |s: &SplatProjection| {
        [
            s.depth,
            s.center.x,
            s.center.y,
            s.opacity,
            s.color.x,
            s.color.y,
            s.color.z,
            s.cov2d[(0, 0)],
            s.cov2d[(0, 1)],
            s.cov2d[(1, 1)],
        ]
    };
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Projects, culls and depth-sorts splats front to back.
pub fn project_sorted<'a>(
    gaussians: impl IntoIterator<Item = &'a Gaussian3D>,
    camera: &RenderCamera,
) -> Vec<SplatProjection> {
    let list: Vec<&Gaussian3D> = gaussians.into_iter().collect();
    let mut splats: Vec<SplatProjection> = list.par_iter().filter_map(|g| project_gaussian(g, camera)).collect();
    splats.sort_by(splat_order);
    splats
}

/// Renders already-sorted splats.
pub fn rasterize(splats: &[SplatProjection], width: usize, height: usize, background: Rgb) -> ImageBuffer {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let Some((x0, y0, x1, y1)) = s.pixel_bounds(width, height) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let mut pixels = vec![[0.0; 4]; width * height];
    pixels.par_chunks_mut(width).enumerate().for_each(|(v, row)| {
        let py = v as f64;
        for (u, out) in row.iter_mut().enumerate() {
            let px = u as f64;
            let mut rgb = Rgb::zeros();
            let mut transmittance = 1.0;
            for &i in &bins[(v / TILE) * tiles_x + u / TILE] {
                let s = &splats[i as usize];
                let q = s.mahalanobis_sq(px, py);
                if q > SIGMA_CUTOFF_SQ {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(1.0);
                rgb += s.color * (alpha * transmittance);
                transmittance *= 1.0 - alpha;
                if transmittance < TRANSMITTANCE_CUTOFF {
                    break;
                }
            }
            rgb += background * transmittance;
            *out = [
                rgb.x.clamp(0.0, 1.0),
                rgb.y.clamp(0.0, 1.0),
                rgb.z.clamp(0.0, 1.0),
                (1.0 - transmittance).clamp(0.0, 1.0),
            ];
        }
    });
    ImageBuffer { width, height, pixels }
}

pub fn render(set: &GaussianSet, camera: &RenderCamera, background: Rgb) -> ImageBuffer {
    render_gaussians(set.iter(), camera, background)
}

pub fn render_gaussians<'a>(
    gaussians: impl IntoIterator<Item = &'a Gaussian3D>,
    camera: &RenderCamera,
    background: Rgb,
) -> ImageBuffer {
    let splats = project_sorted(gaussians, camera);
    rasterize(&splats, camera.intrinsics.width, camera.intrinsics.height, background)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewpointOptions {
    pub r_min: f64,
    pub r_max: f64,
    /// Depth slack when testing a splat mean against the z-buffer.
    pub occlusion_margin: f64,
    /// Candidates beyond this count are thinned by a fixed row-major stride.
    pub max_candidates: usize,
    pub agent_height: f64,
}

impl Default for ViewpointOptions {
    fn default() -> Self {
        Self {
            r_min: 0.5,
            r_max: 2.5,
            occlusion_margin: 0.1,
            max_candidates: 64,
            agent_height: 0.88,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub camera: RenderCamera,
    pub cell: Cell,
    /// Number of target Gaussians with an in-frustum, unoccluded mean.
    pub score: usize,
    /// Whether the annulus was empty and the full navigable set was searched.
    pub widened: bool,
}

/// Camera at a cell center and agent height facing a world point horizontally.
pub fn camera_facing(
    cell: &Cell,
    cell_size: f64,
    target: &Vec3,
    intrinsics: &CameraIntrinsics,
    agent_height: f64,
) -> RenderCamera {
    let (x, y) = cell.center(cell_size);
    let yaw = (target.y - y).atan2(target.x - x);
    RenderCamera::new(*intrinsics, Pose::level_camera(Vec3::new(x, y, agent_height), yaw))
}

/// Per-pixel nearest depth over the 1σ cores of all splats.
fn depth_buffer(splats: &[SplatProjection], width: usize, height: usize) -> Vec<f64> {
    let mut zbuf = vec![f64::INFINITY; width * height];
    for s in splats {
        let Some((x0, y0, x1, y1)) = s.pixel_bounds(width, height) else {
            continue;
        };
        for v in y0..=y1 {
            for u in x0..=x1 {
                if s.mahalanobis_sq(u as f64, v as f64) <= 1.0 {
                    let z = &mut zbuf[v * width + u];
                    if s.depth < *z {
                        *z = s.depth;
                    }
                }
            }
        }
    }
    zbuf
}

/// Counts target Gaussians whose projected mean is in the frustum and not
/// hidden behind a nearer splat core (target or occluder) along its pixel ray.
pub fn visibility_score(
    target: &[Gaussian3D],
    occluders: &[Gaussian3D],
    camera: &RenderCamera,
    occlusion_margin: f64,
) -> usize {
    let k = &camera.intrinsics;
    let splats: Vec<SplatProjection> = target
        .iter()
        .chain(occluders.iter())
        .filter_map(|g| project_gaussian(g, camera))
        .collect();
    let zbuf = depth_buffer(&splats, k.width, k.height);
    target
        .iter()
        .filter(|g| {
            let Some((px, depth)) = geometry::project(&g.mean, k, &camera.pose) else {
                return false;
            };
            if !(depth > camera.near && depth < camera.far) {
                return false;
            }
            let (u, v) = (px.x.round() as usize, px.y.round() as usize);
            depth <= zbuf[v * k.width + u] + occlusion_margin
        })
        .count()
}

/// Picks the navigable cell and heading that sees the most of `target`.
///
/// Candidates are free cells whose centers lie within `[r_min, r_max]` of the
/// target's support-weighted centroid; when none exist every free cell is
/// considered. Each candidate faces the centroid at agent height. Ties go to
/// the candidate nearest the centroid, then to row-major order.
pub fn select_viewpoint(
    target: &GaussianSet,
    occluders: &[Gaussian3D],
    navigable: &OccupancyRaster,
    intrinsics: &CameraIntrinsics,
    options: &ViewpointOptions,
) -> Result<Viewpoint> {
    let centroid = target.weighted_mean().ok_or(Error::NoViewpoint)?;
    let cs = navigable.cell_size;
    let planar_dist = |c: &Cell| {
        let (x, y) = c.center(cs);
        ((x - centroid.x).powi(2) + (y - centroid.y).powi(2)).sqrt()
    };

    let free: Vec<Cell> = navigable
        .iter()
        .filter(|(_, s)| *s == Occupancy::Free)
        .map(|(c, _)| c)
        .collect();
    let mut widened = false;
    let mut candidates: Vec<Cell> = free
        .iter()
        .copied()
        .filter(|c| {
            let d = planar_dist(c);
            d >= options.r_min && d <= options.r_max
        })
        .collect();
    if candidates.is_empty() {
        widened = true;
        candidates = free;
    }
    if candidates.is_empty() {
        return Err(Error::NoViewpoint);
    }
    if candidates.len() > options.max_candidates.max(1) {
        let stride = candidates.len().div_ceil(options.max_candidates.max(1));
        candidates = candidates.into_iter().step_by(stride).collect();
    }

    let scored: Vec<(usize, RenderCamera)> = candidates
        .par_iter()
        .map(|c| {
            let cam = camera_facing(c, cs, &centroid, intrinsics, options.agent_height);
            let score = visibility_score(&target.gaussians, occluders, &cam, options.occlusion_margin);
            (score, cam)
        })
        .collect();

    let mut best = 0;
    for i in 1..scored.len() {
        let better = scored[i].0 > scored[best].0
            || (scored[i].0 == scored[best].0 && planar_dist(&candidates[i]) < planar_dist(&candidates[best]));
        if better {
            best = i;
        }
    }
    Ok(Viewpoint {
        camera: scored[best].1,
        cell: candidates[best],
        score: scored[best].0,
        widened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridBounds;

    fn camera() -> RenderCamera {
        RenderCamera::new(
            CameraIntrinsics::new(100.0, 100.0, 50.0, 40.0, 101, 81).unwrap(),
            Pose::identity(),
        )
    }

    #[test]
    fn on_axis_isotropic_projection() {
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.05, Rgb::new(1.0, 0.0, 0.0), 0.9);
        let s = project_gaussian(&g, &camera()).unwrap();
        assert_eq!((s.center.x, s.center.y), (50.0, 40.0));
        // (f·s/z)² = (100·0.05/2)² = 6.25
        assert!((s.cov2d - Matrix2::identity() * 6.25).abs().max() < 1e-12);
        assert_eq!(s.depth, 2.0);
    }

    #[test]
    fn behind_and_far_splats_are_culled() {
        let back = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, -2.0), 0.05, Rgb::zeros(), 0.9);
        assert!(project_gaussian(&back, &camera()).is_none());
        let far = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 25.0), 0.05, Rgb::zeros(), 0.9);
        assert!(project_gaussian(&far, &camera()).is_none());
        let aside = Gaussian3D::isotropic(Vec3::new(50.0, 0.0, 2.0), 0.05, Rgb::zeros(), 0.9);
        assert!(project_gaussian(&aside, &camera()).is_none());
    }

    #[test]
    fn empty_set_renders_background() {
        let bg = Rgb::new(0.1, 0.2, 0.3);
        let img = render(&GaussianSet::default(), &camera(), bg);
        assert!(img.pixels.iter().all(|p| *p == [0.1, 0.2, 0.3, 0.0]));
    }

    #[test]
    fn single_splat_peaks_at_principal_point() {
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.05, Rgb::new(1.0, 0.5, 0.25), 0.8);
        let img = render(&GaussianSet::new(vec![g]), &camera(), Rgb::zeros());
        assert_eq!(img.max_alpha_pixel(), (50, 40));
        let c = img.at(50, 40);
        assert!((c[0] - 0.8).abs() < 1e-12 && (c[1] - 0.4).abs() < 1e-12 && (c[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn front_splat_occludes_back_splat() {
        let red = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.05, Rgb::new(1.0, 0.0, 0.0), 0.9);
        let blue = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 3.0), 0.05, Rgb::new(0.0, 0.0, 1.0), 0.7);
        let bg = Rgb::new(0.0, 1.0, 0.0);
        let img = render(&GaussianSet::new(vec![blue, red]), &camera(), bg);
        let c = img.at(50, 40);
        let t1 = 1.0 - 0.9;
        let t2 = t1 * (1.0 - 0.7);
        assert!((c[0] - 0.9).abs() < 1e-12);
        assert!((c[2] - t1 * 0.7).abs() < 1e-12);
        assert!((c[1] - t2).abs() < 1e-12);
        assert!((c[3] - (1.0 - t2)).abs() < 1e-12);
    }

    #[test]
    fn camera_text_record_has_pose() {
        let t = camera().to_text();
        assert!(t.starts_with("intrinsics 100 100 50 40 101 81\nclip 0.05 20\nlow_pass 0\npose "));
        assert_eq!(t.lines().nth(3).unwrap().split_whitespace().count(), 13);
    }

    #[test]
    fn viewpoint_faces_single_gaussian() {
        let target = Gaussian3D::isotropic(Vec3::new(1.0, 1.0, 0.5), 0.05, Rgb::zeros(), 0.8);
        let raster = OccupancyRaster::filled(GridBounds::new(Cell::new(0, 0), 40, 40), 0.05, Occupancy::Free);
        let k = CameraIntrinsics::new(80.0, 80.0, 40.0, 30.0, 80, 60).unwrap();
        let vp = select_viewpoint(
            &GaussianSet::new(vec![target]),
            &[],
            &raster,
            &k,
            &ViewpointOptions::default(),
        )
        .unwrap();
        assert_eq!(vp.score, 1);
        assert!(!vp.widened);
        assert!(geometry::project(&target.mean, &k, &vp.camera.pose).is_some());
        let to_target = (target.mean - vp.camera.pose.position()).normalize();
        let fwd = vp.camera.pose.forward();
        assert!(fwd.dot(&Vec3::new(to_target.x, to_target.y, 0.0).normalize()) > 1.0 - 1e-9);
    }
}
