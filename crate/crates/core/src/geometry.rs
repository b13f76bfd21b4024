//! Pinhole camera model, rigid poses and depth back-projection.
//!
//! Conventions: poses map camera coordinates to world coordinates, the camera
//! looks along its +z axis with +x to the right and +y down, and the image
//! origin is the top-left pixel. Pixel `(u, v)` is column `u`, row `v`, and
//! pixel centers sit on integer coordinates. The world frame is z-up.

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Rgb = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Camera-frame ray through pixel `(u, v)` with unit depth.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn contains(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (self.width - 1) as f64 && pixel.y <= (self.height - 1) as f64
    }

    /// Same image size and principal point, focal lengths scaled by `factor`.
    pub fn with_focal_scale(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            ..*self
        }
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Parses a row-major 3x4 `[R | t]` matrix.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9], values[10],
        );
        let translation = Vec3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// A level camera at `position` whose optical axis points along the
    /// horizontal heading `yaw` (radians, counter-clockwise from world +x).
    pub fn level_camera(position: Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let forward = Vec3::new(c, s, 0.0);
        let right = Vec3::new(s, -c, 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Self {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: position,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        let det = self.rotation.determinant();
        if off > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal with det +1 (|RtR - I|max={off:.3e}, det={det:.9})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// World point expressed in the camera frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.translation
    }

    /// Viewing direction in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }
}

/// Depth image in meters; `0` and NaN mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub values: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl DepthFrame {
    pub fn new(values: Vec<f32>, intrinsics: CameraIntrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        if values.len() != intrinsics.width * intrinsics.height {
            return Err(Error::DimensionMismatch {
                what: "depth",
                got_w: values.len(),
                got_h: 1,
                want_w: intrinsics.width,
                want_h: intrinsics.height,
            });
        }
        if values.iter().any(|d| d.is_finite() && *d < 0.0) || values.iter().any(|d| d.is_infinite()) {
            return Err(Error::InvalidConfig(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            values,
            intrinsics,
            pose,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.values[v * self.intrinsics.width + u];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }

    /// Converts 16-bit millimeter depth (0 = invalid) into meters.
    pub fn from_millimeters(mm: &[u16], intrinsics: CameraIntrinsics, pose: Pose) -> Result<Self> {
        let values = mm.iter().map(|&d| d as f32 / 1000.0).collect();
        Self::new(values, intrinsics, pose)
    }

    pub fn to_millimeters(&self) -> Vec<u16> {
        self.values
            .iter()
            .map(|&d| {
                if d.is_finite() && d > 0.0 {
                    (d as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
                } else {
                    0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl ColorFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "color",
                got_w: pixels.len(),
                got_h: 1,
                want_w: width,
                want_h: height,
            });
        }
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig("color channels must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn uniform(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Rgb {
        let p = self.pixels[v * self.width + u];
        Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "mask",
                got_w: bits.len(),
                got_h: 1,
                want_w: width,
                want_h: height,
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<Rgb>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Vec<Rgb>) -> Result<Self> {
        if points.len() != colors.len() {
            return Err(Error::InvalidConfig(format!(
                "point cloud has {} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidConfig(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        Ok(Self { points, colors })
    }

    /// Cloud with a single uniform color.
    pub fn uniform(points: Vec<Vec3>, color: Rgb) -> Self {
        let colors = vec![color; points.len()];
        Self { points, colors }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec3, color: Rgb) {
        self.points.push(point);
        self.colors.push(color);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.colors.extend_from_slice(&other.colors);
    }
}

fn check_dims(what: &'static str, w: usize, h: usize, k: &CameraIntrinsics) -> Result<()> {
    if w != k.width || h != k.height {
        return Err(Error::DimensionMismatch {
            what,
            got_w: w,
            got_h: h,
            want_w: k.width,
            want_h: k.height,
        });
    }
    Ok(())
}

/// Lifts every masked pixel with valid depth into a world-frame colored point.
pub fn back_project(depth: &DepthFrame, color: &ColorFrame, mask: &BinaryMask) -> Result<PointCloud> {
    let k = &depth.intrinsics;
    k.validate()?;
    check_dims("color", color.width, color.height, k)?;
    check_dims("mask", mask.width, mask.height, k)?;

    let mut cloud = PointCloud::default();
    for v in 0..k.height {
        for u in 0..k.width {
            if !mask.get(u, v) {
                continue;
            }
            let Some(d) = depth.at(u, v) else { continue };
            let p_cam = k.unproject(u as f64, v as f64) * d;
            cloud.push(depth.pose.transform_point(&p_cam), color.at(u, v));
        }
    }
    Ok(cloud)
}

/// Projects a world point into the image. Returns `None` when the point is
/// behind the camera or lands outside the image bounds.
pub fn project(point: &Vec3, intrinsics: &CameraIntrinsics, pose: &Pose) -> Option<(Point2<f64>, f64)> {
    let p = pose.inverse_transform_point(point);
    if p.z <= 0.0 {
        return None;
    }
    let pixel = Point2::new(
        intrinsics.fx * p.x / p.z + intrinsics.cx,
        intrinsics.fy * p.y / p.z + intrinsics.cy,
    );
    intrinsics.contains(&pixel).then_some((pixel, p.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap()
    }

    fn single_pixel(k: CameraIntrinsics, pose: Pose, u: usize, v: usize, d: f32) -> PointCloud {
        let mut values = vec![0.0; k.width * k.height];
        values[v * k.width + u] = d;
        let depth = DepthFrame::new(values, k, pose).unwrap();
        let color = ColorFrame::uniform(k.width, k.height, [0.2, 0.4, 0.6]);
        back_project(&depth, &color, &BinaryMask::full(k.width, k.height)).unwrap()
    }

    #[test]
    fn principal_point_is_optical_axis() {
        let cloud = single_pixel(k100(), Pose::identity(), 50, 50, 1.0);
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((cloud.colors[0] - Rgb::new(0.2, 0.4, 0.6)).norm() < 1e-6);
    }

    #[test]
    fn off_axis_pixel_follows_pinhole() {
        let cloud = single_pixel(k100(), Pose::identity(), 150, 50, 2.0);
        assert!((cloud.points[0] - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn translated_pose_offsets_points() {
        let pose = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let cloud = single_pixel(k100(), pose, 150, 50, 2.0);
        assert!((cloud.points[0] - Vec3::new(3.0, 2.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn project_on_axis_and_behind() {
        let k = k100();
        let (px, d) = project(&Vec3::new(0.0, 0.0, 2.0), &k, &Pose::identity()).unwrap();
        assert_eq!((px.x, px.y, d), (50.0, 50.0, 2.0));
        assert!(project(&Vec3::new(0.0, 0.0, -1.0), &k, &Pose::identity()).is_none());
        // far off to the side
        assert!(project(&Vec3::new(100.0, 0.0, 1.0), &k, &Pose::identity()).is_none());
    }

    #[test]
    fn round_trip_through_pixel() {
        let k = k100();
        let pose = Pose::level_camera(Vec3::new(0.3, -1.0, 0.9), 0.7);
        let cloud = single_pixel(k, pose, 17, 83, 1.234);
        let (px, d) = project(&cloud.points[0], &k, &pose).unwrap();
        assert!((px.x - 17.0).abs() < 1e-6 && (px.y - 83.0).abs() < 1e-6);
        assert!((d - 1.234f32 as f64).abs() < 1e-9);
    }

    #[test]
    fn invalid_depth_and_mask_are_skipped() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let mut values = vec![1.0f32; 16];
        values[0] = 0.0;
        values[1] = f32::NAN;
        let depth = DepthFrame::new(values, k, Pose::identity()).unwrap();
        let color = ColorFrame::uniform(4, 4, [1.0, 1.0, 1.0]);
        let mut mask = BinaryMask::full(4, 4);
        mask.set(3, 3, false);
        let cloud = back_project(&depth, &color, &mask).unwrap();
        assert_eq!(cloud.len(), 13);

        let empty = back_project(&depth, &color, &BinaryMask::empty(4, 4)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let depth = DepthFrame::new(vec![1.0; 16], k, Pose::identity()).unwrap();
        let color = ColorFrame::uniform(4, 4, [1.0, 1.0, 1.0]);
        let err = back_project(&depth, &color, &BinaryMask::full(5, 4)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { what: "mask", .. }));
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::level_camera(Vec3::zeros(), 1.3).validate().is_ok());
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(bad, Vec3::zeros()).is_err());
        let row = Pose::level_camera(Vec3::new(1.0, 2.0, 3.0), 0.4).to_row_major();
        assert_eq!(Pose::from_row_major(&row).unwrap().to_row_major(), row);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn millimeter_conversion() {
        let k = CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0, 2, 1).unwrap();
        let d = DepthFrame::from_millimeters(&[1500, 0], k, Pose::identity()).unwrap();
        assert_eq!(d.at(0, 0), Some(1.5f32 as f64));
        assert_eq!(d.at(1, 0), None);
        assert_eq!(d.to_millimeters(), vec![1500, 0]);
    }
}
