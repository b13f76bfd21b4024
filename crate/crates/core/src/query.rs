//! Task queries over a map snapshot: goal scoring, smoothed value maps,
//! frontier waypoints and situated localization with four-view rendering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Rgb, Vec3};
use crate::grid::{Cell, GridBounds, Occupancy, OccupancyRaster};
use crate::map::{anchor_cell, GlMap, InstanceId, RegionId};
use crate::render::{self, ImageBuffer, RenderCamera, ViewpointOptions};
use crate::semantics::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Instance,
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredUnit {
    pub kind: UnitKind,
    pub id: u32,
    pub score: f64,
    pub anchor: Cell,
}

/// A map unit addressed by kind and global ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub kind: UnitKind,
    pub id: u32,
}

impl UnitRef {
    pub fn instance(id: InstanceId) -> Self {
        Self {
            kind: UnitKind::Instance,
            id: id.0,
        }
    }

    pub fn region(id: RegionId) -> Self {
        Self {
            kind: UnitKind::Region,
            id: id.0,
        }
    }
}

fn unit_gaussians(map: &GlMap, unit: UnitRef) -> Result<crate::estimator::GaussianSet> {
    let missing = || Error::UnknownUnit {
        kind: match unit.kind {
            UnitKind::Instance => "instance",
            UnitKind::Region => "region",
        },
        id: unit.id,
    };
    match unit.kind {
        UnitKind::Instance => map
            .instance(InstanceId(unit.id))
            .map(|u| u.gaussians.clone())
            .ok_or_else(missing),
        UnitKind::Region => map.region_gaussians(RegionId(unit.id)).ok_or_else(missing),
    }
}

/// Renders one unit's Gaussians from the viewpoint that sees most of it,
/// treating the rest of the map as potential occluders.
pub fn render_unit(
    map: &GlMap,
    unit: UnitRef,
    intrinsics: &CameraIntrinsics,
) -> Result<(render::Viewpoint, ImageBuffer)> {
    let set = unit_gaussians(map, unit)?;
    let raster = map.grid.occupancy_raster().ok_or(Error::NoViewpoint)?;
    let occluders: Vec<_> = map.all_gaussians().copied().collect();
    let options = ViewpointOptions {
        agent_height: map.floor_height.unwrap_or(0.0) + map.config.agent_height,
        ..Default::default()
    };
    let vp = render::select_viewpoint(&set, &occluders, &raster, intrinsics, &options)?;
    let camera = vp.camera.with_low_pass(render::DISPLAY_LOW_PASS);
    let image = render::render(&set, &camera, Rgb::zeros());
    Ok((render::Viewpoint { camera, ..vp }, image))
}

/// Scores every instance and region against `goal`.
///
/// With `imaging` set, each unit is rendered from its best viewpoint and the
/// image handed to the scorer alongside the text.
pub fn score_units(
    map: &GlMap,
    goal: &str,
    scorer: &dyn Scorer,
    imaging: Option<&CameraIntrinsics>,
) -> Vec<ScoredUnit> {
    let image_of = |unit: UnitRef| imaging.and_then(|k| render_unit(map, unit, k).ok()).map(|(_, img)| img);
    let mut out = Vec::with_capacity(map.instances.len() + map.regions.len());
    for unit in map.instances.values() {
        let Some(anchor) = map.grid.instance_footprint(unit.id).and_then(anchor_cell) else {
            continue;
        };
        let image = image_of(UnitRef::instance(unit.id));
        out.push(ScoredUnit {
            kind: UnitKind::Instance,
            id: unit.id.0,
            score: scorer.score(&unit.text, image.as_ref(), goal).clamp(0.0, 1.0),
            anchor,
        });
    }
    for region in map.regions.values() {
        let Some(anchor) = map.grid.region_footprint(region.id).and_then(anchor_cell) else {
            continue;
        };
        let image = image_of(UnitRef::region(region.id));
        out.push(ScoredUnit {
            kind: UnitKind::Region,
            id: region.id.0,
            score: scorer.score(&region.text, image.as_ref(), goal).clamp(0.0, 1.0),
            anchor,
        });
    }
    out
}

/// Smoothed relevance field over a block of grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMap {
    pub bounds: GridBounds,
    pub cell_size: f64,
    pub sigma: f64,
    /// Normalizer the raw field was divided by (its maximum, or 1 if all zero).
    pub normalizer: f64,
    /// Row-major values in [0, 1].
    pub values: Vec<f64>,
}

impl ValueMap {
    pub fn get(&self, c: &Cell) -> Option<f64> {
        self.bounds.index(c).map(|i| self.values[i])
    }

    /// Cell of the maximum value; ties go to the lowest row-major index.
    pub fn argmax(&self) -> Option<Cell> {
        argmax_index(&self.values).map(|i| self.bounds.cell(i))
    }

    /// Values before normalization.
    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.normalizer).collect()
    }
}

fn argmax_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Deposits scores at their anchor cells and convolves with a Gaussian kernel
/// of bandwidth `sigma` (meters) truncated at 3σ. Anchors outside `bounds`
/// are ignored. Returns the field before normalization.
pub fn value_field(scored: &[ScoredUnit], bounds: &GridBounds, cell_size: f64, sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "kernel bandwidth must be positive");
    let mut impulses: BTreeMap<Cell, f64> = BTreeMap::new();
    for s in scored {
        if bounds.contains(&s.anchor) && s.score != 0.0 {
            *impulses.entry(s.anchor).or_default() += s.score;
        }
    }

    // Offsets exactly 3σ away must not drop out through rounding of the
    // squared cell size, so the cutoff carries a relative slack of 1e-9.
    let cutoff_sq = (3.0 * sigma).powi(2) * (1.0 + 1e-9);
    let reach = (cutoff_sq.sqrt() / cell_size).floor() as i32;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = ((dx * dx + dy * dy) as f64) * cell_size * cell_size;
            if d2 <= cutoff_sq {
                kernel.push((dx, dy, (-d2 * inv_two_sigma_sq).exp()));
            }
        }
    }

    let mut field = vec![0.0; bounds.len()];
    for (cell, weight) in impulses {
        for &(dx, dy, k) in &kernel {
            if let Some(i) = bounds.index(&Cell::new(cell.x + dx, cell.y + dy)) {
                field[i] += weight * k;
            }
        }
    }
    field
}

pub fn build_value_map(scored: &[ScoredUnit], bounds: GridBounds, cell_size: f64, sigma: f64) -> ValueMap {
    let raw = value_field(scored, &bounds, cell_size, sigma);
    let max = raw.iter().copied().fold(0.0, f64::max);
    let normalizer = if max > 0.0 { max } else { 1.0 };
    ValueMap {
        bounds,
        cell_size,
        sigma,
        normalizer,
        values: raw.into_iter().map(|v| v / normalizer).collect(),
    }
}

/// Value map over the map's whole indexed extent.
pub fn value_map_for(map: &GlMap, scored: &[ScoredUnit], sigma: f64) -> Option<ValueMap> {
    let bounds = map.grid.bounds()?;
    Some(build_value_map(scored, bounds, map.config.cell_size, sigma))
}

const NEIGHBORS8: [(i32, i32); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Free cells with at least one unexplored 8-neighbor, in row-major order.
pub fn frontier_cells(raster: &OccupancyRaster) -> Vec<Cell> {
    raster
        .iter()
        .filter(|(c, s)| {
            *s == Occupancy::Free
                && NEIGHBORS8
                    .iter()
                    .any(|(dx, dy)| raster.get(&Cell::new(c.x + dx, c.y + dy)) == Occupancy::Unexplored)
        })
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontierGroup {
    /// Member nearest the group's centroid (ties in row-major order).
    pub representative: Cell,
    pub cells: Vec<Cell>,
}

/// Frontier cells grouped into 8-connected components.
pub fn detect_frontiers(raster: &OccupancyRaster) -> Vec<FrontierGroup> {
    let cells = frontier_cells(raster);
    let set: BTreeSet<Cell> = cells.iter().copied().collect();
    let mut seen: BTreeSet<Cell> = BTreeSet::new();
    let mut groups = Vec::new();
    for start in &cells {
        if !seen.insert(*start) {
            continue;
        }
        let mut members = vec![*start];
        let mut queue = VecDeque::from([*start]);
        while let Some(c) = queue.pop_front() {
            for (dx, dy) in NEIGHBORS8 {
                let n = Cell::new(c.x + dx, c.y + dy);
                if set.contains(&n) && seen.insert(n) {
                    members.push(n);
                    queue.push_back(n);
                }
            }
        }
        members.sort_by_key(Cell::row_major_key);
        let n = members.len() as f64;
        let (sx, sy) = members
            .iter()
            .fold((0.0, 0.0), |(sx, sy), c| (sx + c.x as f64, sy + c.y as f64));
        let (mx, my) = (sx / n, sy / n);
        let dist = |c: &Cell| (c.x as f64 - mx).powi(2) + (c.y as f64 - my).powi(2);
        let mut representative = members[0];
        for c in &members[1..] {
            if dist(c) < dist(&representative) {
                representative = *c;
            }
        }
        groups.push(FrontierGroup {
            representative,
            cells: members,
        });
    }
    groups
}

/// Frontier nearest the value map's maximum, or `None` when no frontier is left.
///
/// A uniform map carries no preference, so the lowest row-major frontier wins.
pub fn select_waypoint(value_map: &ValueMap, frontiers: &[Cell]) -> Option<Cell> {
    let mut sorted: Vec<Cell> = frontiers.to_vec();
    sorted.sort_by_key(Cell::row_major_key);
    let uniform = value_map.values.windows(2).all(|w| w[0] == w[1]);
    if uniform {
        return sorted.first().copied();
    }
    let peak = value_map.argmax()?;
    let mut best: Option<Cell> = None;
    for c in sorted {
        if best.is_none_or(|b| c.distance_sq(&peak) < b.distance_sq(&peak)) {
            best = Some(c);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SituatedPose {
    pub position: Cell,
    /// Heading in radians, (-π, π], counter-clockwise from +x.
    pub orientation: f64,
    /// Cell the agent is taken to face.
    pub facing: Cell,
    /// Set when position and facing cell coincide and the heading is arbitrary.
    pub degenerate: bool,
}

/// Localizes from already-anchored probability units.
///
/// The position is the region field's argmax snapped to the nearest explored
/// cell; the heading points at the instance field's argmax.
pub fn localize_scored(
    regions: &[ScoredUnit],
    instances: &[ScoredUnit],
    raster: &OccupancyRaster,
    sigma: f64,
) -> Result<SituatedPose> {
    if !regions.iter().any(|u| u.score > 0.0) {
        return Err(Error::LocalizationFailed("all region probabilities are zero".into()));
    }
    if !instances.iter().any(|u| u.score > 0.0) {
        return Err(Error::LocalizationFailed("all instance probabilities are zero".into()));
    }
    let bounds = raster.bounds;
    let h_r = build_value_map(regions, bounds, raster.cell_size, sigma);
    let h_o = build_value_map(instances, bounds, raster.cell_size, sigma);
    let peak = h_r
        .argmax()
        .ok_or_else(|| Error::LocalizationFailed("empty grid".into()))?;
    let facing = h_o
        .argmax()
        .ok_or_else(|| Error::LocalizationFailed("empty grid".into()))?;

    let mut position: Option<Cell> = None;
    for (c, s) in raster.iter() {
        if s.is_explored() && position.is_none_or(|p| c.distance_sq(&peak) < p.distance_sq(&peak)) {
            position = Some(c);
        }
    }
    let position = position.ok_or_else(|| Error::LocalizationFailed("no explored cell to stand on".into()))?;

    let dx = (facing.x - position.x) as f64 * raster.cell_size;
    let dy = (facing.y - position.y) as f64 * raster.cell_size;
    let degenerate = facing == position;
    let orientation = if degenerate { 0.0 } else { dy.atan2(dx) };
    Ok(SituatedPose {
        position,
        orientation,
        facing,
        degenerate,
    })
}

/// Localizes from per-unit probabilities keyed by global ID.
pub fn localize_situation(
    map: &GlMap,
    region_probs: &BTreeMap<RegionId, f64>,
    instance_probs: &BTreeMap<InstanceId, f64>,
    sigma: f64,
) -> Result<SituatedPose> {
    let mut regions = Vec::new();
    for (id, p) in region_probs {
        let anchor = map
            .grid
            .region_footprint(*id)
            .and_then(anchor_cell)
            .ok_or(Error::UnknownUnit {
                kind: "region",
                id: id.0,
            })?;
        regions.push(ScoredUnit {
            kind: UnitKind::Region,
            id: id.0,
            score: p.clamp(0.0, 1.0),
            anchor,
        });
    }
    let mut instances = Vec::new();
    for (id, p) in instance_probs {
        let anchor = map
            .grid
            .instance_footprint(*id)
            .and_then(anchor_cell)
            .ok_or(Error::UnknownUnit {
                kind: "instance",
                id: id.0,
            })?;
        instances.push(ScoredUnit {
            kind: UnitKind::Instance,
            id: id.0,
            score: p.clamp(0.0, 1.0),
            anchor,
        });
    }
    let raster = map
        .grid
        .occupancy_raster()
        .ok_or_else(|| Error::LocalizationFailed("map is empty".into()))?;
    localize_scored(&regions, &instances, &raster, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewDirection {
    Front,
    Back,
    Left,
    Right,
}

impl ViewDirection {
    pub const ALL: [ViewDirection; 4] = [
        ViewDirection::Front,
        ViewDirection::Back,
        ViewDirection::Left,
        ViewDirection::Right,
    ];

    /// Heading offset from the agent's orientation; left is counter-clockwise.
    pub fn yaw_offset(self) -> f64 {
        match self {
            ViewDirection::Front => 0.0,
            ViewDirection::Back => PI,
            ViewDirection::Left => FRAC_PI_2,
            ViewDirection::Right => -FRAC_PI_2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ViewDirection::Front => "front",
            ViewDirection::Back => "back",
            ViewDirection::Left => "left",
            ViewDirection::Right => "right",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledView {
    pub direction: ViewDirection,
    pub yaw: f64,
    pub camera: RenderCamera,
    pub image: ImageBuffer,
}

/// Cameras around the situated pose, one per direction, at `height` (world z).
pub fn four_view_cameras(
    pose: &SituatedPose,
    cell_size: f64,
    intrinsics: &CameraIntrinsics,
    height: f64,
) -> Vec<(ViewDirection, f64, RenderCamera)> {
    let (x, y) = pose.position.center(cell_size);
    ViewDirection::ALL
        .iter()
        .map(|d| {
            let yaw = pose.orientation + d.yaw_offset();
            let cam = RenderCamera::new(*intrinsics, Pose::level_camera(Vec3::new(x, y, height), yaw))
                .with_low_pass(render::DISPLAY_LOW_PASS);
            (*d, yaw, cam)
        })
        .collect()
}

/// Renders front/back/left/right views of every instance around the pose.
pub fn render_four_views(map: &GlMap, pose: &SituatedPose, intrinsics: &CameraIntrinsics) -> Vec<LabeledView> {
    let height = map.floor_height.unwrap_or(0.0) + map.config.agent_height;
    let gaussians: Vec<_> = map.all_gaussians().copied().collect();
    four_view_cameras(pose, map.config.cell_size, intrinsics, height)
        .into_par_iter()
        .map(|(direction, yaw, camera)| LabeledView {
            direction,
            yaw,
            camera,
            image: render::render_gaussians(gaussians.iter(), &camera, Rgb::zeros()),
        })
        .collect()
}
