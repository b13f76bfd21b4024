use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{estimate, GaussianSet};
use crate::geometry::{back_project, BinaryMask, ColorFrame, DepthFrame, PointCloud};
use crate::grid::{Cell, Occupancy};
use crate::semantics::{SemanticParse, TextModels};

use super::{GlMap, InstanceId, RegionCandidate, RegionId};

/// Local (per-frame) instance ID to global map ID.
pub type LocalToGlobalMap = BTreeMap<u32, InstanceId>;

/// One posed RGB-D frame with its semantic parse and per-instance masks.
#[derive(Debug, Clone)]
pub struct Observation {
    pub depth: DepthFrame,
    pub color: ColorFrame,
    pub parse: SemanticParse,
    /// Masks keyed by local instance ID.
    pub masks: BTreeMap<u32, BinaryMask>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub frame_id: String,
    pub instance_map: LocalToGlobalMap,
    pub region_map: BTreeMap<u32, RegionId>,
    pub registered_instances: Vec<InstanceId>,
    pub merged_instances: Vec<InstanceId>,
    pub registered_regions: Vec<RegionId>,
    pub merged_regions: Vec<RegionId>,
    /// Local instance IDs whose mask produced no valid depth.
    pub skipped_instances: Vec<u32>,
    /// Local region IDs left without any mapped member.
    pub skipped_regions: Vec<u32>,
}

/// Back-projects the masked pixels. `None` when nothing valid remains.
pub fn extract_instance_cloud(depth: &DepthFrame, color: &ColorFrame, mask: &BinaryMask) -> Result<Option<PointCloud>> {
    let cloud = back_project(depth, color, mask)?;
    Ok((!cloud.is_empty()).then_some(cloud))
}

impl GlMap {
    /// Incremental update with one observation: instances first (building the
    /// local-to-global mapping), then regions through that mapping, then the
    /// occupancy layer from the whole frame.
    pub fn ingest_frame(&mut self, obs: &Observation, models: &TextModels) -> Result<IngestReport> {
        let frame_err = |reason: String| Error::Frame {
            frame_id: obs.parse.frame_id.clone(),
            reason,
        };
        obs.parse.validate()?;
        if obs.color.width != obs.depth.width() || obs.color.height != obs.depth.height() {
            return Err(frame_err(format!(
                "color is {}x{} but depth is {}x{}",
                obs.color.width,
                obs.color.height,
                obs.depth.width(),
                obs.depth.height()
            )));
        }
        for inst in &obs.parse.instances {
            if !obs.masks.contains_key(&inst.local_id) {
                return Err(frame_err(format!("no mask for instance {}", inst.local_id)));
            }
        }

        let est = self.config.estimator;
        let estimated: Vec<(u32, Option<GaussianSet>)> = obs
            .parse
            .instances
            .par_iter()
            .map(|inst| {
                let mask = &obs.masks[&inst.local_id];
                let cloud = extract_instance_cloud(&obs.depth, &obs.color, mask)?;
                Ok((inst.local_id, cloud.map(|c| estimate(&c, &est))))
            })
            .collect::<Result<_>>()?;

        let mut report = IngestReport {
            frame_id: obs.parse.frame_id.clone(),
            ..Default::default()
        };

        for (inst, (local_id, gaussians)) in obs.parse.instances.iter().zip(estimated) {
            let Some(gaussians) = gaussians.filter(|g| !g.is_empty()) else {
                report.skipped_instances.push(local_id);
                continue;
            };
            let candidate = self.instance_candidate(gaussians, &inst.text, models);
            let global = match self.match_instance(&candidate) {
                Some(id) => {
                    self.merge_into_instance(id, &candidate, models)?;
                    report.merged_instances.push(id);
                    id
                }
                None => {
                    let id = self.register_instance(candidate, models);
                    report.registered_instances.push(id);
                    id
                }
            };
            report.instance_map.insert(local_id, global);
        }

        for region in &obs.parse.regions {
            let members: BTreeSet<InstanceId> = region
                .members
                .iter()
                .filter_map(|m| report.instance_map.get(m).copied())
                .collect();
            if members.is_empty() {
                report.skipped_regions.push(region.local_id);
                continue;
            }
            let candidate = RegionCandidate {
                members,
                text: region.text.clone(),
                embedding: models.embedder.embed(&region.text),
            };
            let global = match self.match_region(&candidate) {
                Some(id) => {
                    self.merge_into_region(id, &candidate, models)?;
                    report.merged_regions.push(id);
                    id
                }
                None => {
                    let id = self.register_region(candidate, models)?;
                    report.registered_regions.push(id);
                    id
                }
            };
            report.region_map.insert(region.local_id, global);
        }

        let full = BinaryMask::full(obs.depth.width(), obs.depth.height());
        let frame_cloud = back_project(&obs.depth, &obs.color, &full)?;
        self.update_occupancy(&frame_cloud);

        Ok(report)
    }

    /// Marks floor-height cells free and cells with geometry between the floor
    /// band and agent height occupied.
    pub fn update_occupancy(&mut self, cloud: &PointCloud) {
        if cloud.is_empty() {
            return;
        }
        let floor = match self.floor_height {
            Some(h) => h,
            None => {
                let h = estimate_floor_height(cloud);
                self.floor_height = Some(h);
                h
            }
        };
        let band = self.config.floor_band;
        let top = floor + self.config.agent_height;
        let cs = self.config.cell_size;
        let mut observed: BTreeMap<Cell, Occupancy> = BTreeMap::new();
        for p in &cloud.points {
            let state = if (p.z - floor).abs() <= band {
                Occupancy::Free
            } else if p.z > floor + band && p.z <= top {
                Occupancy::Occupied
            } else {
                continue;
            };
            let slot = observed.entry(Cell::of_point(p, cs)).or_default();
            if state > *slot {
                *slot = state;
            }
        }
        for (c, s) in observed {
            self.grid.observe(c, s);
        }
    }
}

const FLOOR_BIN: f64 = 0.02;

/// Mode of point heights within the lowest decile, at 2 cm resolution.
pub(crate) fn estimate_floor_height(cloud: &PointCloud) -> f64 {
    let mut zs: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
    zs.sort_by(f64::total_cmp);
    let decile = &zs[..(zs.len() / 10).max(1)];
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for z in decile {
        *bins.entry((z / FLOOR_BIN).floor() as i64).or_default() += 1;
    }
    let (bin, _) = bins
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("decile is non-empty");
    (*bin as f64 + 0.5) * FLOOR_BIN
}
