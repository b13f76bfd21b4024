//! The Gaussian-language map: instance units, region units and the 2D index.
//!
//! Instances own a Gaussian set and a text buffer. Regions reference member
//! instances by global ID and carry their own text. Updates are single-writer;
//! queries read a shared reference between updates.

mod index;
mod ingest;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, voxel_of, EstimatorConfig, Gaussian3D, GaussianSet, VoxelCoord};
use crate::grid::Cell;
use crate::semantics::{concat_text, cosine, Embedding, TextModels};

pub use index::{anchor_cell, gaussian_footprint, CellUnits, IndexGrid};
pub use ingest::{extract_instance_cloud, IngestReport, LocalToGlobalMap, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceUnit {
    pub id: InstanceId,
    pub gaussians: GaussianSet,
    pub text: String,
    /// Embedding of `text` under the embedder active at the last update.
    pub embedding: Embedding,
    /// Content fingerprints of every candidate set fused into this unit, so a
    /// repeated observation is recognized instead of counted twice.
    pub observations: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionUnit {
    pub id: RegionId,
    pub members: BTreeSet<InstanceId>,
    pub text: String,
    pub embedding: Embedding,
}

/// A freshly observed instance before it is matched against the map.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCandidate {
    pub gaussians: GaussianSet,
    pub text: String,
    pub embedding: Embedding,
}

/// An observed region whose members are already global IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCandidate {
    pub members: BTreeSet<InstanceId>,
    pub text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Cosine similarity a text pair must strictly exceed to be the same unit.
    pub tau_s: f64,
    /// Text buffer capacity in characters.
    pub buffer_limit: usize,
    pub estimator: EstimatorConfig,
    pub cell_size: f64,
    /// Footprint half-extent in standard deviations.
    pub footprint_sigma: f64,
    pub agent_height: f64,
    /// Half-width of the height band around the floor counted as free space.
    pub floor_band: f64,
    /// Instance geometry check considers Gaussian pairs within this many voxels.
    pub match_radius_voxels: u32,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.8,
            buffer_limit: 300,
            estimator: EstimatorConfig::default(),
            cell_size: 0.05,
            footprint_sigma: 2.0,
            agent_height: 0.88,
            floor_band: 0.1,
            match_radius_voxels: 2,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) {
            return bad("tau_s must lie in (0, 1)");
        }
        if self.buffer_limit == 0 {
            return bad("buffer_limit must be positive");
        }
        if self.cell_size.is_nan() || self.cell_size <= 0.0 {
            return bad("cell_size must be positive");
        }
        if self.footprint_sigma.is_nan() || self.footprint_sigma <= 0.0 {
            return bad("footprint_sigma must be positive");
        }
        if !(self.agent_height > 0.0 && self.floor_band >= 0.0) {
            return bad("agent_height must be positive and floor_band non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlMap {
    pub config: MapConfig,
    pub grid: IndexGrid,
    pub instances: BTreeMap<InstanceId, InstanceUnit>,
    pub regions: BTreeMap<RegionId, RegionUnit>,
    pub next_instance_id: u32,
    pub next_region_id: u32,
    /// Ground height fixed by the first frame that observed geometry.
    pub floor_height: Option<f64>,
}

impl GlMap {
    pub fn new(config: MapConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            grid: IndexGrid::new(config.cell_size),
            config,
            instances: BTreeMap::new(),
            regions: BTreeMap::new(),
            next_instance_id: 0,
            next_region_id: 0,
            floor_height: None,
        })
    }

    pub fn instance(&self, id: InstanceId) -> Option<&InstanceUnit> {
        self.instances.get(&id)
    }

    pub fn region(&self, id: RegionId) -> Option<&RegionUnit> {
        self.regions.get(&id)
    }

    pub fn gaussian_count(&self) -> usize {
        self.instances.values().map(|u| u.gaussians.len()).sum()
    }

    pub fn total_support(&self) -> u64 {
        self.instances.values().map(|u| u.gaussians.total_support()).sum()
    }

    /// Every Gaussian of every instance, in instance-ID order.
    pub fn all_gaussians(&self) -> impl Iterator<Item = &Gaussian3D> {
        self.instances.values().flat_map(|u| u.gaussians.iter())
    }

    /// Gaussians that draw a region: the union of its members' sets.
    pub fn region_gaussians(&self, id: RegionId) -> Option<GaussianSet> {
        let region = self.regions.get(&id)?;
        Some(
            region
                .members
                .iter()
                .filter_map(|m| self.instances.get(m))
                .flat_map(|u| u.gaussians.iter().copied())
                .collect(),
        )
    }

    pub fn instance_candidate(&self, gaussians: GaussianSet, text: &str, models: &TextModels) -> InstanceCandidate {
        InstanceCandidate {
            gaussians,
            text: text.to_string(),
            embedding: models.embedder.embed(text),
        }
    }

    /// Lowest-ID instance that is both semantically and geometrically consistent
    /// with the candidate. A candidate already fused once goes back to the same
    /// instance.
    pub fn match_instance(&self, candidate: &InstanceCandidate) -> Option<InstanceId> {
        if candidate.gaussians.is_empty() {
            return None;
        }
        let fp = observation_fingerprint(&candidate.gaussians);
        if let Some(unit) = self.instances.values().find(|u| u.observations.contains(&fp)) {
            return Some(unit.id);
        }
        self.instances
            .values()
            .find(|unit| {
                cosine(&candidate.embedding, &unit.embedding) > self.config.tau_s
                    && any_mergeable_pair(
                        &candidate.gaussians,
                        &unit.gaussians,
                        &self.config.estimator,
                        self.config.match_radius_voxels as i64,
                    )
            })
            .map(|u| u.id)
    }

    /// Fuses a candidate into an existing instance: Gaussian union refined by
    /// the merge pass, text concatenation, embedding refresh and re-indexing.
    ///
    /// A candidate whose exact Gaussian set was fused before only contributes
    /// its text; its geometry is already part of the unit.
    pub fn merge_into_instance(
        &mut self,
        target: InstanceId,
        candidate: &InstanceCandidate,
        models: &TextModels,
    ) -> Result<()> {
        let limit = self.config.buffer_limit;
        let est = self.config.estimator;
        let unit = self.instances.get_mut(&target).ok_or(Error::UnknownUnit {
            kind: "instance",
            id: target.0,
        })?;

        if unit.observations.insert(observation_fingerprint(&candidate.gaussians)) {
            let mut union = unit.gaussians.gaussians.clone();
            union.extend(candidate.gaussians.iter().copied());
            unit.gaussians = estimator::merge_set(GaussianSet::new(union), &est).0;
        }

        let text = concat_text(&unit.text, &candidate.text, limit, models.summarizer.as_ref());
        if text != unit.text {
            unit.embedding = models.embedder.embed(&text);
            unit.text = text;
        }
        self.refresh_instance_index(target);
        Ok(())
    }

    pub fn register_instance(&mut self, candidate: InstanceCandidate, models: &TextModels) -> InstanceId {
        let id = InstanceId(self.next_instance_id);
        self.next_instance_id += 1;
        let mut text = candidate.text;
        let mut embedding = candidate.embedding;
        if text.chars().count() > self.config.buffer_limit {
            text = models.summarizer.summarize(&text, self.config.buffer_limit);
            embedding = models.embedder.embed(&text);
        }
        self.instances.insert(
            id,
            InstanceUnit {
                id,
                observations: BTreeSet::from([observation_fingerprint(&candidate.gaussians)]),
                gaussians: candidate.gaussians,
                text,
                embedding,
            },
        );
        self.refresh_instance_index(id);
        id
    }

    /// Lowest-ID region with similar text sharing at least one member.
    pub fn match_region(&self, candidate: &RegionCandidate) -> Option<RegionId> {
        self.regions
            .values()
            .find(|r| {
                cosine(&candidate.embedding, &r.embedding) > self.config.tau_s
                    && !r.members.is_disjoint(&candidate.members)
            })
            .map(|r| r.id)
    }

    pub fn merge_into_region(
        &mut self,
        target: RegionId,
        candidate: &RegionCandidate,
        models: &TextModels,
    ) -> Result<()> {
        let limit = self.config.buffer_limit;
        let region = self.regions.get_mut(&target).ok_or(Error::UnknownUnit {
            kind: "region",
            id: target.0,
        })?;
        region.members.extend(candidate.members.iter().copied());
        let text = concat_text(&region.text, &candidate.text, limit, models.summarizer.as_ref());
        if text != region.text {
            region.embedding = models.embedder.embed(&text);
            region.text = text;
        }
        self.refresh_region_index(target);
        Ok(())
    }

    pub fn register_region(&mut self, candidate: RegionCandidate, models: &TextModels) -> Result<RegionId> {
        if candidate.members.is_empty() {
            return Err(Error::InvalidConfig("a region needs at least one member".into()));
        }
        if let Some(m) = candidate.members.iter().find(|m| !self.instances.contains_key(m)) {
            return Err(Error::UnknownUnit {
                kind: "instance",
                id: m.0,
            });
        }
        let id = RegionId(self.next_region_id);
        self.next_region_id += 1;
        let mut text = candidate.text;
        let mut embedding = candidate.embedding;
        if text.chars().count() > self.config.buffer_limit {
            text = models.summarizer.summarize(&text, self.config.buffer_limit);
            embedding = models.embedder.embed(&text);
        }
        self.regions.insert(
            id,
            RegionUnit {
                id,
                members: candidate.members,
                text,
                embedding,
            },
        );
        self.refresh_region_index(id);
        Ok(id)
    }

    /// Drops an instance, detaching it from regions. Regions left without
    /// members are dropped too. IDs are never handed out again.
    pub fn remove_instance(&mut self, id: InstanceId) -> Option<InstanceUnit> {
        let unit = self.instances.remove(&id)?;
        self.grid.set_instance_footprint(id, BTreeSet::new());
        let touched: Vec<RegionId> = self
            .regions
            .values_mut()
            .filter_map(|r| r.members.remove(&id).then_some(r.id))
            .collect();
        for rid in touched {
            if self.regions[&rid].members.is_empty() {
                self.regions.remove(&rid);
                self.grid.set_region_footprint(rid, BTreeSet::new());
            } else {
                self.refresh_region_index(rid);
            }
        }
        Some(unit)
    }

    fn instance_footprint_of(&self, unit: &InstanceUnit) -> BTreeSet<Cell> {
        gaussian_footprint(&unit.gaussians, self.config.cell_size, self.config.footprint_sigma)
    }

    fn region_footprint_of(&self, region: &RegionUnit) -> BTreeSet<Cell> {
        region
            .members
            .iter()
            .filter_map(|m| self.grid.instance_footprint(*m))
            .flat_map(|fp| fp.iter().copied())
            .collect()
    }

    /// Rewrites an instance's footprint and those of the regions containing it.
    fn refresh_instance_index(&mut self, id: InstanceId) {
        let Some(unit) = self.instances.get(&id) else {
            return;
        };
        let fp = self.instance_footprint_of(unit);
        self.grid.set_instance_footprint(id, fp);
        let containing: Vec<RegionId> = self
            .regions
            .values()
            .filter(|r| r.members.contains(&id))
            .map(|r| r.id)
            .collect();
        for rid in containing {
            self.refresh_region_index(rid);
        }
    }

    fn refresh_region_index(&mut self, id: RegionId) {
        let Some(region) = self.regions.get(&id) else {
            return;
        };
        let fp = self.region_footprint_of(region);
        self.grid.set_region_footprint(id, fp);
    }

    /// Index rebuilt from scratch out of the current units and occupancy.
    pub fn rebuild_index(&self) -> IndexGrid {
        let mut grid = IndexGrid::new(self.config.cell_size);
        grid.occupancy = self.grid.occupancy.clone();
        for unit in self.instances.values() {
            grid.set_instance_footprint(unit.id, self.instance_footprint_of(unit));
        }
        for region in self.regions.values() {
            let fp: BTreeSet<Cell> = region
                .members
                .iter()
                .filter_map(|m| grid.instance_footprint(*m))
                .flat_map(|fp| fp.iter().copied())
                .collect();
            grid.set_region_footprint(region.id, fp);
        }
        grid
    }

    /// Checks referential integrity and the text-buffer bound.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(m));
        for r in self.regions.values() {
            if r.members.is_empty() {
                return fail(format!("region {} has no members", r.id));
            }
            if let Some(m) = r.members.iter().find(|m| !self.instances.contains_key(m)) {
                return fail(format!("region {} references missing instance {m}", r.id));
            }
            if r.text.chars().count() > self.config.buffer_limit {
                return fail(format!("region {} text exceeds the buffer", r.id));
            }
        }
        for u in self.instances.values() {
            if u.gaussians.is_empty() {
                return fail(format!("instance {} has no Gaussians", u.id));
            }
            if u.text.chars().count() > self.config.buffer_limit {
                return fail(format!("instance {} text exceeds the buffer", u.id));
            }
            if u.id.0 >= self.next_instance_id {
                return fail(format!("instance {} is ahead of the ID counter", u.id));
            }
        }
        for r in self.regions.values() {
            if r.id.0 >= self.next_region_id {
                return fail(format!("region {} is ahead of the ID counter", r.id));
            }
        }
        for (c, units) in &self.grid.cells {
            if let Some(i) = units.instances.iter().find(|i| !self.instances.contains_key(i)) {
                return fail(format!("cell ({}, {}) references missing instance {i}", c.x, c.y));
            }
            if let Some(r) = units.regions.iter().find(|r| !self.regions.contains_key(r)) {
                return fail(format!("cell ({}, {}) references missing region {r}", c.x, c.y));
            }
        }
        Ok(())
    }
}

/// FNV-1a over the exact bits of every Gaussian parameter, in set order.
pub fn observation_fingerprint(set: &GaussianSet) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |word: u64| {
        for b in word.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for g in set.iter() {
        for v in g.mean.iter().chain(g.covariance.iter()).chain(g.color.iter()) {
            feed(v.to_bits());
        }
        feed(g.opacity.to_bits());
        feed(g.support);
    }
    h
}

/// Whether any pair across the two sets satisfies the merge criterion, looking
/// only at pairs whose mean voxels are within `radius` (Chebyshev).
pub fn any_mergeable_pair(a: &GaussianSet, b: &GaussianSet, config: &EstimatorConfig, radius: i64) -> bool {
    let mut buckets: HashMap<VoxelCoord, Vec<usize>> = HashMap::new();
    for (i, g) in b.iter().enumerate() {
        buckets.entry(voxel_of(&g.mean, config.voxel_size)).or_default().push(i);
    }
    a.iter().any(|ga| {
        let k = voxel_of(&ga.mean, config.voxel_size);
        for dx in -radius..=radius {
            for dy in -radius..=radius {
                for dz in -radius..=radius {
                    if let Some(ids) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&j| estimator::mergeable(ga, &b.gaussians[j], config)) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    })
}
