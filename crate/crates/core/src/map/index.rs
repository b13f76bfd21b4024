use std::collections::{BTreeMap, BTreeSet};

use crate::estimator::GaussianSet;
use crate::grid::{Cell, GridBounds, Occupancy, OccupancyRaster};

use super::{InstanceId, RegionId};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellUnits {
    pub instances: BTreeSet<InstanceId>,
    pub regions: BTreeSet<RegionId>,
}

impl CellUnits {
    fn is_empty(&self) -> bool {
        self.instances.is_empty() && self.regions.is_empty()
    }
}

/// Ground-plane index: which units cover each cell, plus an occupancy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexGrid {
    pub cell_size: f64,
    pub cells: BTreeMap<Cell, CellUnits>,
    pub occupancy: BTreeMap<Cell, Occupancy>,
    pub instance_footprints: BTreeMap<InstanceId, BTreeSet<Cell>>,
    pub region_footprints: BTreeMap<RegionId, BTreeSet<Cell>>,
}

impl IndexGrid {
    pub fn new(cell_size: f64) -> Self {
        Self {
            cell_size,
            cells: BTreeMap::new(),
            occupancy: BTreeMap::new(),
            instance_footprints: BTreeMap::new(),
            region_footprints: BTreeMap::new(),
        }
    }

    pub fn occupancy_at(&self, c: &Cell) -> Occupancy {
        self.occupancy.get(c).copied().unwrap_or_default()
    }

    /// Raises a cell's occupancy; a cell never goes back to a lower state.
    pub fn observe(&mut self, c: Cell, state: Occupancy) {
        let slot = self.occupancy.entry(c).or_default();
        if state > *slot {
            *slot = state;
        }
    }

    pub fn set_instance_footprint(&mut self, id: InstanceId, footprint: BTreeSet<Cell>) {
        if let Some(old) = self.instance_footprints.remove(&id) {
            for c in old {
                if let Some(units) = self.cells.get_mut(&c) {
                    units.instances.remove(&id);
                    if units.is_empty() {
                        self.cells.remove(&c);
                    }
                }
            }
        }
        for c in &footprint {
            self.cells.entry(*c).or_default().instances.insert(id);
        }
        if !footprint.is_empty() {
            self.instance_footprints.insert(id, footprint);
        }
    }

    pub fn set_region_footprint(&mut self, id: RegionId, footprint: BTreeSet<Cell>) {
        if let Some(old) = self.region_footprints.remove(&id) {
            for c in old {
                if let Some(units) = self.cells.get_mut(&c) {
                    units.regions.remove(&id);
                    if units.is_empty() {
                        self.cells.remove(&c);
                    }
                }
            }
        }
        for c in &footprint {
            self.cells.entry(*c).or_default().regions.insert(id);
        }
        if !footprint.is_empty() {
            self.region_footprints.insert(id, footprint);
        }
    }

    pub fn instance_footprint(&self, id: InstanceId) -> Option<&BTreeSet<Cell>> {
        self.instance_footprints.get(&id)
    }

    pub fn region_footprint(&self, id: RegionId) -> Option<&BTreeSet<Cell>> {
        self.region_footprints.get(&id)
    }

    /// Bounds covering every indexed or observed cell.
    pub fn bounds(&self) -> Option<GridBounds> {
        GridBounds::enclosing(self.cells.keys().chain(self.occupancy.keys()))
    }

    pub fn occupancy_raster(&self) -> Option<OccupancyRaster> {
        let bounds = self.bounds()?;
        let mut raster = OccupancyRaster::filled(bounds, self.cell_size, Occupancy::Unexplored);
        for (c, s) in &self.occupancy {
            raster.set(c, *s);
        }
        Some(raster)
    }
}

/// Cells touched by the axis-aligned `k·σ` box of each Gaussian projected
/// onto the ground plane.
pub fn gaussian_footprint(set: &GaussianSet, cell_size: f64, k: f64) -> BTreeSet<Cell> {
    let mut cells = BTreeSet::new();
    for g in set.iter() {
        let ex = k * g.covariance[(0, 0)].max(0.0).sqrt();
        let ey = k * g.covariance[(1, 1)].max(0.0).sqrt();
        let lo = Cell::of_xy(g.mean.x - ex, g.mean.y - ey, cell_size);
        let hi = Cell::of_xy(g.mean.x + ex, g.mean.y + ey, cell_size);
        for y in lo.y..=hi.y {
            for x in lo.x..=hi.x {
                cells.insert(Cell::new(x, y));
            }
        }
    }
    cells
}

/// Footprint centroid rounded to the nearest cell.
pub fn anchor_cell(footprint: &BTreeSet<Cell>) -> Option<Cell> {
    if footprint.is_empty() {
        return None;
    }
    let n = footprint.len() as f64;
    let (sx, sy) = footprint
        .iter()
        .fold((0.0, 0.0), |(sx, sy), c| (sx + c.x as f64, sy + c.y as f64));
    Some(Cell::new((sx / n).round() as i32, (sy / n).round() as i32))
}
