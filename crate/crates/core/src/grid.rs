//! 2D ground-plane cells and dense occupancy rasters.
//!
//! Cell `(x, y)` covers world `[x·s, (x+1)·s) × [y·s, (y+1)·s)` for cell size
//! `s`; x grows east and y grows north. Row-major order means ascending `y`,
//! then ascending `x`.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn of_point(p: &Vec3, cell_size: f64) -> Self {
        Self::of_xy(p.x, p.y, cell_size)
    }

    pub fn of_xy(x: f64, y: f64, cell_size: f64) -> Self {
        Self {
            x: (x / cell_size).floor() as i32,
            y: (y / cell_size).floor() as i32,
        }
    }

    /// World coordinates of the cell center.
    pub fn center(&self, cell_size: f64) -> (f64, f64) {
        ((self.x as f64 + 0.5) * cell_size, (self.y as f64 + 0.5) * cell_size)
    }

    pub fn distance_sq(&self, other: &Cell) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    /// Key that sorts cells in row-major order.
    pub fn row_major_key(&self) -> (i32, i32) {
        (self.y, self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    #[default]
    Unexplored,
    Free,
    Occupied,
}

impl Occupancy {
    pub fn is_explored(self) -> bool {
        self != Occupancy::Unexplored
    }
}

/// Axis-aligned block of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridBounds {
    pub origin: Cell,
    pub width: usize,
    pub height: usize,
}

impl GridBounds {
    pub fn new(origin: Cell, width: usize, height: usize) -> Self {
        Self { origin, width, height }
    }

    /// Smallest bounds containing every cell, or `None` for no cells.
    pub fn enclosing<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Option<Self> {
        let mut it = cells.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for c in it {
            lo.x = lo.x.min(c.x);
            lo.y = lo.y.min(c.y);
            hi.x = hi.x.max(c.x);
            hi.y = hi.y.max(c.y);
        }
        Some(Self {
            origin: lo,
            width: (hi.x - lo.x + 1) as usize,
            height: (hi.y - lo.y + 1) as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: &Cell) -> bool {
        c.x >= self.origin.x
            && c.y >= self.origin.y
            && ((c.x - self.origin.x) as usize) < self.width
            && ((c.y - self.origin.y) as usize) < self.height
    }

    /// Row-major index of `c`, if inside.
    pub fn index(&self, c: &Cell) -> Option<usize> {
        self.contains(c)
            .then(|| (c.y - self.origin.y) as usize * self.width + (c.x - self.origin.x) as usize)
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(
            self.origin.x + (index % self.width) as i32,
            self.origin.y + (index / self.width) as i32,
        )
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell(i))
    }
}

/// Dense occupancy over `bounds`; cells outside the bounds count as unexplored.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRaster {
    pub bounds: GridBounds,
    pub cell_size: f64,
    pub cells: Vec<Occupancy>,
}

impl OccupancyRaster {
    pub fn filled(bounds: GridBounds, cell_size: f64, state: Occupancy) -> Self {
        Self {
            bounds,
            cell_size,
            cells: vec![state; bounds.len()],
        }
    }

    pub fn get(&self, c: &Cell) -> Occupancy {
        self.bounds.index(c).map_or(Occupancy::Unexplored, |i| self.cells[i])
    }

    pub fn set(&mut self, c: &Cell, state: Occupancy) {
        if let Some(i) = self.bounds.index(c) {
            self.cells[i] = state;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, Occupancy)> + '_ {
        self.cells.iter().enumerate().map(|(i, s)| (self.bounds.cell(i), *s))
    }

    pub fn count(&self, state: Occupancy) -> usize {
        self.cells.iter().filter(|s| **s == state).count()
    }
}
