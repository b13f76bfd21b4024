//! Versioned binary map archive.
//!
//! Layout: 8-byte magic, format version (u32), payload length (u64), CRC-32 of
//! the payload (u32), payload. All integers and floats are little-endian;
//! floats are stored as full 64-bit values so a load reproduces the map
//! bit-for-bit. Strings are UTF-8 with a u64 length prefix.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, Gaussian3D, GaussianSet, MergeMode};
use crate::geometry::{Rgb, Vec3};
use crate::grid::{Cell, Occupancy};
use crate::map::{GlMap, IndexGrid, InstanceId, InstanceUnit, MapConfig, RegionId, RegionUnit};
use crate::semantics::Embedding;

pub const MAGIC: &[u8; 8] = b"GLMAPARC";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4;

/// Serializes `map` into archive bytes.
pub fn encode_map(map: &GlMap) -> Vec<u8> {
    let mut w = Writer::default();
    write_config(&mut w, &map.config);
    w.u32(map.next_instance_id);
    w.u32(map.next_region_id);
    match map.floor_height {
        Some(h) => {
            w.u8(1);
            w.f64(h);
        }
        None => w.u8(0),
    }

    w.len(map.instances.len());
    for unit in map.instances.values() {
        w.u32(unit.id.0);
        w.str(&unit.text);
        write_embedding(&mut w, &unit.embedding);
        w.len(unit.gaussians.len());
        for g in unit.gaussians.iter() {
            write_gaussian(&mut w, g);
        }
        w.len(unit.observations.len());
        for fp in &unit.observations {
            w.u64(*fp);
        }
    }

    w.len(map.regions.len());
    for region in map.regions.values() {
        w.u32(region.id.0);
        w.str(&region.text);
        write_embedding(&mut w, &region.embedding);
        w.len(region.members.len());
        for m in &region.members {
            w.u32(m.0);
        }
    }

    let grid = &map.grid;
    w.f64(grid.cell_size);
    w.len(grid.occupancy.len());
    for (c, s) in &grid.occupancy {
        write_cell(&mut w, c);
        w.u8(*s as u8);
    }
    w.len(grid.instance_footprints.len());
    for (id, cells) in &grid.instance_footprints {
        w.u32(id.0);
        write_cells(&mut w, cells);
    }
    w.len(grid.region_footprints.len());
    for (id, cells) in &grid.region_footprints {
        w.u32(id.0);
        write_cells(&mut w, cells);
    }

    let payload = w.buf;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Parses archive bytes, checking magic, version and checksum first.
pub fn decode_map(bytes: &[u8]) -> Result<GlMap> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::CorruptArchive("missing archive header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let stored = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::CorruptArchive(format!(
            "payload is {} bytes, header says {len}",
            payload.len()
        )));
    }
    let computed = crc32fast::hash(payload);
    if computed != stored {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let config = read_config(&mut r)?;
    let next_instance_id = r.u32()?;
    let next_region_id = r.u32()?;
    let floor_height = match r.u8()? {
        0 => None,
        1 => Some(r.f64()?),
        t => return Err(Error::CorruptArchive(format!("bad floor flag {t}"))),
    };

    let mut map = GlMap::new(config)?;
    map.next_instance_id = next_instance_id;
    map.next_region_id = next_region_id;
    map.floor_height = floor_height;

    for _ in 0..r.len()? {
        let id = InstanceId(r.u32()?);
        let text = r.str()?;
        let embedding = read_embedding(&mut r)?;
        let n = r.len()?;
        let mut gaussians = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            gaussians.push(read_gaussian(&mut r)?);
        }
        let mut observations = BTreeSet::new();
        for _ in 0..r.len()? {
            observations.insert(r.u64()?);
        }
        let unit = InstanceUnit {
            id,
            gaussians: GaussianSet::new(gaussians),
            text,
            embedding,
            observations,
        };
        if map.instances.insert(id, unit).is_some() {
            return Err(Error::CorruptArchive(format!("duplicate instance {id}")));
        }
    }

    for _ in 0..r.len()? {
        let id = RegionId(r.u32()?);
        let text = r.str()?;
        let embedding = read_embedding(&mut r)?;
        let n = r.len()?;
        let mut members = BTreeSet::new();
        for _ in 0..n {
            members.insert(InstanceId(r.u32()?));
        }
        let unit = RegionUnit {
            id,
            members,
            text,
            embedding,
        };
        if map.regions.insert(id, unit).is_some() {
            return Err(Error::CorruptArchive(format!("duplicate region {id}")));
        }
    }

    let mut grid = IndexGrid::new(r.f64()?);
    for _ in 0..r.len()? {
        let c = read_cell(&mut r)?;
        let state = match r.u8()? {
            0 => Occupancy::Unexplored,
            1 => Occupancy::Free,
            2 => Occupancy::Occupied,
            t => return Err(Error::CorruptArchive(format!("bad occupancy tag {t}"))),
        };
        grid.occupancy.insert(c, state);
    }
    for _ in 0..r.len()? {
        let id = InstanceId(r.u32()?);
        grid.set_instance_footprint(id, read_cells(&mut r)?);
    }
    for _ in 0..r.len()? {
        let id = RegionId(r.u32()?);
        grid.set_region_footprint(id, read_cells(&mut r)?);
    }
    map.grid = grid;

    if r.pos != payload.len() {
        return Err(Error::CorruptArchive(format!(
            "{} trailing payload bytes",
            payload.len() - r.pos
        )));
    }
    map.check_invariants()
        .map_err(|e| Error::CorruptArchive(format!("archived map is inconsistent: {e}")))?;
    Ok(map)
}

pub fn save_map(map: &GlMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_map(map)).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: &Path) -> Result<GlMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}

fn write_config(w: &mut Writer, c: &MapConfig) {
    w.f64(c.tau_s);
    w.u64(c.buffer_limit as u64);
    let e = &c.estimator;
    w.f64(e.voxel_size);
    w.f64(e.epsilon);
    w.f64(e.lambda_sigma);
    w.f64(e.lambda_color);
    w.f64(e.tau);
    w.f64(e.base_threshold);
    w.f64(e.opacity);
    w.u8(match e.merge_mode {
        MergeMode::Verbatim => 0,
        MergeMode::Flatness => 1,
    });
    w.u32(e.max_merge_passes);
    w.f64(c.cell_size);
    w.f64(c.footprint_sigma);
    w.f64(c.agent_height);
    w.f64(c.floor_band);
    w.u32(c.match_radius_voxels);
}

fn read_config(r: &mut Reader) -> Result<MapConfig> {
    let tau_s = r.f64()?;
    let buffer_limit =
        usize::try_from(r.u64()?).map_err(|_| Error::CorruptArchive("buffer_limit out of range".into()))?;
    let estimator = EstimatorConfig {
        voxel_size: r.f64()?,
        epsilon: r.f64()?,
        lambda_sigma: r.f64()?,
        lambda_color: r.f64()?,
        tau: r.f64()?,
        base_threshold: r.f64()?,
        opacity: r.f64()?,
        merge_mode: match r.u8()? {
            0 => MergeMode::Verbatim,
            1 => MergeMode::Flatness,
            t => return Err(Error::CorruptArchive(format!("bad merge mode tag {t}"))),
        },
        max_merge_passes: r.u32()?,
    };
    Ok(MapConfig {
        tau_s,
        buffer_limit,
        estimator,
        cell_size: r.f64()?,
        footprint_sigma: r.f64()?,
        agent_height: r.f64()?,
        floor_band: r.f64()?,
        match_radius_voxels: r.u32()?,
    })
}

fn write_gaussian(w: &mut Writer, g: &Gaussian3D) {
    for v in g.mean.iter() {
        w.f64(*v);
    }
    // row-major
    for i in 0..3 {
        for j in 0..3 {
            w.f64(g.covariance[(i, j)]);
        }
    }
    for v in g.color.iter() {
        w.f64(*v);
    }
    w.f64(g.opacity);
    w.u64(g.support);
}

fn read_gaussian(r: &mut Reader) -> Result<Gaussian3D> {
    let mean = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    let mut cov = [0.0; 9];
    for v in &mut cov {
        *v = r.f64()?;
    }
    let color = Rgb::new(r.f64()?, r.f64()?, r.f64()?);
    Ok(Gaussian3D {
        mean,
        covariance: Matrix3::from_row_slice(&cov),
        color,
        opacity: r.f64()?,
        support: r.u64()?,
    })
}

fn write_embedding(w: &mut Writer, e: &Embedding) {
    w.len(e.values.len());
    for v in &e.values {
        w.f64(*v);
    }
}

fn read_embedding(r: &mut Reader) -> Result<Embedding> {
    let n = r.len()?;
    let mut values = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        values.push(r.f64()?);
    }
    Ok(Embedding { values })
}

fn write_cell(w: &mut Writer, c: &Cell) {
    w.buf.extend_from_slice(&c.x.to_le_bytes());
    w.buf.extend_from_slice(&c.y.to_le_bytes());
}

fn read_cell(r: &mut Reader) -> Result<Cell> {
    Ok(Cell::new(r.u32()? as i32, r.u32()? as i32))
}

fn write_cells(w: &mut Writer, cells: &BTreeSet<Cell>) {
    w.len(cells.len());
    for c in cells {
        write_cell(w, c);
    }
}

fn read_cells(r: &mut Reader) -> Result<BTreeSet<Cell>> {
    let n = r.len()?;
    let mut cells = BTreeSet::new();
    for _ in 0..n {
        cells.insert(read_cell(r)?);
    }
    Ok(cells)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::CorruptArchive("payload ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|n| *n <= self.buf.len())
            .ok_or_else(|| Error::CorruptArchive(format!("implausible length {n}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptArchive("string is not UTF-8".into()))
    }
}
