//! Image files: depth/color/mask PNG decoding, rendered image and value-map export.

use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer as RawImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, ColorFrame};
use crate::grid::{Cell, GridBounds};
use crate::query::ValueMap;
use crate::render::ImageBuffer;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file does not exist"),
        ));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes a 16-bit grayscale depth PNG into millimeters, row-major.
pub fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = open(path)?;
    if !matches!(img, DynamicImage::ImageLuma16(_)) {
        return Err(Error::Frame {
            frame_id: path.display().to_string(),
            reason: format!("depth must be 16-bit grayscale, found {:?}", img.color()),
        });
    }
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

pub fn write_depth_png(path: &Path, width: usize, height: usize, millimeters: &[u16]) -> Result<()> {
    let img: RawImage<Luma<u16>, Vec<u16>> = RawImage::from_raw(width as u32, height as u32, millimeters.to_vec())
        .ok_or_else(|| Error::InvalidConfig("depth buffer does not match its dimensions".into()))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Decodes an 8-bit color PNG into [0, 1] channels.
pub fn read_color_png(path: &Path) -> Result<ColorFrame> {
    let rgb = open(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb
        .pixels()
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    ColorFrame::new(w as usize, h as usize, pixels)
}

pub fn write_color_png(path: &Path, frame: &ColorFrame) -> Result<()> {
    let bytes: Vec<u8> = frame
        .pixels
        .iter()
        .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    write_rgb8(path, frame.width, frame.height, bytes)
}

/// Decodes an 8-bit mask PNG; any nonzero pixel is foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let gray = open(path)?.into_luma8();
    let (w, h) = gray.dimensions();
    BinaryMask::new(w as usize, h as usize, gray.pixels().map(|p| p[0] != 0).collect())
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes = mask.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .expect("mask buffer matches its dimensions")
        .save(path)
        .map_err(|e| image_err(path, e))
}

fn write_rgb8(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::InvalidConfig("image buffer does not match its dimensions".into()))?
        .save(path)
        .map_err(|e| image_err(path, e))
}

/// Writes a rendered image as an 8-bit RGB PNG.
pub fn write_image_png(path: &Path, image: &ImageBuffer) -> Result<()> {
    write_rgb8(path, image.width, image.height, image.to_rgb8())
}

/// Pixel (column, row) of `cell` in exported value-map images, which put
/// north (highest y) at the top.
pub fn value_map_pixel(bounds: &GridBounds, cell: &Cell) -> Option<(usize, usize)> {
    bounds.contains(cell).then(|| {
        let col = (cell.x - bounds.origin.x) as usize;
        let row = bounds.height - 1 - (cell.y - bounds.origin.y) as usize;
        (col, row)
    })
}

fn display_rows(vm: &ValueMap) -> impl Iterator<Item = &[f64]> {
    vm.values.chunks(vm.bounds.width.max(1)).rev()
}

/// Value map as a binary 16-bit PGM (values scaled to 0..=65535, north up).
pub fn encode_value_map_pgm(vm: &ValueMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", vm.bounds.width, vm.bounds.height).into_bytes();
    for row in display_rows(vm) {
        for v in row {
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

pub fn write_value_map_pgm(path: &Path, vm: &ValueMap) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_value_map_pgm(vm)).map_err(|e| Error::io(path, e))
}

/// Parses a binary 16-bit PGM into (width, height, row-major samples).
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let bad = |m: &str| Error::InvalidConfig(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 65535 {
        return Err(bad("expected 16-bit samples"));
    }
    let data = bytes
        .get(pos..)
        .filter(|d| d.len() == w * h * 2)
        .ok_or_else(|| bad("sample count"))?;
    let samples = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, samples))
}

const PALETTE: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Maps t in [0, 1] along a dark-purple → yellow ramp.
pub fn false_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    [0, 1, 2].map(|k| (a[k] + (b[k] - a[k]) * f).round() as u8)
}

pub fn write_value_map_png(path: &Path, vm: &ValueMap) -> Result<()> {
    let bytes = display_rows(vm).flatten().flat_map(|v| false_color(*v)).collect();
    write_rgb8(path, vm.bounds.width, vm.bounds.height, bytes)
}
