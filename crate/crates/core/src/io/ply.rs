//! PLY point clouds (ASCII and binary, per-vertex RGB) and splat export.

use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::estimator::{Gaussian3D, GaussianSet};
use crate::geometry::{PointCloud, Rgb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Ply(format!("unknown property type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if little {
                    <$t>::from_le_bytes(a)
                } else {
                    <$t>::from_be_bytes(a)
                }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Ply("missing end_header".into()))?;
    let mut body_offset = end + END.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Ply("header is not text".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Ply("missing ply magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(Error::Ply(format!("unknown format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Ply(format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => elements
                .last_mut()
                .ok_or_else(|| Error::Ply("property before element".into()))?
                .properties
                .push(Property::List {
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Ply("property before element".into()))?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            _ => return Err(Error::Ply(format!("unrecognized header line {line:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Ply("missing format line".into()))?,
        elements,
        body_offset,
    })
}

/// Reads every element's rows as f64 scalars; list properties are skipped.
/// Returns the rows of the element named `wanted` with its scalar property names.
fn read_element(bytes: &[u8], wanted: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    let names_of = |e: &Element| -> Vec<String> {
        e.properties
            .iter()
            .filter_map(|p| match p {
                Property::Scalar { name, .. } => Some(name.clone()),
                Property::List { .. } => None,
            })
            .collect()
    };

    match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::Ply("body is not text".into()))?;
            let mut tokens = text.split_whitespace();
            let mut next = || -> Result<f64> {
                let t = tokens.next().ok_or_else(|| Error::Ply("body ends early".into()))?;
                t.parse::<f64>().map_err(|_| Error::Ply(format!("bad number {t:?}")))
            };
            for e in &header.elements {
                let keep = e.name == wanted;
                let mut rows = Vec::with_capacity(if keep { e.count } else { 0 });
                for _ in 0..e.count {
                    let mut row = Vec::new();
                    for p in &e.properties {
                        match p {
                            Property::Scalar { .. } => row.push(next()?),
                            Property::List { .. } => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                            }
                        }
                    }
                    if keep {
                        rows.push(row);
                    }
                }
                if keep {
                    return Ok((names_of(e), rows));
                }
            }
        }
        Format::BinaryLe | Format::BinaryBe => {
            let little = header.format == Format::BinaryLe;
            let mut pos = 0usize;
            let mut take = |n: usize| -> Result<&[u8]> {
                let s = body
                    .get(pos..pos + n)
                    .ok_or_else(|| Error::Ply("body ends early".into()))?;
                pos += n;
                Ok(s)
            };
            for e in &header.elements {
                let keep = e.name == wanted;
                let mut rows = Vec::with_capacity(if keep { e.count } else { 0 });
                for _ in 0..e.count {
                    let mut row = Vec::new();
                    for p in &e.properties {
                        match p {
                            Property::Scalar { ty, .. } => row.push(ty.decode(take(ty.size())?, little)),
                            Property::List { count, item } => {
                                let n = count.decode(take(count.size())?, little) as usize;
                                take(n * item.size())?;
                            }
                        }
                    }
                    if keep {
                        rows.push(row);
                    }
                }
                if keep {
                    return Ok((names_of(e), rows));
                }
            }
        }
    }
    Err(Error::Ply(format!("no {wanted} element")))
}

fn column(names: &[String], want: &[&str]) -> Option<usize> {
    names.iter().position(|n| want.contains(&n.as_str()))
}

/// Parses a PLY point cloud. Colors come from `red/green/blue` (8-bit or
/// float in [0, 1]); points without color properties are gray.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let (names, rows) = read_element(bytes, "vertex")?;
    let col = |n: &str| column(&names, &[n]).ok_or_else(|| Error::Ply(format!("vertex has no {n} property")));
    let (xi, yi, zi) = (col("x")?, col("y")?, col("z")?);
    let rgb = match (
        column(&names, &["red", "r"]),
        column(&names, &["green", "g"]),
        column(&names, &["blue", "b"]),
    ) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let header = parse_header(bytes)?;
    let float_color = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .map(|e| {
            e.properties.iter().any(|p| {
                matches!(p, Property::Scalar { name, ty: Scalar::F32 | Scalar::F64 } if name == "red" || name == "r")
            })
        })
        .unwrap_or(false);

    let mut cloud = PointCloud::default();
    for row in rows {
        let p = Vec3::new(row[xi], row[yi], row[zi]);
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::Ply("non-finite vertex position".into()));
        }
        let c = match rgb {
            Some(idx) => {
                let scale = if float_color { 1.0 } else { 255.0 };
                Rgb::new(row[idx[0]], row[idx[1]], row[idx[2]]) / scale
            }
            None => Rgb::new(0.5, 0.5, 0.5),
        };
        cloud.push(p, c.map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(cloud)
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_point_cloud(&bytes)
}

/// Writes a point cloud as binary little-endian PLY with 8-bit RGB.
pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in c.iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

const SPLAT_FIELDS: [&str; 10] = [
    "x", "y", "z", "cov_xx", "cov_xy", "cov_xz", "cov_yy", "cov_yz", "cov_zz", "opacity",
];

/// Splat PLY: binary little-endian, float position, the six upper-triangle
/// covariance entries, 8-bit RGB and float opacity.
pub fn encode_splats<'a>(gaussians: impl ExactSizeIterator<Item = &'a Gaussian3D>) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\ncomment gaussian splats: covariance in m^2, world frame z-up\nelement vertex {}\n\
property float x\nproperty float y\nproperty float z\n\
property float cov_xx\nproperty float cov_xy\nproperty float cov_xz\nproperty float cov_yy\nproperty float cov_yz\nproperty float cov_zz\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float opacity\nend_header\n",
        gaussians.len()
    )
    .into_bytes();
    for g in gaussians {
        let s = &g.covariance;
        let floats = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
        ];
        for v in floats {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in g.color.iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.extend_from_slice(&(g.opacity as f32).to_le_bytes());
    }
    out
}

pub fn write_splats(path: &Path, set: &GaussianSet) -> Result<()> {
    std::fs::write(path, encode_splats(set.iter())).map_err(|e| Error::io(path, e))
}

/// Reads a splat PLY written by [`encode_splats`]. Support is not stored and
/// comes back as 1.
pub fn parse_splats(bytes: &[u8]) -> Result<GaussianSet> {
    let (names, rows) = read_element(bytes, "vertex")?;
    let mut idx = [0usize; 10];
    for (slot, field) in idx.iter_mut().zip(SPLAT_FIELDS) {
        *slot = column(&names, &[field]).ok_or_else(|| Error::Ply(format!("splat has no {field} property")))?;
    }
    let rgb = [
        column(&names, &["red"]).ok_or_else(|| Error::Ply("splat has no red".into()))?,
        column(&names, &["green"]).ok_or_else(|| Error::Ply("splat has no green".into()))?,
        column(&names, &["blue"]).ok_or_else(|| Error::Ply("splat has no blue".into()))?,
    ];
    Ok(rows
        .iter()
        .map(|r| {
            let v = |k: usize| r[idx[k]];
            Gaussian3D {
                mean: Vec3::new(v(0), v(1), v(2)),
                covariance: Matrix3::new(v(3), v(4), v(5), v(4), v(6), v(7), v(5), v(7), v(8)),
                color: Rgb::new(r[rgb[0]], r[rgb[1]], r[rgb[2]]) / 255.0,
                opacity: v(9),
                support: 1,
            }
        })
        .collect())
}
