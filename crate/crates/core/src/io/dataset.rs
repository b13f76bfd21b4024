//! Dataset manifests: a JSON file listing frames, plus a pose file with one
//! row-major 3×4 camera-to-world matrix per frame.
//!
//! ```json
//! {
//!   "intrinsics": {"fx": 120, "fy": 120, "cx": 80, "cy": 60, "width": 160, "height": 120},
//!   "poses": "poses.txt",
//!   "frames": [{"frame_id": "f000", "color": "color/f000.png", "depth": "depth/f000.png", "parse": "parse/f000.json"}]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Pose lines may be
//! blank or start with `#`; those are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, Pose};
use crate::map::Observation;
use crate::semantics::load_parse;

use super::raster::{read_color_png, read_depth_png, read_mask_png};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub frame_id: String,
    pub color: PathBuf,
    pub depth: PathBuf,
    pub parse: PathBuf,
}

/// On-disk manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub intrinsics: CameraIntrinsics,
    pub poses: PathBuf,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub frame_id: String,
    pub color: PathBuf,
    pub depth: PathBuf,
    pub parse: PathBuf,
    pub pose: Pose,
}

/// A validated manifest with absolute paths and parsed poses.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
}

fn frame_err(frame_id: &str, reason: impl Into<String>) -> Error {
    Error::Frame {
        frame_id: frame_id.to_string(),
        reason: reason.into(),
    }
}

fn parse_pose_line(line: &str) -> std::result::Result<Pose, String> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("pose value {t:?} is not a number"))
        })
        .collect::<std::result::Result<_, _>>()?;
    let values: [f64; 12] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("pose line has {} numbers, expected 12", v.len()))?;
    Pose::from_row_major(&values).map_err(|e| e.to_string())
}

impl DatasetManifest {
    /// Reads and validates a manifest: unique frame IDs, one pose per frame,
    /// and every referenced file present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        file.intrinsics.validate()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();

        let mut seen = BTreeSet::new();
        for f in &file.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(frame_err(&f.frame_id, "duplicate frame_id"));
            }
        }

        let pose_path = root.join(&file.poses);
        let pose_text = std::fs::read_to_string(&pose_path).map_err(|e| Error::io(&pose_path, e))?;
        let mut pose_lines = pose_text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));

        let mut frames = Vec::with_capacity(file.frames.len());
        for f in file.frames {
            let line = pose_lines
                .next()
                .ok_or_else(|| frame_err(&f.frame_id, format!("{} has no pose line", pose_path.display())))?;
            let pose =
                parse_pose_line(line).map_err(|r| frame_err(&f.frame_id, format!("malformed pose line: {r}")))?;
            let entry = FrameEntry {
                color: root.join(&f.color),
                depth: root.join(&f.depth),
                parse: root.join(&f.parse),
                frame_id: f.frame_id,
                pose,
            };
            for (what, p) in [
                ("color", &entry.color),
                ("depth", &entry.depth),
                ("parse", &entry.parse),
            ] {
                if !p.is_file() {
                    return Err(frame_err(
                        &entry.frame_id,
                        format!("{what} file {} does not exist", p.display()),
                    ));
                }
            }
            frames.push(entry);
        }
        if pose_lines.next().is_some() {
            return Err(Error::InvalidConfig(format!(
                "{} has more pose lines than the manifest has frames",
                pose_path.display()
            )));
        }
        Ok(Self {
            root,
            intrinsics: file.intrinsics,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Decodes one frame: depth in meters, color, parse and its masks.
    pub fn load_frame(&self, index: usize) -> Result<Observation> {
        let entry = &self.frames[index];
        let id = entry.frame_id.as_str();
        let named = |e: Error| match e {
            Error::Frame { .. } => e,
            other => frame_err(id, other.to_string()),
        };
        let k = &self.intrinsics;
        let (w, h, mm) = read_depth_png(&entry.depth).map_err(named)?;
        if (w, h) != (k.width, k.height) {
            return Err(frame_err(
                id,
                format!("depth is {w}x{h}, intrinsics say {}x{}", k.width, k.height),
            ));
        }
        let depth = DepthFrame::from_millimeters(&mm, *k, entry.pose).map_err(named)?;
        let color = read_color_png(&entry.color).map_err(named)?;
        if (color.width, color.height) != (w, h) {
            return Err(frame_err(
                id,
                format!("color is {}x{}, depth is {w}x{h}", color.width, color.height),
            ));
        }
        let parse = load_parse(&entry.parse).map_err(named)?;
        if parse.frame_id != entry.frame_id {
            return Err(frame_err(
                id,
                format!("parse file declares frame_id {:?}", parse.frame_id),
            ));
        }
        let mut masks = BTreeMap::new();
        for inst in &parse.instances {
            let path = inst
                .mask
                .as_ref()
                .ok_or_else(|| frame_err(id, format!("instance {} has no mask path", inst.local_id)))?;
            let mask = read_mask_png(path).map_err(named)?;
            if (mask.width, mask.height) != (w, h) {
                return Err(frame_err(
                    id,
                    format!(
                        "mask of instance {} is {}x{}, frame is {w}x{h}",
                        inst.local_id, mask.width, mask.height
                    ),
                ));
            }
            masks.insert(inst.local_id, mask);
        }
        Ok(Observation {
            depth,
            color,
            parse,
            masks,
        })
    }

    /// Frames in manifest order, decoded lazily.
    pub fn observations(&self) -> impl Iterator<Item = Result<Observation>> + '_ {
        (0..self.frames.len()).map(|i| self.load_frame(i))
    }
}

/// Loads a manifest and yields its decoded frames in order.
pub fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}
