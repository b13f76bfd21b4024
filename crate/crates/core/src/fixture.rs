//! Synthetic scenes for hermetic tests and demos: axis-aligned colored boxes
//! standing on a floor at z = 0, rendered by exact ray casting into
//! millimeter depth, 8-bit color and per-box masks, with hand-written parses.
//!
//! In-memory observations are quantized exactly like the files written by
//! [`Fixture::write`], so both paths ingest to identical maps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraIntrinsics, ColorFrame, DepthFrame, Pose, Vec3};
use crate::io::dataset::{ManifestFile, ManifestFrame};
use crate::io::raster::{write_color_png, write_depth_png, write_mask_png};
use crate::map::Observation;
use crate::semantics::{parse_to_json, ParsedInstance, ParsedRegion, SemanticParse};

/// Depth beyond this range reads as invalid, like a real sensor.
pub const MAX_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObject {
    pub min: Vec3,
    pub max: Vec3,
    pub color: [f32; 3],
}

impl BoxObject {
    pub fn new(min: [f64; 3], max: [f64; 3], color: [f32; 3]) -> Self {
        Self {
            min: Vec3::from(min),
            max: Vec3::from(max),
            color,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    /// Ray parameter and hit axis of the first intersection in front of the origin.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[a] - origin[a]) / dir[a];
            let t1 = (self.max[a] - origin[a]) / dir[a];
            let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            if lo > t_near {
                t_near = lo;
                axis = a;
            }
            t_far = t_far.min(hi);
        }
        (t_near <= t_far && t_near > 1e-9).then_some((t_near, axis))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub boxes: Vec<BoxObject>,
    /// Floor rectangle `[min_x, min_y, max_x, max_y]` at z = 0.
    pub floor: [f64; 4],
    pub floor_color: [f32; 3],
}

/// Raw render of one view.
#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub depth_mm: Vec<u16>,
    pub color: ColorFrame,
    /// Visible-pixel mask per box, indexed like `SyntheticScene::boxes`.
    pub box_masks: Vec<BinaryMask>,
}

fn quantize(c: f32) -> f32 {
    (c.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl SyntheticScene {
    pub fn render(&self, intrinsics: &CameraIntrinsics, pose: &Pose) -> SyntheticView {
        let (w, h) = (intrinsics.width, intrinsics.height);
        let mut depth_mm = vec![0u16; w * h];
        let mut pixels = vec![[0.0f32; 3]; w * h];
        let mut box_masks = vec![BinaryMask::empty(w, h); self.boxes.len()];
        let origin = pose.translation;
        for v in 0..h {
            for u in 0..w {
                let ray_cam = intrinsics.unproject(u as f64, v as f64);
                let dir = pose.rotation * ray_cam;
                // `ray_cam` has unit z, so the ray parameter is the camera-frame depth.
                let mut best: Option<(f64, [f32; 3], Option<usize>)> = None;
                if dir.z < -1e-12 {
                    let t = -origin.z / dir.z;
                    let hit = origin + dir * t;
                    let [x0, y0, x1, y1] = self.floor;
                    if t > 0.0 && hit.x >= x0 && hit.x <= x1 && hit.y >= y0 && hit.y <= y1 {
                        best = Some((t, self.floor_color, None));
                    }
                }
                for (i, b) in self.boxes.iter().enumerate() {
                    if let Some((t, axis)) = b.intersect(&origin, &dir) {
                        if best.is_none_or(|(bt, _, _)| t < bt) {
                            let shade = [0.85f32, 0.7, 1.0][axis];
                            best = Some((t, b.color.map(|c| c * shade), Some(i)));
                        }
                    }
                }
                let Some((t, rgb, owner)) = best else { continue };
                if t > MAX_RANGE {
                    continue;
                }
                let idx = v * w + u;
                depth_mm[idx] = (t * 1000.0).round() as u16;
                pixels[idx] = rgb.map(quantize);
                if let Some(i) = owner {
                    box_masks[i].set(u, v, true);
                }
            }
        }
        SyntheticView {
            depth_mm,
            color: ColorFrame {
                width: w,
                height: h,
                pixels,
            },
            box_masks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureInstance {
    pub local_id: u32,
    /// Index into the scene's boxes.
    pub object: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureRegion {
    pub local_id: u32,
    pub text: String,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFrame {
    pub frame_id: String,
    pub pose: Pose,
    pub instances: Vec<FixtureInstance>,
    pub regions: Vec<FixtureRegion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub scene: SyntheticScene,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FixtureFrame>,
}

fn instance(local_id: u32, object: usize, text: &str) -> FixtureInstance {
    FixtureInstance {
        local_id,
        object,
        text: text.to_string(),
    }
}

fn region(local_id: u32, text: &str, members: &[u32]) -> FixtureRegion {
    FixtureRegion {
        local_id,
        text: text.to_string(),
        members: members.to_vec(),
    }
}

/// Camera eye height used by every bundled fixture.
pub const EYE_HEIGHT: f64 = 0.88;

fn eye(x: f64, y: f64, yaw_deg: f64) -> Pose {
    Pose::level_camera(Vec3::new(x, y, EYE_HEIGHT), yaw_deg.to_radians())
}

impl Fixture {
    fn parse(&self, index: usize, mask_dir: Option<&Path>) -> SemanticParse {
        let f = &self.frames[index];
        SemanticParse {
            frame_id: f.frame_id.clone(),
            instances: f
                .instances
                .iter()
                .map(|i| ParsedInstance {
                    local_id: i.local_id,
                    text: i.text.clone(),
                    mask: mask_dir.map(|d| d.join(format!("{}_{}.png", f.frame_id, i.local_id))),
                })
                .collect(),
            regions: f
                .regions
                .iter()
                .map(|r| ParsedRegion {
                    local_id: r.local_id,
                    text: r.text.clone(),
                    members: r.members.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Observation for frame `index`, exactly as it would decode from disk.
    pub fn observation(&self, index: usize) -> Observation {
        let f = &self.frames[index];
        let view = self.scene.render(&self.intrinsics, &f.pose);
        let depth = DepthFrame::from_millimeters(&view.depth_mm, self.intrinsics, f.pose)
            .expect("fixture intrinsics are valid");
        let masks = f
            .instances
            .iter()
            .map(|i| (i.local_id, view.box_masks[i.object].clone()))
            .collect::<BTreeMap<_, _>>();
        Observation {
            depth,
            color: view.color,
            parse: self.parse(index, None),
            masks,
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        (0..self.frames.len()).map(|i| self.observation(i))
    }

    /// Writes a dataset (manifest, poses, PNGs, parse files) under `dir` and
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["color", "depth", "masks", "parse"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut poses = String::new();
        let mut entries = Vec::new();
        for (index, f) in self.frames.iter().enumerate() {
            let view = self.scene.render(&self.intrinsics, &f.pose);
            let color = PathBuf::from(format!("color/{}.png", f.frame_id));
            let depth = PathBuf::from(format!("depth/{}.png", f.frame_id));
            let parse = PathBuf::from(format!("parse/{}.json", f.frame_id));
            write_color_png(&dir.join(&color), &view.color)?;
            write_depth_png(
                &dir.join(&depth),
                self.intrinsics.width,
                self.intrinsics.height,
                &view.depth_mm,
            )?;
            for i in &f.instances {
                let p = dir.join(format!("masks/{}_{}.png", f.frame_id, i.local_id));
                write_mask_png(&p, &view.box_masks[i.object])?;
            }
            // Mask paths in parse files are relative to the parse file.
            let json = parse_to_json(&self.parse(index, Some(Path::new("../masks"))));
            let parse_path = dir.join(&parse);
            std::fs::write(&parse_path, json + "\n").map_err(|e| Error::io(&parse_path, e))?;

            let row: Vec<String> = f.pose.to_row_major().iter().map(|v| format!("{v:.17e}")).collect();
            poses.push_str(&row.join(" "));
            poses.push('\n');
            entries.push(ManifestFrame {
                frame_id: f.frame_id.clone(),
                color,
                depth,
                parse,
            });
        }
        let pose_path = dir.join("poses.txt");
        std::fs::write(&pose_path, poses).map_err(|e| Error::io(&pose_path, e))?;
        let manifest = ManifestFile {
            intrinsics: self.intrinsics,
            poses: PathBuf::from("poses.txt"),
            frames: entries,
        };
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }

    /// Three frames sweeping past a chair and a table.
    ///
    /// Frame 1 sees the chair; frame 2 sees both and calls them a dining
    /// area; frame 3 sees only the table, again as part of the dining area.
    pub fn three_frame() -> Self {
        let scene = SyntheticScene {
            boxes: vec![
                BoxObject::new([1.8, -0.25, 0.0], [2.2, 0.25, 0.9], [0.8, 0.2, 0.2]),
                BoxObject::new([1.7, 1.2, 0.0], [2.3, 1.8, 0.75], [0.2, 0.4, 0.8]),
            ],
            floor: [-0.5, -1.5, 3.0, 3.0],
            floor_color: [0.6, 0.6, 0.55],
        };
        let intrinsics = CameraIntrinsics::new(240.0, 240.0, 160.0, 120.0, 320, 240).expect("valid intrinsics");
        let frames = vec![
            FixtureFrame {
                frame_id: "f000".into(),
                pose: eye(0.0, 0.0, 0.0),
                instances: vec![instance(1, 0, "red chair")],
                regions: vec![],
            },
            FixtureFrame {
                frame_id: "f001".into(),
                pose: eye(0.0, 0.75, 0.0),
                instances: vec![instance(1, 0, "red chair"), instance(2, 1, "blue table")],
                regions: vec![region(1, "dining area", &[1, 2])],
            },
            FixtureFrame {
                frame_id: "f002".into(),
                pose: eye(0.0, 1.5, 0.0),
                instances: vec![instance(1, 1, "blue table")],
                regions: vec![region(1, "dining area", &[1])],
            },
        ];
        Self {
            scene,
            intrinsics,
            frames,
        }
    }

    /// A room with five furniture pieces observed over ten frames while the
    /// camera walks along the south wall and turns.
    pub fn ten_frame_room() -> Self {
        let scene = room_scene();
        let intrinsics = CameraIntrinsics::new(240.0, 240.0, 160.0, 120.0, 320, 240).expect("valid intrinsics");
        let waypoints = [
            (0.0, 0.0, 30.0),
            (0.3, 0.0, 20.0),
            (0.6, 0.0, 10.0),
            (0.9, 0.0, 0.0),
            (1.2, 0.0, -10.0),
            (1.2, 0.3, 30.0),
            (1.2, 0.6, 50.0),
            (1.0, 0.9, 70.0),
            (0.8, 1.2, 90.0),
            (0.6, 1.2, 110.0),
        ];
        let frames = waypoints
            .iter()
            .enumerate()
            .map(|(i, &(x, y, yaw))| {
                let pose = eye(x, y, yaw);
                let view = scene.render(&intrinsics, &pose);
                let visible: Vec<usize> = (0..scene.boxes.len())
                    .filter(|b| view.box_masks[*b].count() >= 80)
                    .collect();
                let instances: Vec<FixtureInstance> = visible
                    .iter()
                    .enumerate()
                    .map(|(k, b)| instance(k as u32 + 1, *b, ROOM_TEXT[*b]))
                    .collect();
                let lid = |obj: usize| instances.iter().find(|i| i.object == obj).map(|i| i.local_id);
                let mut regions = Vec::new();
                let kitchen: Vec<u32> = [0, 1].iter().filter_map(|o| lid(*o)).collect();
                if !kitchen.is_empty() {
                    regions.push(region(1, "kitchen area", &kitchen));
                }
                let living: Vec<u32> = [2, 3, 4].iter().filter_map(|o| lid(*o)).collect();
                if !living.is_empty() {
                    regions.push(region(2, "living room", &living));
                }
                FixtureFrame {
                    frame_id: format!("r{i:03}"),
                    pose,
                    instances,
                    regions,
                }
            })
            .collect();
        Self {
            scene,
            intrinsics,
            frames,
        }
    }

    /// One VGA frame showing all five room objects.
    pub fn five_instance_frame() -> Self {
        let scene = room_scene();
        let intrinsics = CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).expect("valid intrinsics");
        let frames = vec![FixtureFrame {
            frame_id: "vga000".into(),
            pose: eye(-1.5, 1.0, 0.0),
            instances: (0..5).map(|b| instance(b as u32 + 1, b, ROOM_TEXT[b])).collect(),
            regions: vec![region(1, "kitchen area", &[1, 2]), region(2, "living room", &[3, 4, 5])],
        }];
        Self {
            scene,
            intrinsics,
            frames,
        }
    }
}

const ROOM_TEXT: [&str; 5] = [
    "white refrigerator",
    "stove with oven",
    "grey sofa",
    "television on a tv stand",
    "wooden coffee table",
];

fn room_scene() -> SyntheticScene {
    SyntheticScene {
        boxes: vec![
            BoxObject::new([2.6, -0.6, 0.0], [3.2, 0.0, 1.8], [0.92, 0.92, 0.9]),
            BoxObject::new([2.6, 0.3, 0.0], [3.2, 0.9, 0.9], [0.3, 0.3, 0.32]),
            BoxObject::new([1.0, 2.6, 0.0], [2.6, 3.3, 0.8], [0.5, 0.5, 0.55]),
            BoxObject::new([2.8, 1.8, 0.0], [3.2, 2.8, 1.2], [0.1, 0.1, 0.12]),
            BoxObject::new([1.4, 1.6, 0.0], [2.2, 2.1, 0.45], [0.55, 0.35, 0.2]),
        ],
        floor: [-2.0, -1.5, 3.5, 3.5],
        floor_color: [0.7, 0.65, 0.55],
    }
}
