//! Command-line surface. The binary only forwards `std::env::args` here, so
//! every command is callable (and testable) in-process.
//!
//! Human-readable progress goes to standard error; machine-readable results
//! go to standard output as single-line JSON, or to the requested files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimator::{GaussianSet, MergeMode};
use crate::fixture::Fixture;
use crate::geometry::CameraIntrinsics;
use crate::grid::Occupancy;
use crate::io::config::{load_config, ConfigOverrides};
use crate::io::dataset::DatasetManifest;
use crate::io::raster::{write_image_png, write_value_map_pgm, write_value_map_png};
use crate::io::{archive, ply};
use crate::map::{GlMap, InstanceId, RegionId};
use crate::query::{self, UnitRef};
use crate::semantics::{MockScorer, ReplayBackend, Scorer, TextModels};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "glmap",
    version,
    about = "Gaussian-language mapping: build, query and export semantic 3D maps"
)]
pub struct Cli {
    /// Recorded model outputs (embeddings, summaries, scores) replayed instead
    /// of the deterministic mock models; unrecorded inputs fall back to mocks.
    #[arg(long, global = true, value_name = "JSON")]
    pub replay: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest every frame of a dataset and write a map archive.
    Build(BuildArgs),
    /// Print unit, Gaussian and occupancy counts of an archive.
    Stats {
        #[arg(long)]
        map: PathBuf,
    },
    /// Score units against a goal and export the smoothed value map.
    ValueMap(ValueMapArgs),
    /// Print the frontier waypoint for a goal.
    Waypoint {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        goal: String,
        /// Kernel bandwidth in meters.
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
    },
    /// Render one instance or region from its best viewpoint.
    Render(RenderArgs),
    /// Localize from region/instance probabilities and render four views.
    Localize(LocalizeArgs),
    /// Export Gaussians as a splat PLY.
    ExportSplats {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export a single instance instead of the whole map.
        #[arg(long)]
        unit: Option<u32>,
    },
    /// Write one of the bundled synthetic datasets.
    MakeFixture {
        #[arg(long, value_enum)]
        name: FixtureName,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    ThreeFrame,
    Room,
    Vga,
}

impl FixtureName {
    pub fn fixture(self) -> Fixture {
        match self {
            FixtureName::ThreeFrame => Fixture::three_frame(),
            FixtureName::Room => Fixture::ten_frame_room(),
            FixtureName::Vga => Fixture::five_instance_frame(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeModeArg {
    Verbatim,
    Flatness,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with MapConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from an existing archive instead of an empty map; its stored
    /// configuration is used.
    #[arg(long, conflicts_with_all = ["config", "voxel_size", "merge_mode", "tau_s", "cell_size"])]
    pub resume: Option<PathBuf>,
    /// Skip this many leading manifest frames.
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    /// Ingest at most this many frames.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long, value_enum)]
    pub merge_mode: Option<MergeModeArg>,
    #[arg(long)]
    pub tau_s: Option<f64>,
    #[arg(long)]
    pub cell_size: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValueMapArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub goal: String,
    /// 16-bit PGM output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional false-color PNG output.
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    /// Focal length in pixels (both axes); principal point at the image center.
    #[arg(long, default_value_t = 240.0)]
    pub focal: f64,
}

impl CameraArgs {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Instance ID to render.
    #[arg(long, required_unless_present = "region", conflicts_with = "region")]
    pub unit: Option<u32>,
    /// Region ID to render.
    #[arg(long)]
    pub region: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// JSON `{"regions": {"<id>": p, ...}, "instances": {"<id>": p, ...}}`.
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbabilityFile {
    #[serde(default)]
    regions: BTreeMap<u32, f64>,
    #[serde(default)]
    instances: BTreeMap<u32, f64>,
}

struct Backends {
    models: TextModels,
    scorer: Box<dyn Scorer>,
}

fn backends(replay: Option<&Path>) -> Result<Backends> {
    Ok(match replay {
        Some(p) => {
            let backend = ReplayBackend::load(p)?;
            Backends {
                models: TextModels {
                    embedder: Box::new(backend.clone()),
                    summarizer: Box::new(backend.clone()),
                },
                scorer: Box::new(backend),
            }
        }
        None => Backends {
            models: TextModels::mock(),
            scorer: Box::new(MockScorer),
        },
    })
}

fn emit(out: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::io("<stdout>", e))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")))
    }
}

/// Ingests the selected frames; decoding of the next frame overlaps ingest of
/// the current one.
pub fn build(args: &BuildArgs, models: &TextModels, out: &mut dyn Write) -> Result<GlMap> {
    let mut map = match &args.resume {
        Some(path) => archive::load_map(path)?,
        None => {
            let overrides = ConfigOverrides {
                voxel_size: args.voxel_size,
                merge_mode: args.merge_mode.map(|m| match m {
                    MergeModeArg::Verbatim => MergeMode::Verbatim,
                    MergeModeArg::Flatness => MergeMode::Flatness,
                }),
                tau_s: args.tau_s,
                cell_size: args.cell_size,
            };
            GlMap::new(load_config(args.config.as_deref(), &overrides)?)?
        }
    };
    let dataset = DatasetManifest::load(&args.manifest)?;
    let end = args.limit.map_or(dataset.len(), |n| (args.skip + n).min(dataset.len()));
    let indices: Vec<usize> = (args.skip.min(end)..end).collect();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel(1);
        let dataset = &dataset;
        let indices = &indices;
        scope.spawn(move || {
            for &i in indices {
                let decoded = dataset.load_frame(i);
                let failed = decoded.is_err();
                if tx.send(decoded).is_err() || failed {
                    break;
                }
            }
        });
        for obs in rx {
            let obs = obs?;
            let report = map.ingest_frame(&obs, models)?;
            eprintln!(
                "ingested {}: {} new, {} merged instances; {} new, {} merged regions",
                report.frame_id,
                report.registered_instances.len(),
                report.merged_instances.len(),
                report.registered_regions.len(),
                report.merged_regions.len()
            );
            emit(
                out,
                json!({
                    "frame_id": report.frame_id,
                    "instances": map.instances.len(),
                    "regions": map.regions.len(),
                    "gaussians": map.gaussian_count(),
                    "instance_map": report.instance_map.iter().map(|(l, g)| (l.to_string(), g.0)).collect::<BTreeMap<_, _>>(),
                    "region_map": report.region_map.iter().map(|(l, g)| (l.to_string(), g.0)).collect::<BTreeMap<_, _>>(),
                }),
            )?;
        }
        Ok(())
    })?;

    map.check_invariants()?;
    archive::save_map(&map, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(map)
}

pub fn stats_json(map: &GlMap) -> serde_json::Value {
    let raster = map.grid.occupancy_raster();
    let (free, occupied, unexplored, bounds) = match &raster {
        Some(r) => (
            r.count(Occupancy::Free),
            r.count(Occupancy::Occupied),
            r.count(Occupancy::Unexplored),
            json!({"origin": [r.bounds.origin.x, r.bounds.origin.y], "width": r.bounds.width, "height": r.bounds.height}),
        ),
        None => (0, 0, 0, serde_json::Value::Null),
    };
    json!({
        "instances": map.instances.len(),
        "regions": map.regions.len(),
        "gaussians": map.gaussian_count(),
        "support": map.total_support(),
        "cell_size": map.config.cell_size,
        "occupancy": {"free": free, "occupied": occupied, "unexplored": unexplored},
        "bounds": bounds,
    })
}

fn cell_json(c: &crate::grid::Cell, cell_size: f64) -> serde_json::Value {
    let (x, y) = c.center(cell_size);
    json!({"x": c.x, "y": c.y, "world": [x, y]})
}

fn run_command(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let backends = backends(cli.replay.as_deref())?;
    match &cli.command {
        Command::Build(args) => {
            build(args, &backends.models, out)?;
        }
        Command::Stats { map } => {
            let map = archive::load_map(map)?;
            emit(out, stats_json(&map))?;
        }
        Command::ValueMap(args) => {
            check_sigma(args.sigma)?;
            let map = archive::load_map(&args.map)?;
            let scored = query::score_units(&map, &args.goal, backends.scorer.as_ref(), None);
            let vm = query::value_map_for(&map, &scored, args.sigma)
                .ok_or_else(|| Error::InvalidConfig("map has no indexed cells".into()))?;
            write_value_map_pgm(&args.out, &vm)?;
            if let Some(png) = &args.png {
                write_value_map_png(png, &vm)?;
            }
            let peak = vm.argmax().expect("non-empty bounds");
            emit(
                out,
                json!({
                    "argmax": cell_json(&peak, vm.cell_size),
                    "normalizer": vm.normalizer,
                    "width": vm.bounds.width,
                    "height": vm.bounds.height,
                    "origin": [vm.bounds.origin.x, vm.bounds.origin.y],
                }),
            )?;
        }
        Command::Waypoint { map, goal, sigma } => {
            check_sigma(*sigma)?;
            let map = archive::load_map(map)?;
            let raster = map
                .grid
                .occupancy_raster()
                .ok_or_else(|| Error::InvalidConfig("map has no indexed cells".into()))?;
            let scored = query::score_units(&map, goal, backends.scorer.as_ref(), None);
            let vm = query::build_value_map(&scored, raster.bounds, map.config.cell_size, *sigma);
            let groups = query::detect_frontiers(&raster);
            let reps: Vec<_> = groups.iter().map(|g| g.representative).collect();
            let record = match query::select_waypoint(&vm, &reps) {
                Some(w) => json!({"waypoint": cell_json(&w, map.config.cell_size), "frontiers": reps.len()}),
                None => {
                    eprintln!("no frontier left: exploration complete");
                    json!({"waypoint": null, "frontiers": 0})
                }
            };
            emit(out, record)?;
        }
        Command::Render(args) => {
            let map = archive::load_map(&args.map)?;
            let unit = match (args.unit, args.region) {
                (Some(id), None) => UnitRef::instance(InstanceId(id)),
                (None, Some(id)) => UnitRef::region(RegionId(id)),
                _ => unreachable!("clap enforces exactly one of --unit/--region"),
            };
            let (vp, image) = query::render_unit(&map, unit, &args.camera.intrinsics()?)?;
            write_image_png(&args.out, &image)?;
            let side = camera_record_path(&args.out);
            std::fs::write(&side, vp.camera.to_text()).map_err(|e| Error::io(&side, e))?;
            emit(
                out,
                json!({
                    "unit": unit,
                    "cell": cell_json(&vp.cell, map.config.cell_size),
                    "visible": vp.score,
                    "widened": vp.widened,
                    "image": args.out,
                    "camera": side,
                }),
            )?;
        }
        Command::Localize(args) => {
            check_sigma(args.sigma)?;
            let map = archive::load_map(&args.map)?;
            let text = std::fs::read_to_string(&args.probs).map_err(|e| Error::io(&args.probs, e))?;
            let probs: ProbabilityFile = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: args.probs.clone(),
                source,
            })?;
            let regions = probs.regions.iter().map(|(k, v)| (RegionId(*k), *v)).collect();
            let instances = probs.instances.iter().map(|(k, v)| (InstanceId(*k), *v)).collect();
            let pose = query::localize_situation(&map, &regions, &instances, args.sigma)?;
            std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
            let mut views = serde_json::Map::new();
            for view in query::render_four_views(&map, &pose, &args.camera.intrinsics()?) {
                let path = args.out_dir.join(format!("{}.png", view.direction.label()));
                write_image_png(&path, &view.image)?;
                let side = camera_record_path(&path);
                std::fs::write(&side, view.camera.to_text()).map_err(|e| Error::io(&side, e))?;
                views.insert(view.direction.label().into(), json!({"image": path, "yaw": view.yaw}));
            }
            emit(
                out,
                json!({
                    "position": cell_json(&pose.position, map.config.cell_size),
                    "orientation": pose.orientation,
                    "facing": cell_json(&pose.facing, map.config.cell_size),
                    "degenerate": pose.degenerate,
                    "views": views,
                }),
            )?;
        }
        Command::ExportSplats { map, out: path, unit } => {
            let map = archive::load_map(map)?;
            let set: GaussianSet = match unit {
                Some(id) => map
                    .instance(InstanceId(*id))
                    .ok_or(Error::UnknownUnit {
                        kind: "instance",
                        id: *id,
                    })?
                    .gaussians
                    .clone(),
                None => map.all_gaussians().copied().collect(),
            };
            ply::write_splats(path, &set)?;
            emit(out, json!({"splats": set.len(), "path": path}))?;
        }
        Command::MakeFixture { name, out: dir } => {
            let manifest = name.fixture().write(dir)?;
            emit(out, json!({"manifest": manifest}))?;
        }
    }
    Ok(())
}

/// `image.png` → `image.camera.txt`.
pub fn camera_record_path(image: &Path) -> PathBuf {
    image.with_extension("camera.txt")
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_INVARIANT
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out` and diagnostics to standard error. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_command(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
