//! Builds a small map and renders it with the splatting rasterizer.
//!
//! Usage: `cargo run --example render_splats [out_dir]`
//!
//! Writes a PNG of the whole map from a raised viewpoint and one of the best
//! view of each instance, chosen against occlusion by the rest of the map.

use std::path::PathBuf;

use glmap::fixture::Fixture;
use glmap::geometry::{CameraIntrinsics, Pose, Rgb, Vec3};
use glmap::io::raster::write_image_png;
use glmap::map::{GlMap, MapConfig};
use glmap::query::{render_unit, UnitRef};
use glmap::render::{render_gaussians, RenderCamera, DISPLAY_LOW_PASS};
use glmap::semantics::TextModels;
use nalgebra::Rotation3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("glmap-render"));
    std::fs::create_dir_all(&out)?;

    let fixture = Fixture::three_frame();
    let models = TextModels::mock();
    let mut map = GlMap::new(MapConfig::default())?;
    for obs in fixture.observations() {
        map.ingest_frame(&obs, &models)?;
    }
    println!(
        "{} Gaussians in {} instances",
        map.gaussian_count(),
        map.instances.len()
    );

    // look down at the scene from behind and above the first camera
    let k = CameraIntrinsics::new(400.0, 400.0, 319.5, 239.5, 640, 480)?;
    let level = Pose::level_camera(Vec3::new(-0.8, 0.75, 2.0), 0.0);
    let tilt = Rotation3::from_axis_angle(&Vec3::x_axis(), -0.6);
    let pose = Pose::new(level.rotation * tilt.matrix(), level.translation)?;
    let camera = RenderCamera::new(k, pose).with_low_pass(DISPLAY_LOW_PASS);
    let image = render_gaussians(map.all_gaussians(), &camera, Rgb::new(0.05, 0.05, 0.08));
    let path = out.join("overview.png");
    write_image_png(&path, &image)?;
    println!("wrote {}", path.display());

    let small = CameraIntrinsics::new(240.0, 240.0, 159.5, 119.5, 320, 240)?;
    for unit in map.instances.values() {
        let (vp, image) = render_unit(&map, UnitRef::instance(unit.id), &small)?;
        let path = out.join(format!("instance_{}.png", unit.id.0));
        write_image_png(&path, &image)?;
        println!(
            "{:?} seen from cell ({}, {}), {} of {} Gaussians visible -> {}",
            unit.text,
            vp.cell.x,
            vp.cell.y,
            vp.score,
            unit.gaussians.len(),
            path.display()
        );
    }
    Ok(())
}
