//! Places the agent from a situation description and renders what it would
//! see to the front, back, left and right.
//!
//! Usage: `cargo run --example situated_localization [out_dir]`
//!
//! The region and instance probabilities stand in for a language model's
//! reading of "I am in the kitchen, looking at the stove".

use std::collections::BTreeMap;
use std::path::PathBuf;

use glmap::fixture::Fixture;
use glmap::geometry::CameraIntrinsics;
use glmap::io::raster::write_image_png;
use glmap::map::{GlMap, MapConfig};
use glmap::query::{localize_situation, render_four_views};
use glmap::semantics::TextModels;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("glmap-situated"));
    std::fs::create_dir_all(&out)?;

    let fixture = Fixture::ten_frame_room();
    let models = TextModels::mock();
    let mut map = GlMap::new(MapConfig::default())?;
    for obs in fixture.observations() {
        map.ingest_frame(&obs, &models)?;
    }

    let region_probs: BTreeMap<_, _> = map
        .regions
        .values()
        .map(|r| (r.id, if r.text.starts_with("kitchen") { 0.9 } else { 0.1 }))
        .collect();
    let instance_probs: BTreeMap<_, _> = map
        .instances
        .values()
        .map(|u| (u.id, if u.text.starts_with("stove") { 0.95 } else { 0.05 }))
        .collect();

    let pose = localize_situation(&map, &region_probs, &instance_probs, 0.5)?;
    let (x, y) = pose.position.center(map.config.cell_size);
    println!(
        "agent at ({x:.2}, {y:.2}) m facing {:.1} deg{}",
        pose.orientation.to_degrees(),
        if pose.degenerate {
            " (arbitrary: standing on the target)"
        } else {
            ""
        }
    );

    let k = CameraIntrinsics::new(240.0, 240.0, 159.5, 119.5, 320, 240)?;
    for view in render_four_views(&map, &pose, &k) {
        let coverage = view.image.pixels.iter().filter(|p| p[3] > 0.5).count() as f64 / view.image.pixels.len() as f64;
        let path = out.join(format!("{}.png", view.direction.label()));
        write_image_png(&path, &view.image)?;
        println!(
            "{:>5}: yaw {:7.1} deg, {:4.1}% covered -> {}",
            view.direction.label(),
            view.yaw.to_degrees(),
            coverage * 100.0,
            path.display()
        );
    }
    Ok(())
}
