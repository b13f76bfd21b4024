//! Saves a map to a versioned archive, reloads it, checks it is identical,
//! and exports each instance's Gaussians as a splat PLY.
//!
//! Usage: `cargo run --example persistence [out_dir]`

use std::path::PathBuf;

use glmap::fixture::Fixture;
use glmap::io::archive::{load_map, save_map};
use glmap::io::ply::write_splats;
use glmap::map::{GlMap, MapConfig};
use glmap::semantics::TextModels;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("glmap-archive"));
    std::fs::create_dir_all(&out)?;

    let fixture = Fixture::ten_frame_room();
    let models = TextModels::mock();
    let mut map = GlMap::new(MapConfig::default())?;
    // build half the map, save, reload and continue from the reloaded copy
    for obs in fixture.observations().take(5) {
        map.ingest_frame(&obs, &models)?;
    }
    let path = out.join("room.glmap");
    save_map(&map, &path)?;
    let mut resumed = load_map(&path)?;
    assert_eq!(resumed, map, "archive round trip must be exact");
    for obs in fixture.observations().skip(5) {
        resumed.ingest_frame(&obs, &models)?;
    }
    save_map(&resumed, &path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!(
        "{}: {} instances, {} regions, {} Gaussians, {bytes} bytes",
        path.display(),
        resumed.instances.len(),
        resumed.regions.len(),
        resumed.gaussian_count()
    );

    for unit in resumed.instances.values() {
        let ply = out.join(format!("instance_{}.ply", unit.id.0));
        write_splats(&ply, &unit.gaussians)?;
        println!("  {:?} -> {}", unit.text, ply.display());
    }
    Ok(())
}
