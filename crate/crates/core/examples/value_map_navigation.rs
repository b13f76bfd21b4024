//! Scores every map unit against a goal, smooths the scores into a value map
//! and picks the frontier to explore next.
//!
//! Usage: `cargo run --example value_map_navigation [goal] [out_dir]`

use std::path::PathBuf;

use glmap::fixture::Fixture;
use glmap::io::raster::{write_value_map_pgm, write_value_map_png};
use glmap::map::{GlMap, InstanceId, MapConfig, RegionId};
use glmap::query::{detect_frontiers, score_units, select_waypoint, value_map_for, UnitKind};
use glmap::semantics::{MockScorer, TextModels};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let goal = args.next().unwrap_or_else(|| "television".to_string());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("glmap-value-map"));
    std::fs::create_dir_all(&out)?;

    let fixture = Fixture::ten_frame_room();
    let models = TextModels::mock();
    let mut map = GlMap::new(MapConfig::default())?;
    for obs in fixture.observations() {
        map.ingest_frame(&obs, &models)?;
    }

    let mut scored = score_units(&map, &goal, &MockScorer, None);
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    println!("goal {goal:?}");
    for s in &scored {
        let text = match s.kind {
            UnitKind::Instance => &map.instances[&InstanceId(s.id)].text,
            UnitKind::Region => &map.regions[&RegionId(s.id)].text,
        };
        println!(
            "  {:.3}  {:?} {} {:?} at cell ({}, {})",
            s.score, s.kind, s.id, text, s.anchor.x, s.anchor.y
        );
    }

    // The mock scorer puts unrelated units near 0.5, so a narrow kernel keeps
    // neighbouring mediocre units from adding up past the best match.
    let value_map = value_map_for(&map, &scored, 0.15).ok_or("map has no cells")?;
    let peak = value_map.argmax().ok_or("empty value map")?;
    let (px, py) = peak.center(value_map.cell_size);
    println!(
        "value map {}x{} cells, peak at ({px:.2}, {py:.2}) m",
        value_map.bounds.width, value_map.bounds.height
    );

    let raster = map.grid.occupancy_raster().ok_or("no occupancy")?;
    let frontiers = detect_frontiers(&raster);
    let reps: Vec<_> = frontiers.iter().map(|g| g.representative).collect();
    println!("{} frontier groups", frontiers.len());
    match select_waypoint(&value_map, &reps) {
        Some(w) => {
            let (wx, wy) = w.center(value_map.cell_size);
            println!("next waypoint ({wx:.2}, {wy:.2}) m");
        }
        None => println!("exploration complete"),
    }

    write_value_map_pgm(&out.join("value_map.pgm"), &value_map)?;
    write_value_map_png(&out.join("value_map.png"), &value_map)?;
    println!("wrote {}", out.display());
    Ok(())
}
