//! Feeds a walk through a synthetic room into the map one frame at a time.
//!
//! Usage: `cargo run --example incremental_mapping`
//!
//! Each frame's instances are either registered as new map units or fused
//! into an existing one; regions follow through the per-frame ID mapping.

use glmap::fixture::Fixture;
use glmap::map::{GlMap, MapConfig};
use glmap::semantics::TextModels;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::ten_frame_room();
    let models = TextModels::mock();
    let mut map = GlMap::new(MapConfig::default())?;

    for obs in fixture.observations() {
        let report = map.ingest_frame(&obs, &models)?;
        let mapping: Vec<String> = report.instance_map.iter().map(|(l, g)| format!("{l}->{g}")).collect();
        println!(
            "{}: new {:?}, fused {:?}, local->global [{}], regions {:?}, {} Gaussians total",
            report.frame_id,
            report.registered_instances.iter().map(|i| i.0).collect::<Vec<_>>(),
            report.merged_instances.iter().map(|i| i.0).collect::<Vec<_>>(),
            mapping.join(", "),
            report.region_map.values().map(|r| r.0).collect::<Vec<_>>(),
            map.gaussian_count(),
        );
    }
    map.check_invariants()?;

    println!();
    for unit in map.instances.values() {
        let fp = map.grid.instance_footprint(unit.id).map_or(0, |f| f.len());
        println!(
            "instance {} {:?}: {} Gaussians over {} cells",
            unit.id,
            unit.text,
            unit.gaussians.len(),
            fp
        );
    }
    for region in map.regions.values() {
        let members: Vec<u32> = region.members.iter().map(|m| m.0).collect();
        println!("region {} {:?}: members {:?}", region.id, region.text, members);
    }
    Ok(())
}
