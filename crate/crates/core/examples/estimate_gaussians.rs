//! Fits 3D Gaussians to a point cloud and compares the two merge modes.
//!
//! Usage: `cargo run --example estimate_gaussians [cloud.ply] [splats.ply]`
//!
//! Without arguments a synthetic scene (a sampled box surface and a sphere) is
//! used. With a second path the verbatim-mode Gaussians are written as a
//! splat PLY.

use std::path::Path;

use glmap::estimator::{estimate, voxelize, EstimatorConfig, MergeMode};
use glmap::geometry::{PointCloud, Rgb, Vec3};
use glmap::io::ply::{read_point_cloud, write_splats};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_cloud() -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cloud = PointCloud::default();
    // top and two sides of a 40 cm box
    for _ in 0..6000 {
        let (a, b): (f64, f64) = (rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.4));
        let p = match rng.gen_range(0..3) {
            0 => Vec3::new(a, b, 0.4),
            1 => Vec3::new(a, 0.0, b),
            _ => Vec3::new(0.0, a, b),
        };
        cloud.push(p, Rgb::new(0.8, 0.5, 0.2));
    }
    // a 10 cm ball next to it
    for _ in 0..3000 {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        cloud.push(
            Vec3::new(0.7 + 0.1 * s * t.cos(), 0.2 + 0.1 * s * t.sin(), 0.1 + 0.1 * z),
            Rgb::new(0.2, 0.3, 0.9),
        );
    }
    cloud
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cloud = match args.first() {
        Some(path) => read_point_cloud(Path::new(path))?,
        None => synthetic_cloud(),
    };
    let base = EstimatorConfig::default();
    let voxels = voxelize(&cloud.points, base.voxel_size).len();
    println!(
        "{} points in {} occupied {:.0} mm voxels",
        cloud.len(),
        voxels,
        base.voxel_size * 1000.0
    );

    for mode in [MergeMode::Verbatim, MergeMode::Flatness] {
        let config = base.with_merge_mode(mode);
        let set = estimate(&cloud, &config);
        let flattest = set
            .iter()
            .map(|g| {
                let ev = SymmetricEigen::new(g.covariance).eigenvalues;
                ev.min() / ev.max()
            })
            .fold(f64::INFINITY, f64::min);
        println!(
            "{mode:?}: {} Gaussians ({:.2} per voxel), support {}, flattest eigenvalue ratio {flattest:.2e}",
            set.len(),
            set.len() as f64 / voxels as f64,
            set.total_support(),
        );
        if mode == MergeMode::Verbatim {
            if let Some(out) = args.get(1) {
                write_splats(Path::new(out), &set)?;
                println!("wrote {out}");
            }
        }
    }
    Ok(())
}
