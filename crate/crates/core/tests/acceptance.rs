//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report always reaches the test
//! log. Criteria listed in `EXPECTED_FAILURES` are reported as FAIL with
//! their measurements but do not fail the run; any other failure (or an
//! expected failure that starts passing) exits non-zero.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use glmap::estimator::{
    estimate, fit_voxels, merge_set, voxelize, EstimatorConfig, Gaussian3D, GaussianSet, MergeMode,
};
use glmap::fixture::Fixture;
use glmap::geometry::{project, CameraIntrinsics, PointCloud, Pose, Rgb, Vec3};
use glmap::grid::{Cell, GridBounds};
use glmap::io::archive::{decode_map, encode_map, load_map, save_map};
use glmap::map::{extract_instance_cloud, InstanceId, RegionId};
use glmap::query::{
    build_value_map, detect_frontiers, four_view_cameras, localize_situation, render_four_views, select_waypoint,
    value_field, ScoredUnit, UnitKind, ViewDirection,
};
use glmap::render::{render, render_gaussians, RenderCamera};
use glmap::semantics::TextModels;
use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = Result<String, String>;

/// Criteria the current merge rules cannot meet; see "Known limitation" in the README.
const EXPECTED_FAILURES: &[&str] = &["curvature modes"];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs3(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

// ---------------------------------------------------------------------------

fn estimator_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE5);
    let config = EstimatorConfig::default();
    let mut library_time = 0.0;
    let mut worst = 0.0f64;
    let mut voxels = 0;
    let start = Instant::now();
    for trial in 0..50 {
        let n = rng.gen_range(1..=10_000);
        let cloud = random_cloud(&mut rng, n);
        let t = Instant::now();
        let grid = voxelize(&cloud.points, config.voxel_size);
        let fitted = fit_voxels(&cloud, &grid, &config);
        library_time += t.elapsed().as_secs_f64();

        let oracle = oracle_voxel_fits(&cloud, config.voxel_size, config.epsilon);
        ensure(fitted.len() == oracle.len(), || {
            format!("cloud {trial}: {} fits vs {} oracle voxels", fitted.len(), oracle.len())
        })?;
        for (g, o) in fitted.iter().zip(&oracle) {
            ensure(g.support as usize == o.support, || {
                format!("cloud {trial} voxel {:?}: support", o.key)
            })?;
            worst = worst
                .max((g.mean - o.mean).amax())
                .max(max_abs3(&(g.covariance - o.covariance)));
        }
        voxels += oracle.len();
    }
    let total = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e} > 1e-9"))?;
    ensure(library_time < 10.0, || format!("estimator took {library_time:.2} s"))?;
    Ok(format!(
        "50 clouds, {voxels} voxels, max |Δ| {worst:.1e}; estimator {library_time:.3} s (with oracle {total:.2} s)"
    ))
}

fn moment_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3C);
    let mut runs = 0;
    let (mut mean_drift, mut second_drift) = (0.0f64, 0.0f64);
    for mode in [MergeMode::Verbatim, MergeMode::Flatness] {
        let config = EstimatorConfig::default().with_merge_mode(mode);
        for _ in 0..20 {
            let n = rng.gen_range(10..3000);
            let cloud = random_cloud(&mut rng, n);
            let grid = voxelize(&cloud.points, config.voxel_size);
            let input = GaussianSet::new(fit_voxels(&cloud, &grid, &config));
            let (w0, m0, s0) = mixture_moments(&input);
            let (output, _) = merge_set(input, &config);
            let (w1, m1, s1) = mixture_moments(&output);
            ensure(w0 == w1, || format!("support {w0} -> {w1}"))?;
            mean_drift = mean_drift.max((m0 - m1).norm());
            second_drift = second_drift.max(max_abs3(&(s0 - s1)));
            runs += 1;
        }
    }
    ensure(mean_drift < 1e-9, || format!("mean drift {mean_drift:.3e} m"))?;
    ensure(second_drift < 1e-6, || {
        format!("second-moment drift {second_drift:.3e} m²")
    })?;
    Ok(format!(
        "{runs} merge runs: support exact, mean drift {mean_drift:.1e} m, second moment drift {second_drift:.1e} m²"
    ))
}

/// Sphere radius for the curved comparison cloud: curvature 20 m⁻¹, well
/// inside the scale of the 3 cm fitting neighborhood.
const SPHERE_RADIUS: f64 = 0.05;

fn compression_ratio(cloud: &PointCloud, config: &EstimatorConfig) -> f64 {
    estimate(cloud, config).len() as f64 / occupied_voxel_count(cloud, config.voxel_size) as f64
}

fn curvature_modes() -> Check {
    let verbatim = EstimatorConfig::default().with_merge_mode(MergeMode::Verbatim);
    let flatness = EstimatorConfig::default().with_merge_mode(MergeMode::Flatness);
    let (mut inverted, mut intended) = (0, 0);
    let mut ratios = [0.0; 4];
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = plane_cloud(&mut rng);
        let sphere = sphere_cloud(&mut rng, SPHERE_RADIUS);
        let r = [
            compression_ratio(&plane, &verbatim),
            compression_ratio(&sphere, &verbatim),
            compression_ratio(&plane, &flatness),
            compression_ratio(&sphere, &flatness),
        ];
        // verbatim merges curved pairs more eagerly: the sphere compresses more
        if r[1] < r[0] {
            inverted += 1;
        }
        // flatness should let the plane compress more than the sphere
        if r[2] < r[3] {
            intended += 1;
        }
        for k in 0..4 {
            ratios[k] += r[k] / 10.0;
        }
    }
    let detail = format!(
        "output/voxel ratios plane|sphere: verbatim {:.3}|{:.3} (sphere lower in {inverted}/10), flatness {:.3}|{:.3} (plane lower in {intended}/10)",
        ratios[0], ratios[1], ratios[2], ratios[3]
    );
    if inverted == 10 && intended == 10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn compression_sanity() -> Check {
    let config = EstimatorConfig::default();
    let mut clouds = 0;
    let mut worst = 0.0f64;
    for fixture in [
        Fixture::three_frame(),
        Fixture::ten_frame_room(),
        Fixture::five_instance_frame(),
    ] {
        for obs in fixture.observations() {
            for mask in obs.masks.values() {
                let Some(cloud) = extract_instance_cloud(&obs.depth, &obs.color, mask).map_err(|e| e.to_string())?
                else {
                    continue;
                };
                let out = estimate(&cloud, &config).len();
                let voxels = occupied_voxel_count(&cloud, config.voxel_size);
                ensure(out <= voxels, || format!("{out} Gaussians from {voxels} voxels"))?;
                worst = worst.max(out as f64 / voxels as f64);
                clouds += 1;
            }
        }
    }
    let flatness = EstimatorConfig::default().with_merge_mode(MergeMode::Flatness);
    let mut plane_worst = 0.0f64;
    for seed in 0..10 {
        let plane = plane_cloud(&mut ChaCha8Rng::seed_from_u64(seed));
        plane_worst = plane_worst.max(compression_ratio(&plane, &flatness));
    }
    ensure(plane_worst <= 0.5, || {
        format!("flat plane ratio {plane_worst:.3} > 0.5")
    })?;
    Ok(format!(
        "{clouds} fixture instance clouds, worst ratio {worst:.3}; flat plane (flatness) worst ratio {plane_worst:.3}"
    ))
}

fn incremental_idempotence() -> Check {
    let models = TextModels::mock();
    let mut frames = 0;
    for fixture in [
        Fixture::three_frame(),
        Fixture::ten_frame_room(),
        Fixture::five_instance_frame(),
    ] {
        let (map, _) = build(&fixture);
        let before = (map.instances.len(), map.regions.len(), map.total_support());
        for (i, obs) in fixture.observations().enumerate() {
            let mut again = map.clone();
            again.ingest_frame(&obs, &models).map_err(|e| e.to_string())?;
            let after = (again.instances.len(), again.regions.len(), again.total_support());
            ensure(before == after, || {
                format!(
                    "frame {} changed (|S_o|, |S_r|, support) {before:?} -> {after:?}",
                    fixture.frames[i].frame_id
                )
            })?;
            frames += 1;
        }
    }
    Ok(format!(
        "{frames} frames re-ingested across 3 fixtures; counts and support unchanged"
    ))
}

fn fusion_trace() -> Check {
    let fixture = Fixture::three_frame();
    let (map, reports) = build(&fixture);
    let i = |n: u32| InstanceId(n);
    let expected_instances: [BTreeMap<u32, InstanceId>; 3] = [
        BTreeMap::from([(1, i(0))]),
        BTreeMap::from([(1, i(0)), (2, i(1))]),
        BTreeMap::from([(1, i(1))]),
    ];
    let expected_regions: [BTreeMap<u32, RegionId>; 3] = [
        BTreeMap::new(),
        BTreeMap::from([(1, RegionId(0))]),
        BTreeMap::from([(1, RegionId(0))]),
    ];
    for (k, r) in reports.iter().enumerate() {
        ensure(r.instance_map == expected_instances[k], || {
            format!("{}: instance mapping {:?}", r.frame_id, r.instance_map)
        })?;
        ensure(r.region_map == expected_regions[k], || {
            format!("{}: region mapping {:?}", r.frame_id, r.region_map)
        })?;
    }
    ensure(map.instances.len() == 2 && map.regions.len() == 1, || {
        format!("{} instances, {} regions", map.instances.len(), map.regions.len())
    })?;
    let members: BTreeSet<InstanceId> = map.regions[&RegionId(0)].members.clone();
    ensure(members == BTreeSet::from([i(0), i(1)]), || {
        format!("region members {members:?}")
    })?;

    // the same trace through the on-disk dataset
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = fixture.write(dir.path()).map_err(|e| e.to_string())?;
    let dataset = glmap::io::load_dataset(&manifest).map_err(|e| e.to_string())?;
    let models = TextModels::mock();
    let mut disk_map = glmap::map::GlMap::new(Default::default()).map_err(|e| e.to_string())?;
    for (k, obs) in dataset.observations().enumerate() {
        let obs = obs.map_err(|e| e.to_string())?;
        let r = disk_map.ingest_frame(&obs, &models).map_err(|e| e.to_string())?;
        ensure(
            r.instance_map == expected_instances[k] && r.region_map == expected_regions[k],
            || format!("disk {}: {:?} {:?}", r.frame_id, r.instance_map, r.region_map),
        )?;
    }
    ensure(disk_map == map, || {
        "dataset-built map differs from in-memory build".into()
    })?;
    Ok("2 instances, 1 region; T_t = {1→0} | {1→0, 2→1}, R{1→0} | {1→1}, R{1→0}; identical via disk dataset".into())
}

fn value_map_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x58);
    let cell_size = 0.05;
    let mut worst = 0.0f64;
    let mut trials = 0;
    for trial in 0..6 {
        let bounds = GridBounds::new(Cell::new(rng.gen_range(-50..50), rng.gen_range(-50..50)), 200, 200);
        let sigma = if trial == 0 { 0.5 } else { rng.gen_range(0.1..1.0) };
        let scored: Vec<ScoredUnit> = (0..50)
            .map(|k| ScoredUnit {
                kind: if k % 2 == 0 {
                    UnitKind::Instance
                } else {
                    UnitKind::Region
                },
                id: k,
                score: rng.gen_range(0.0..1.0),
                // a few anchors fall outside the grid and must be ignored
                anchor: Cell::new(
                    bounds.origin.x + rng.gen_range(-10..210),
                    bounds.origin.y + rng.gen_range(-10..210),
                ),
            })
            .collect();
        let field = value_field(&scored, &bounds, cell_size, sigma);
        let oracle = oracle_value_field(&scored, &bounds, cell_size, sigma);
        for (a, b) in field.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }

        let base = build_value_map(&scored, bounds, cell_size, sigma);
        ensure(base.argmax() == Some(oracle_argmax(&oracle, &bounds)), || {
            format!("trial {trial}: argmax differs from oracle")
        })?;
        let frontiers: Vec<Cell> = (0..20)
            .map(|_| {
                Cell::new(
                    bounds.origin.x + rng.gen_range(0..200),
                    bounds.origin.y + rng.gen_range(0..200),
                )
            })
            .collect();
        let waypoint = select_waypoint(&base, &frontiers);
        for c in [1e-6, 0.37, 3.0, 1e5] {
            let scaled: Vec<ScoredUnit> = scored
                .iter()
                .map(|u| ScoredUnit {
                    score: u.score * c,
                    ..*u
                })
                .collect();
            let vm = build_value_map(&scaled, bounds, cell_size, sigma);
            ensure(vm.argmax() == base.argmax(), || {
                format!("trial {trial}: argmax moved under scale {c}")
            })?;
            ensure(select_waypoint(&vm, &frontiers) == waypoint, || {
                format!("trial {trial}: waypoint moved under scale {c}")
            })?;
        }
        trials += 1;
    }
    ensure(worst <= 1e-9, || format!("max |H - oracle| {worst:.3e}"))?;
    Ok(format!(
        "{trials} grids 200×200 × 50 units: max |H − direct sum| {worst:.1e}; argmax and waypoint fixed under 4 scalings"
    ))
}

fn frontier_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    let mut total = 0;
    for trial in 0..100 {
        let raster = random_raster(&mut rng);
        let groups = detect_frontiers(&raster);
        let found: BTreeSet<Cell> = groups.iter().flat_map(|g| g.cells.iter().copied()).collect();
        let oracle = oracle_frontiers(&raster);
        ensure(found == oracle, || {
            format!("grid {trial}: {} cells found, oracle {}", found.len(), oracle.len())
        })?;
        let partition: BTreeSet<BTreeSet<Cell>> = groups.iter().map(|g| g.cells.iter().copied().collect()).collect();
        ensure(partition == oracle_components(&oracle), || {
            format!("grid {trial}: grouping differs")
        })?;
        ensure(groups.iter().all(|g| g.cells.contains(&g.representative)), || {
            format!("grid {trial}: representative outside its group")
        })?;
        total += oracle.len();
    }
    Ok(format!(
        "100 random grids, {total} frontier cells: sets and 8-connected groups equal the brute-force scan"
    ))
}

fn sqa_localization() -> Check {
    let mut lines = Vec::new();
    // (case, fixture, faced instance text)
    let cases: [(&str, Fixture, &str); 2] = [
        ("dining", Fixture::three_frame(), "red chair"),
        ("room", Fixture::ten_frame_room(), "television on a tv stand"),
    ];
    for (name, fixture, faced_text) in cases {
        let (map, _) = build(&fixture);
        let cs = map.config.cell_size;
        let sigma = 0.5;
        let faced = *map
            .instances
            .iter()
            .find(|(_, u)| u.text.starts_with(faced_text))
            .ok_or_else(|| format!("{name}: no '{faced_text}' instance"))?
            .0;
        let region_ids: Vec<RegionId> = map.regions.keys().copied().collect();
        let dominant = region_ids[0];
        let region_probs: BTreeMap<RegionId, f64> = region_ids
            .iter()
            .map(|r| (*r, if *r == dominant { 0.9 } else { 0.1 }))
            .collect();
        let instance_probs: BTreeMap<InstanceId, f64> = map
            .instances
            .keys()
            .map(|i| (*i, if *i == faced { 0.95 } else { 0.05 }))
            .collect();
        let pose = localize_situation(&map, &region_probs, &instance_probs, sigma).map_err(|e| e.to_string())?;

        // oracle anchors straight from the Gaussians
        let region_anchor = |r: RegionId| {
            let fp = oracle_footprint(
                map.regions[&r]
                    .members
                    .iter()
                    .flat_map(|m| map.instances[m].gaussians.iter()),
                cs,
            );
            oracle_centroid(&fp)
        };
        let instance_anchor =
            |i: InstanceId| oracle_centroid(&oracle_footprint(map.instances[&i].gaussians.iter(), cs));
        let bounds = map.grid.bounds().ok_or("empty grid")?;
        let units = |kind, probs: Vec<(u32, f64, Cell)>| -> Vec<ScoredUnit> {
            probs
                .into_iter()
                .map(|(id, score, anchor)| ScoredUnit {
                    kind,
                    id,
                    score,
                    anchor,
                })
                .collect()
        };
        let h_r = oracle_value_field(
            &units(
                UnitKind::Region,
                region_probs.iter().map(|(r, p)| (r.0, *p, region_anchor(*r))).collect(),
            ),
            &bounds,
            cs,
            sigma,
        );
        let h_o = oracle_value_field(
            &units(
                UnitKind::Instance,
                instance_probs
                    .iter()
                    .map(|(i, p)| (i.0, *p, instance_anchor(*i)))
                    .collect(),
            ),
            &bounds,
            cs,
            sigma,
        );
        let centroid = region_anchor(dominant);
        ensure(oracle_argmax(&h_r, &bounds) == centroid, || {
            format!("{name}: region field peak is not at the dominant centroid")
        })?;
        ensure(map.grid.occupancy_at(&centroid).is_explored(), || {
            format!("{name}: dominant centroid {centroid:?} is unexplored")
        })?;
        ensure(pose.position == centroid, || {
            format!("{name}: l_a {:?} != region centroid {centroid:?}", pose.position)
        })?;
        let l_o = oracle_argmax(&h_o, &bounds);
        let theta = ((l_o.y - centroid.y) as f64 * cs).atan2((l_o.x - centroid.x) as f64 * cs);
        let err = (pose.orientation - theta).abs();
        ensure(err <= 1e-9, || {
            format!("{name}: θ {} vs analytic {theta} (Δ {err:.2e})", pose.orientation)
        })?;

        // front/back visibility of the faced instance
        let k = CameraIntrinsics::new(160.0, 160.0, 160.0, 120.0, 320, 240).map_err(|e| e.to_string())?;
        let height = map.floor_height.unwrap_or(0.0) + map.config.agent_height;
        let cams: BTreeMap<&str, RenderCamera> = four_view_cameras(&pose, cs, &k, height)
            .into_iter()
            .map(|(d, _, c)| (d.label(), c))
            .collect();
        let target = &map.instances[&faced].gaussians;
        let front = render(target, &cams["front"], Rgb::zeros());
        let back = render(target, &cams["back"], Rgb::zeros());
        let centre = target.weighted_mean().ok_or("empty instance")?;
        let (px, depth) =
            project(&centre, &k, &cams["front"].pose).ok_or(format!("{name}: centre behind front camera"))?;
        ensure(depth > 0.0 && k.contains(&px), || {
            format!("{name}: faced instance outside the front frustum")
        })?;
        let front_cov = front.pixels.iter().fold(0.0f64, |a, p| a.max(p[3]));
        let back_cov = back.pixels.iter().fold(0.0f64, |a, p| a.max(p[3]));
        ensure(front_cov > 0.5, || format!("{name}: front coverage {front_cov:.3}"))?;
        ensure(back_cov < 1e-6, || format!("{name}: back coverage {back_cov:.3e}"))?;
        let in_back = target
            .iter()
            .filter(|g| project(&g.mean, &k, &cams["back"].pose).is_some_and(|(p, z)| z > 0.0 && k.contains(&p)))
            .count();
        ensure(in_back == 0, || {
            format!("{name}: {in_back} Gaussians project into the back view")
        })?;

        let views = render_four_views(&map, &pose, &k);
        let labels: Vec<&str> = views.iter().map(|v| v.direction.label()).collect();
        ensure(labels == ["front", "back", "left", "right"], || {
            format!("{name}: labels {labels:?}")
        })?;
        ensure(
            views[0].direction == ViewDirection::Front && views[0].yaw == pose.orientation,
            || format!("{name}: front view yaw"),
        )?;
        lines.push(format!(
            "{name}: l_a {:?}, θ {:.4} rad (Δ {err:.0e}), front cov {front_cov:.2}, back cov {back_cov:.0e}",
            pose.position, pose.orientation
        ));
    }
    Ok(lines.join("; "))
}

fn renderer() -> Check {
    // single on-axis splat with a fractional principal point
    let k = CameraIntrinsics::new(120.0, 120.0, 50.3, 40.7, 101, 81).map_err(|e| e.to_string())?;
    let camera = RenderCamera::new(k, Pose::identity());
    let splat = GaussianSet::new(vec![Gaussian3D::isotropic(
        Vec3::new(0.0, 0.0, 2.0),
        0.05,
        Rgb::new(1.0, 1.0, 1.0),
        0.8,
    )]);
    let img = render(&splat, &camera, Rgb::zeros());
    let (u, v) = img.max_alpha_pixel();
    let peak_err = ((u as f64 - k.cx).powi(2) + (v as f64 - k.cy).powi(2)).sqrt();
    ensure(peak_err <= 1.0, || {
        format!("peak at ({u}, {v}) vs principal point ({}, {})", k.cx, k.cy)
    })?;

    // permutation invariance
    let mut rng = ChaCha8Rng::seed_from_u64(0x2E);
    let k2 = CameraIntrinsics::new(80.0, 80.0, 40.0, 30.0, 80, 60).map_err(|e| e.to_string())?;
    let cam2 = RenderCamera::new(k2, Pose::identity());
    let mut gaussians: Vec<Gaussian3D> = (0..300)
        .map(|_| {
            let mut g = Gaussian3D::isotropic(
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(1.0..4.0),
                ),
                rng.gen_range(0.01..0.1),
                Rgb::new(rng.gen(), rng.gen(), rng.gen()),
                rng.gen_range(0.1..1.0),
            );
            // a handful of exact depth ties
            if rng.gen_bool(0.1) {
                g.mean.z = 2.0;
            }
            g
        })
        .collect();
    let reference = render_gaussians(gaussians.iter(), &cam2, Rgb::new(0.1, 0.2, 0.3));
    for _ in 0..5 {
        gaussians.shuffle(&mut rng);
        let shuffled = render_gaussians(gaussians.iter(), &cam2, Rgb::new(0.1, 0.2, 0.3));
        ensure(shuffled == reference, || "render output depends on input order".into())?;
    }

    // two-splat occlusion at the centre pixel against the compositing recurrence
    let k3 = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).map_err(|e| e.to_string())?;
    let cam3 = RenderCamera::new(k3, Pose::identity());
    let near = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.02, Rgb::new(1.0, 0.0, 0.0), 0.8);
    let far = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.05, Rgb::new(0.0, 0.0, 1.0), 0.6);
    let bg = Rgb::new(0.0, 1.0, 0.0);
    let img = render(&GaussianSet::new(vec![far, near]), &cam3, bg);
    let mut worst = 0.0f64;
    for (du, pixel) in [(0usize, 32usize), (1, 33)] {
        // screen-space σ of an on-axis isotropic splat is f·σ/z pixels
        let offset = du as f64;
        let a1 = 0.8 * (-0.5 * offset * offset / (100.0 * 0.02f64 / 1.0).powi(2)).exp();
        let a2 = 0.6 * (-0.5 * offset * offset / (100.0 * 0.05f64 / 2.0).powi(2)).exp();
        let t1 = 1.0 - a1;
        let t2 = t1 * (1.0 - a2);
        let expected = [a1 * 1.0, t2 * bg.y, t1 * a2 * 1.0, 1.0 - t2];
        let got = img.at(pixel, 24);
        for c in 0..4 {
            worst = worst.max((got[c] - expected[c]).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("occlusion compositing off by {worst:.3e}"))?;
    Ok(format!(
        "peak {peak_err:.2} px from principal point; 5 shuffles bit-identical; occlusion max error {worst:.1e}"
    ))
}

fn persistence() -> Check {
    let (map, _) = build(&Fixture::ten_frame_room());
    let bytes = encode_map(&map);
    let decoded = decode_map(&bytes).map_err(|e| e.to_string())?;
    ensure(decoded == map, || "decoded map differs".into())?;
    let again = encode_map(&decoded);
    ensure(again == bytes, || "re-encoded bytes differ".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.glmap"), dir.path().join("b.glmap"));
    save_map(&map, &a).map_err(|e| e.to_string())?;
    let loaded = load_map(&a).map_err(|e| e.to_string())?;
    save_map(&loaded, &b).map_err(|e| e.to_string())?;
    let reloaded = load_map(&b).map_err(|e| e.to_string())?;
    let (fa, fb) = (
        std::fs::read(&a).map_err(|e| e.to_string())?,
        std::fs::read(&b).map_err(|e| e.to_string())?,
    );
    ensure(loaded == map && reloaded == map, || {
        "file round trip not deep-equal".into()
    })?;
    ensure(fa == fb && fa == bytes, || "file bytes differ across cycles".into())?;
    Ok(format!(
        "10-frame map ({} instances, {} Gaussians, {} bytes): deep-equal and bit-exact over two save/load cycles",
        map.instances.len(),
        map.gaussian_count(),
        bytes.len()
    ))
}

fn performance() -> Check {
    // 10⁵ points on the surfaces of a small room with furniture
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E);
    let mut cloud = PointCloud::default();
    while cloud.len() < 100_000 {
        let face = rng.gen_range(0..5);
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let p = match face {
            0 => Vec3::new(a * 4.0, b * 4.0, 0.0),
            1 => Vec3::new(a * 4.0, 0.0, b * 2.5),
            2 => Vec3::new(0.0, a * 4.0, b * 2.5),
            3 => Vec3::new(1.0 + a * 0.8, 1.0, b * 0.9),
            _ => Vec3::new(1.0 + a * 0.8, 1.0 + b * 0.5, 0.9),
        };
        cloud.push(p, Rgb::new(a, b, 0.5));
    }
    let t = Instant::now();
    let set = estimate(&cloud, &EstimatorConfig::default());
    let est_time = t.elapsed().as_secs_f64();
    ensure(est_time < 5.0, || format!("estimate took {est_time:.2} s"))?;

    let fixture = Fixture::five_instance_frame();
    let obs = fixture.observation(0);
    let models = TextModels::mock();
    let mut map = glmap::map::GlMap::new(Default::default()).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let report = map.ingest_frame(&obs, &models).map_err(|e| e.to_string())?;
    let ingest_time = t.elapsed().as_secs_f64();
    ensure(report.registered_instances.len() == 5, || {
        format!("{} instances registered", report.registered_instances.len())
    })?;
    ensure(ingest_time < 3.0, || format!("ingest took {ingest_time:.2} s"))?;
    Ok(format!(
        "estimate(10⁵ points) {est_time:.2} s → {} Gaussians; 640×480 frame with 5 instances ingested in {ingest_time:.2} s",
        set.len()
    ))
}

type NamedCheck = (&'static str, fn() -> Check);

fn main() {
    let checks: [NamedCheck; 12] = [
        ("estimator oracle", estimator_oracle),
        ("moment conservation", moment_conservation),
        ("curvature modes", curvature_modes),
        ("compression sanity", compression_sanity),
        ("incremental idempotence", incremental_idempotence),
        ("three-frame fusion trace", fusion_trace),
        ("value-map oracle", value_map_oracle),
        ("frontier exactness", frontier_exactness),
        ("situated localization", sqa_localization),
        ("renderer", renderer),
        ("persistence", persistence),
        ("performance", performance),
    ];
    let mut unexpected = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let expected_fail = EXPECTED_FAILURES.contains(&name);
        match (&outcome, expected_fail) {
            (Ok(detail), false) => println!("PASS  {name} ({secs:.2} s): {detail}"),
            (Err(detail), true) => println!("FAIL  {name} ({secs:.2} s) [known limitation]: {detail}"),
            (Err(detail), false) => {
                unexpected += 1;
                println!("FAIL  {name} ({secs:.2} s): {detail}");
            }
            (Ok(detail), true) => {
                unexpected += 1;
                println!("PASS  {name} ({secs:.2} s) [listed as a known failure; update EXPECTED_FAILURES]: {detail}");
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion outcome(s) differ from expectations");
        std::process::exit(1);
    }
}
