//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use sphconv::convop::count_params_flops;
use sphconv::dataio::tiling::windows_along;
use sphconv::dataio::{read_cloud, synth_scenes, tile_scene, write_cloud, Checkpoint, SceneSpec};
use sphconv::geometry::{build_kernel, coverage_stats, validate_lattice, CoverageMethod, MC_SEED};
use sphconv::gradcheck::run_suite;
use sphconv::interp::interpolate;
use sphconv::network::{train, NetworkConfig, TrainOptions, TrainState};
use sphconv::spatial::{assign_cells, ball_query, farthest_point_sample};
use sphconv::{KernelKind, LayoutPreset, PointCloud};

use common::*;
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= tol, format!("{what} = {got:.6}, expected {want} +/- {tol}"))
}

fn geometry_occupancy() -> Outcome {
    let s = coverage_stats(KernelKind::SpherePacked, 1.0, CoverageMethod::Analytic, 0).map_err(|e| e.to_string())?;
    let c = coverage_stats(KernelKind::CubeGrid, 1.0, CoverageMethod::Analytic, 0).map_err(|e| e.to_string())?;
    close(s.cap_overlap_volume, 0.199, 0.001, "sphere cap overlap")?;
    close(s.per_cell_covered_volume, 3.891, 0.001, "sphere per-cell volume")?;
    close(c.cap_overlap_volume, 0.964, 0.001, "cube same-side overlap")?;
    close(c.per_cell_covered_volume, 2.643, 0.001, "cube per-cell volume")?;
    let mut worst: f64 = 0.0;
    for (kind, analytic) in [(KernelKind::SpherePacked, &s), (KernelKind::CubeGrid, &c)] {
        let mc = coverage_stats(kind, 1.0, CoverageMethod::MonteCarlo, 10_000_000).map_err(|e| e.to_string())?;
        let se = mc.mc_stderr.ok_or("no standard error")?;
        let z = (mc.per_cell_covered_volume - analytic.per_cell_covered_volume).abs() / se;
        check(z <= 3.0, format!("{kind} Monte-Carlo off by {z:.2} standard errors"))?;
        let cap_se = mc.cap_overlap_stderr.ok_or("no overlap standard error")?;
        let zc = (mc.cap_overlap_volume - analytic.cap_overlap_volume).abs() / cap_se;
        check(zc <= 3.0, format!("{kind} Monte-Carlo overlap off by {zc:.2} standard errors"))?;
        worst = worst.max(z).max(zc);
    }
    Ok(format!(
        "sphere 2Vsc {:.4} Vsp {:.4}, cube overlap {:.4} Vsq {:.4}, Monte-Carlo (seed {MC_SEED:#x}) within {worst:.2} se",
        s.cap_overlap_volume, s.per_cell_covered_volume, c.cap_overlap_volume, c.per_cell_covered_volume
    ))
}

fn lattice_invariants() -> Outcome {
    let l = 4.0 / 6f64.sqrt();
    let mut tetrahedra = 0;
    for r in [1.0, 0.045, 2.5] {
        let k = build_kernel(KernelKind::SpherePacked, r, &LayoutPreset::K15).map_err(|e| e.to_string())?;
        check(k.len() == 15, format!("{} offsets at r = {r}", k.len()))?;
        let rep = validate_lattice(&k);
        let nearest = rep.min_nearest.ok_or("no neighbour pairs")?;
        check((nearest - l * r).abs() <= 1e-9, format!("min distance {nearest} at r = {r}"))?;
        check(rep.z_symmetric, "z symmetry fails")?;
        check(rep.tetrahedra > 0, "no regular tetrahedra found")?;
        check(
            rep.circumradius_residual <= 1e-9,
            format!("circumradius residual {:.3e}", rep.circumradius_residual),
        )?;
        check(rep.duplicates == 0, "duplicate offsets")?;
        tetrahedra = rep.tetrahedra;
    }
    Ok(format!("15 offsets, spacing (4/sqrt 6) r, z-symmetric, {tetrahedra} tetrahedra at circumradius r"))
}

fn duplicate_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let mut g = rng(0xD0 + case);
        let r = g.random_range(0.05..2.0);
        let geometry = build_kernel(KernelKind::SpherePacked, r, &LayoutPreset::K15).map_err(|e| e.to_string())?;
        let c = g.random_range(1..5);
        let base = g.random_range(2..12);
        // members clustered around a few random cells of one kernel at the origin
        let unique: Vec<_> = (0..base)
            .map(|_| {
                let k = g.random_range(0..geometry.len());
                in_ball(&mut g, geometry.cell_offsets[k], r)
            })
            .collect();
        let feats = random_features(&mut g, base, c);
        let mut positions = Vec::new();
        let mut rows = Vec::new();
        let mut rho = Vec::new();
        for i in 0..base {
            let m = g.random_range(1..5);
            for _ in 0..m {
                positions.push(unique[i]);
                rows.push(i);
                rho.push(m as f64);
            }
        }
        let dup_feats = feats.select(ndarray::Axis(0), &rows);
        let centers = [[0.0; 3]];
        let (ideal, _) = interpolate(&unique, feats.view(), &centers, &geometry, None).map_err(|e| e.to_string())?;
        let (got, _) =
            interpolate(&positions, dup_feats.view(), &centers, &geometry, Some(&rho)).map_err(|e| e.to_string())?;
        for (a, b) in got.values.iter().zip(ideal.values.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-12, format!("worst deviation {worst:.3e}"))?;
    Ok(format!("1000 replicated cells match the deduplicated ideal, worst {worst:.1e}"))
}

fn gradient_suite() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let rows = run_suite(&seeds).map_err(|e| e.to_string())?;
    check(rows.len() == 4, format!("{} operators checked", rows.len()))?;
    for r in &rows {
        check(r.passed(), format!("{}: worst rel err {:.3e} > {:.0e}", r.operator, r.worst, r.tolerance))?;
    }
    let worst: Vec<String> = rows.iter().map(|r| format!("{} {:.1e}", r.operator, r.worst)).collect();
    Ok(format!("10 seeds, worst rel err: {}", worst.join(", ")))
}

fn parameter_accounting() -> Outcome {
    let mut one = NetworkConfig::default();
    one.in_channels = 64;
    one.encoder_channels = vec![64];
    one.encoder_points = vec![2048];
    let rep = count_params_flops(&one);
    let s = &rep.sphere.layers[0];
    let c = &rep.cube.layers[0];
    check(s.weights == 61_440 && c.weights == 110_592, format!("64->64 layer: {} vs {}", s.weights, c.weights))?;

    let full = count_params_flops(&NetworkConfig::default());
    for (s, c) in full.sphere.layers.iter().zip(&full.cube.layers) {
        if s.name.contains("conv") {
            check(s.weights * 27 == c.weights * 15, format!("{}: {} vs {}", s.name, s.weights, c.weights))?;
        }
    }
    let (ts, tc) = (full.sphere.total_params(), full.cube.total_params());
    check(ts < tc, format!("sphere total {ts} not below cube total {tc}"))?;
    Ok(format!("every conv layer 15:27, default totals sphere {ts} < cube {tc}"))
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec::three_class();
    let scenes: Vec<PointCloud> = synth_scenes(2024, 200, &spec)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.cloud)
        .collect();
    let (val, tr) = scenes.split_at(40);
    let config = NetworkConfig::toy();
    check(config.kernel_kind == KernelKind::SpherePacked && config.use_density, "toy default is not sphere+DFD")?;
    let mut state = TrainState::new(&config, 2024).map_err(|e| e.to_string())?;
    let options = TrainOptions {
        epochs: 20,
        early_stop: Some((0.95, 0.85)),
    };
    let history = train(&mut state, tr, val, &options, |r| {
        if let Some(v) = &r.validation {
            println!(
                "    epoch {:>2}  loss {:.4}  acc {:.4}  mIoU {:.4}",
                r.epoch,
                r.mean_loss,
                v.accuracy(),
                v.miou()
            );
        }
    })
    .map_err(|e| e.to_string())?;
    let last = history.last().and_then(|r| r.validation.clone()).ok_or("no validation")?;
    let (acc, miou) = (last.accuracy(), last.miou());
    check(
        acc >= 0.95 && miou >= 0.85,
        format!("held-out acc {acc:.4} mIoU {miou:.4} after {} epochs", history.len()),
    )?;
    let trained = start.elapsed();

    // ablation grid through the command line, at a reduced budget
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_string_lossy().into_owned();
    let args = [
        "sphconv", "--seed", "2024", "--out", &out, "train", "--grid", "--synth", "100", "--holdout", "20", "--epochs",
        "4",
    ];
    let code = sphconv::cli::run(args);
    check(code == 0, format!("ablation grid exited with {code}"))?;
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    check(rows.len() == 3, format!("ablation csv has {} rows", rows.len()))?;
    for row in &rows {
        check(row.ends_with(",true"), format!("variant did not converge: {row}"))?;
    }
    let total = start.elapsed();
    check(total < Duration::from_secs(30 * 60), "over 30 minutes")?;
    Ok(format!(
        "acc {acc:.4} mIoU {miou:.4} after {} epochs ({:.0} s); cube, sphere, sphere+dfd grid converged",
        history.len(),
        trained.as_secs_f64()
    ))
}

fn oracle_equivalence() -> Outcome {
    for case in 0..100u64 {
        let mut g = rng(0x0E + case);
        let n = g.random_range(1..=64);
        let pts = random_points(&mut g, n, 1.0);
        let m = g.random_range(1..=n);
        let start = g.random_range(0..n);
        let fps = farthest_point_sample(&pts, m, start).map_err(|e| e.to_string())?;
        check(fps == fps_oracle(&pts, m, start), format!("fps case {case}"))?;

        let centers = random_points(&mut g, 8, 1.2);
        let radius = g.random_range(0.05..1.5);
        let k = g.random_range(1..=16);
        let table = ball_query(&pts, &centers, radius, k).map_err(|e| e.to_string())?;
        for (j, c) in centers.iter().enumerate() {
            let want = ball_oracle(&pts, *c, radius, k);
            check(table.valid(j) == want.as_slice(), format!("ball query case {case} center {j}"))?;
        }
    }
    for case in 0..100u64 {
        let mut g = rng(0xA5 + case);
        let r = g.random_range(0.1..1.0);
        let kind = if case % 2 == 0 { KernelKind::SpherePacked } else { KernelKind::CubeGrid };
        let geometry = build_kernel(kind, r, &kind.default_preset()).map_err(|e| e.to_string())?;
        let pts = random_points(&mut g, 100, 4.0 * r);
        let centers = random_points(&mut g, 3, r);
        let cells = assign_cells(&pts, &centers, &geometry);
        for (j, c) in centers.iter().enumerate() {
            for k in 0..geometry.len() {
                check(
                    cells.members(j, k) == cell_oracle(&pts, *c, &geometry, k).as_slice(),
                    format!("assign case {case} ({j}, {k})"),
                )?;
            }
        }
    }
    Ok("100 FPS and ball-query clouds, 100 cell assignments match brute force".into())
}

fn serialization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = sphconv::gradcheck::reduced_config();
    config.use_density = true;
    let mut state = TrainState::new(&config, 5).map_err(|e| e.to_string())?;
    let scenes: Vec<PointCloud> = synth_scenes(5, 2, &{
        let mut s = SceneSpec::three_class();
        s.points = config.n_points;
        s
    })
    .map_err(|e| e.to_string())?
    .into_iter()
    .map(|s| s.cloud)
    .collect();
    state.train_step(&scenes).map_err(|e| e.to_string())?;
    let a = dir.path().join("a.sicn");
    let b = dir.path().join("b.sicn");
    Checkpoint::from_state(&state).save(&a).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&a).map_err(|e| e.to_string())?;
    loaded.to_state().map_err(|e| e.to_string())?;
    loaded.save(&b).map_err(|e| e.to_string())?;
    let (ba, bb) = (std::fs::read(&a).map_err(|e| e.to_string())?, std::fs::read(&b).map_err(|e| e.to_string())?);
    check(ba == bb, "checkpoint save-load-save differs")?;

    let mut g = rng(8);
    let n = 1000;
    let pts: Vec<_> = random_points(&mut g, n, 10.0)
        .into_iter()
        .map(|p| p.map(|v| f64::from(v as f32)))
        .collect();
    let feats = random_features(&mut g, n, 4).mapv(|v| f64::from(v as f32));
    let labels = (0..n).map(|_| g.random_range(0..13)).collect();
    let cloud = PointCloud::new(pts, feats, Some(labels)).map_err(|e| e.to_string())?;
    let p = dir.path().join("c.pts");
    write_cloud(&cloud, &p).map_err(|e| e.to_string())?;
    let back = read_cloud(&p).map_err(|e| e.to_string())?;
    check(back == cloud, "PTS1 round trip differs")?;

    let big = PointCloud::from_positions(random_points(&mut g, 10_000, 20.0)).map_err(|e| e.to_string())?;
    let tiles = tile_scene(&big, [3.0, 1.5, 1.5], 0.5).map_err(|e| e.to_string())?;
    let mut seen = vec![false; big.len()];
    for t in &tiles {
        for &i in &t.point_indices {
            check(t.contains(big.positions[i]), format!("point {i} outside its tile"))?;
            seen[i] = true;
        }
    }
    check(seen.iter().all(|&s| s), "a point is in no tile")?;
    let room_tiles = tiles.len();

    let line = PointCloud::from_positions((0..=100).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect())
        .map_err(|e| e.to_string())?;
    let tiles = tile_scene(&line, [3.0, 3.0, 3.0], 0.5).map_err(|e| e.to_string())?;
    let origins: Vec<f64> = tiles.iter().map(|t| t.cube_min[0]).collect();
    check(origins == [0.0, 2.5, 5.0, 7.5], format!("origins {origins:?}"))?;
    check(windows_along(10.0, 3.0, 2.5) == 4, "closed-form window count")?;
    Ok(format!(
        "checkpoint and PTS1 bit-exact, {room_tiles} room tiles cover 10^4 points, origins 0/2.5/5.0/7.5"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometry occupancy", geometry_occupancy),
        ("lattice invariants", lattice_invariants),
        ("duplicate-point identity", duplicate_identity),
        ("gradient suite", gradient_suite),
        ("parameter accounting", parameter_accounting),
        ("toy training", toy_training),
        ("oracle equivalence", oracle_equivalence),
        ("serialization", serialization),
    ];
    let budgets = [60.0, 1.0, 10.0, 300.0, 60.0, 1800.0, 30.0, 60.0];
    let mut failed = 0;
    for (i, ((name, f), budget)) in criteria.iter().zip(budgets).enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(detail) if secs > budget => Err(format!("{detail}; took {secs:.1} s, budget {budget} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
