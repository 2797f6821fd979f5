//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use elevmap::disk::Disk;
use elevmap::eval::{bench_updates, eval_landing_failures, eval_mean_shift, random_stream, run_flight, smooth_raster};
use elevmap::hazard::{extrema_naive, extrema_rolling};
use elevmap::landing::distance_transform;
use elevmap::omg::{kalman_fold, omg_batch, omg_fold};
use elevmap::pipeline::PipelineConfig;
use elevmap::synth::{generate_terrain, TerrainSpec, TrajectorySpec};
use elevmap::{GaussianMeasurement, PyramidConfig, Raster};
use elevmap_cli::run::{run, RunOptions};
use elevmap_cli::simulate::simulate;
use elevmap_cli::{RunConfig, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sequences() -> Vec<Vec<GaussianMeasurement<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..=1000);
            (0..n)
                .map(|_| GaussianMeasurement::new(rng.gen_range(-100.0..=100.0), 10f64.powf(rng.gen_range(-4.0..=2.0))))
                .collect()
        })
        .collect()
}

fn fusion_equivalence(seqs: &[Vec<GaussianMeasurement<f64>>]) -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for s in seqs {
        let cum = omg_fold(s).map_err(|e| e.to_string())?;
        let batch = omg_batch(s).map_err(|e| e.to_string())?;
        worst = worst
            .max(rel(cum.mean, batch.mean))
            .max(rel(cum.variance, batch.variance))
            .max(rel(cum.precision_sum, batch.precision_sum));
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 10.0, format!("max rel diff {worst:.2e}, {secs:.2} s"))
}

fn kalman_identity(seqs: &[Vec<GaussianMeasurement<f64>>]) -> Outcome {
    let (mut worst, mut violations) = (0.0f64, 0usize);
    for s in seqs {
        let omg = omg_fold(s).map_err(|e| e.to_string())?;
        let kal = kalman_fold(s).map_err(|e| e.to_string())?;
        worst = worst.max(rel(omg.mean, kal.mean));
        if omg.variance < kal.variance - 1e-12 {
            violations += 1;
        }
    }
    check(
        worst <= 1e-9 && violations == 0,
        format!("max mean rel diff {worst:.2e}, {violations} variance violations"),
    )
}

fn pooling_contract() -> Outcome {
    let cfg = PyramidConfig::default();
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let b = bench_updates(&cfg, &random_stream(&cfg, 10_000, &[0, 1, 2], seed)).map_err(|e| e.to_string())?;
        worst = worst.max(b.max_rel_diff);
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 60.0, format!("max rel diff {worst:.2e}, {secs:.2} s"))
}

fn write_counts() -> Outcome {
    let cfg = PyramidConfig {
        base_resolution: 0.0125,
        ..PyramidConfig::default()
    };
    let finest = bench_updates(&cfg, &random_stream(&cfg, 10_000, &[0], 7)).map_err(|e| e.to_string())?;
    if finest.direct_writes != 3 * 10_000 {
        return Err(format!("finest-routed direct writes {} != 3 per measurement", finest.direct_writes));
    }
    let mut parts = vec!["3 writes/measurement finest-routed".to_string()];
    for n in [100_000u64, 1_000_000] {
        let b = bench_updates(&cfg, &random_stream(&cfg, n as usize, &[2], 8)).map_err(|e| e.to_string())?;
        let ok = b.direct_writes == 21 * n && b.indirect_writes == n && b.indirect_total() < b.direct_writes;
        parts.push(format!(
            "n={n}: direct {} vs indirect {} + {} pool ({:.1} ms vs {:.1} ms)",
            b.direct_writes,
            b.indirect_writes,
            b.pool.total(),
            b.direct_seconds * 1e3,
            b.indirect_seconds * 1e3
        ));
        if !ok || b.max_rel_diff > 1e-6 {
            return Err(parts.join("; "));
        }
    }
    Ok(parts.join("; "))
}

fn rolling_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let t = Instant::now();
    let (mut naive_reads, mut rolling_reads) = (0u64, 0u64);
    let mut smooth_count = 0;
    for i in 0..100 {
        let radius = rng.gen_range(5..=20);
        let smooth = i % 2 == 0;
        let raster = if smooth {
            smooth_raster(256, rng.gen_range(2..=8), rng.gen())
        } else {
            Raster::from_fn(256, 256, |_, _| rng.gen_range(-1.0f32..1.0))
        };
        let disk = Disk::new(radius as f64);
        let a = extrema_naive(&raster, &disk, None);
        let b = extrema_rolling(&raster, &disk, None);
        let bits = |r: &Raster<f32>| r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&a.roughness()) != bits(&b.roughness()) {
            return Err(format!("raster {i} (radius {radius}) differs"));
        }
        if smooth {
            smooth_count += 1;
            if b.reads >= a.reads {
                return Err(format!("smooth raster {i}: rolling reads {} >= naive {}", b.reads, a.reads));
            }
            naive_reads += a.reads;
            rolling_reads += b.reads;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        secs < 60.0,
        format!(
            "100 rasters bit-equal; smooth ({smooth_count}) reads {:.2}x fewer; {secs:.2} s",
            naive_reads as f64 / rolling_reads as f64
        ),
    )
}

fn flight_rmse(flight: &elevmap::eval::FlightResult) -> Outcome {
    let last = flight.records.last().ok_or("empty flight")?;
    let rmse = last.rmse.rmse.ok_or("no overlap with truth")?;
    let base = last.baseline_rmse.rmse.ok_or("baseline has no overlap")?;
    check(
        rmse <= 3.0 * last.mean_sigma_z && rmse <= base,
        format!(
            "final rmse {rmse:.4} m, 3 sigma_z {:.4} m, no-fusion baseline {base:.4} m",
            3.0 * last.mean_sigma_z
        ),
    )
}

fn table_failures() -> Outcome {
    let t = Instant::now();
    let terrain = generate_terrain(&TerrainSpec::default());
    let cfg = PipelineConfig {
        pyramid: PyramidConfig {
            map_size: 12.0,
            ..PyramidConfig::default()
        },
        ..PipelineConfig::default()
    };
    let rows = eval_landing_failures(&terrain, &TrajectorySpec::default(), &cfg, &[0.05, 0.1, 0.2]).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let fine = &rows[0].counts;
    let coarse = &rows[2].counts;
    let strict_needed = coarse.dt_max_failures >= 5;
    let ok = fine.dt_max_failures == 0
        && fine.shifted_failures == 0
        && coarse.shifted_failures <= coarse.dt_max_failures
        && (!strict_needed || coarse.shifted_failures < coarse.dt_max_failures)
        && secs < 300.0;
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("{} m: dt-max {} / shifted {}", r.resolution, r.counts.dt_max_failures, r.counts.shifted_failures))
        .collect();
    check(ok, format!("{}; {secs:.1} s", cells.join(", ")))
}

fn mean_shift_escape(flight: &elevmap::eval::FlightResult, cfg: &PipelineConfig) -> Outcome {
    let terrain = generate_terrain(&TerrainSpec::default());
    let d = &cfg.detect;
    if (d.weight_roughness, d.weight_distance, d.weight_uncertainty, d.shift_iterations) != (100.0, 10.0, 100.0, 5) {
        return Err("detector weights are not the defaults".into());
    }
    let t = eval_mean_shift(&terrain, &flight.final_analysis, cfg, 1000, 1008);
    check(
        t.final_fraction() < t.initial_fraction() && t.escape_rate() >= 0.8,
        format!(
            "on rock {:.3} -> {:.3}, {} of {} escaped ({:.1}%)",
            t.initial_fraction(),
            t.final_fraction(),
            t.escaped,
            t.start_on_rock,
            100.0 * t.escape_rate()
        ),
    )
}

/// Euclidean clearance in cells, treating the ring outside the raster as hazard.
fn euclid(mask: &Raster<bool>) -> Raster<f64> {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let hazards: Vec<(isize, isize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| !mask.get(r as usize, c as usize))
        .collect();
    Raster::from_fn(mask.width, mask.height, |r, c| {
        if !mask.get(r, c) {
            return 0.0;
        }
        let (r, c) = (r as isize, c as isize);
        let edge = (r + 1).min(c + 1).min(h - r).min(w - c) as f64;
        let mut best2 = (edge * edge) as isize;
        for &(hr, hc) in &hazards {
            best2 = best2.min((hr - r).pow(2) + (hc - c).pow(2));
        }
        (best2 as f64).sqrt()
    })
}

fn chamfer_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let density = 10f64.powf(rng.gen_range(-3.0..-0.5));
        let mask = Raster::from_fn(128, 128, |_, _| !rng.gen_bool(density));
        let dt = distance_transform(&mask, 1.0);
        let oracle = euclid(&mask);
        for (got, want) in dt.data.iter().zip(&oracle.data) {
            let err = if *want == 0.0 { (*got as f64).abs() } else { (*got as f64 - want).abs() / want };
            worst = worst.max(err);
        }
    }
    check(worst <= 0.08, format!("max relative error {:.2}% on 50 masks", 100.0 * worst))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("map-size", "12"),
        ("frame-count", "8"),
        ("image-cols", "320"),
        ("image-rows", "240"),
        ("pixel-stride", "2"),
        ("frame-format", "bin"),
        ("seed", "7"),
    ] {
        cfg.set(k, v, Source::Flag).map_err(|e| e.to_string())?;
    }
    let frames = dir.path().join("sim");
    simulate(&cfg, &frames).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (name, threads) in [("a", 1), ("b", 1), ("c", 2)] {
        let out = dir.path().join(name);
        run(
            &cfg,
            &RunOptions {
                frames: frames.join("frames"),
                out: out.clone(),
                threads,
                strict: true,
                frame_rasters: true,
            },
        )
        .map_err(|e| e.to_string())?;
        trees.push(tree(&out));
    }
    let files = trees[0].len();
    check(
        files > 0 && trees[0] == trees[1] && trees[0] == trees[2],
        format!("{files} output files identical across 2 serial runs and --threads 2"),
    )
}

fn main() -> ExitCode {
    let seqs = sequences();
    let pipeline = PipelineConfig::default();
    let terrain = generate_terrain(&TerrainSpec::default());
    let flight = run_flight(&terrain, &TrajectorySpec::default(), &pipeline);

    let results: Vec<(&str, Outcome)> = vec![
        ("fusion: cumulative == batch", fusion_equivalence(&seqs)),
        ("fusion: Kalman mean identity and variance bound", kalman_identity(&seqs)),
        ("pyramid: pooled == direct all-layer", pooling_contract()),
        ("pyramid: direct vs indirect write counts", write_counts()),
        ("hazard: rolling roughness exactness", rolling_exactness()),
        (
            "flight: final RMSE vs sigma_z and no-fusion baseline",
            flight.as_ref().map_err(|e| e.to_string()).and_then(flight_rmse),
        ),
        ("landing: failures by resolution", table_failures()),
        (
            "landing: mean shift leaves rocks",
            flight.as_ref().map_err(|e| e.to_string()).and_then(|f| mean_shift_escape(f, &pipeline)),
        ),
        ("landing: chamfer accuracy", chamfer_accuracy()),
        ("run: determinism and threading", run_determinism()),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
