//! Evaluation harnesses: DEM error per frame, landing failures against
//! ground-truth rocks, update-count and segmentation benchmarks, and an
//! OMG/Kalman comparison.
//!
//! Every benchmark checks that the compared implementations agree before it
//! reports counts or times.

use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hazard::{extrema_naive, extrema_rolling};
use crate::landing::{distance_transform, dt_max, mean_shift, FeatureField, LandingCandidate};
use crate::omg::{kalman_update, omg_update, CellState, GaussianMeasurement, KalmanState};
use crate::pipeline::{analyze, Analysis, Mapper, PipelineConfig, UpdateMode};
use crate::pyramid::{Channel, MapError, Measurement, PoolStats, PyramidConfig};
use crate::raster::Raster;
use crate::synth::{render_pointcloud, Frame, Terrain, TrajectorySpec};
use crate::disk::Disk;
use crate::Pyramid;

/// RMSE over cells defined in both rasters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseResult {
    /// `None` when no cell is defined in both.
    pub rmse: Option<f64>,
    pub overlap: usize,
    /// Truth cells with no estimate.
    pub empty: usize,
}

pub fn eval_rmse(estimate: &Raster<f32>, truth: &Raster<f32>) -> RmseResult {
    assert_eq!((estimate.width, estimate.height), (truth.width, truth.height), "rasters not aligned");
    let mut sum = 0.0f64;
    let mut overlap = 0usize;
    let mut empty = 0usize;
    for (&e, &t) in estimate.data.iter().zip(&truth.data) {
        if t.is_nan() {
            continue;
        }
        if e.is_nan() {
            empty += 1;
            continue;
        }
        let d = e as f64 - t as f64;
        sum += d * d;
        overlap += 1;
    }
    RmseResult {
        rmse: (overlap > 0).then(|| (sum / overlap as f64).sqrt()),
        overlap,
        empty,
    }
}

/// Ground truth sampled on the finest grid of a map.
pub fn truth_for_map(terrain: &Terrain, map: &Pyramid) -> Raster<f32> {
    let res = map.config().resolution(0);
    let side = map.side(0);
    terrain.dem(map.origin_world(), res, side, side)
}

/// Per-frame record of a flight through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub altitude: f64,
    pub rmse: RmseResult,
    pub baseline_rmse: RmseResult,
    /// Mean per-point depth standard deviation of the frame, meters.
    pub mean_sigma_z: f64,
    /// Selected site of the full method, world meters.
    pub selected: Option<(f64, f64)>,
    /// Clearance maximum site, world meters.
    pub dt_max: Option<(f64, f64)>,
    pub candidates: usize,
}

fn cell_world(origin: (f64, f64), res: f64, row: f64, col: f64) -> (f64, f64) {
    (origin.0 + (col + 0.5) * res, origin.1 + (row + 0.5) * res)
}

/// World position of a candidate's shifted cell.
pub fn candidate_world(cand: &LandingCandidate, origin: (f64, f64), resolution: f64) -> (f64, f64) {
    let (r, c) = cand.shifted_cell();
    cell_world(origin, resolution, r as f64, c as f64)
}

/// Analysis plus the quantities a flight evaluation needs from it.
pub fn frame_record(terrain: &Terrain, frame: &Frame, pooled: &Pyramid, analysis: &Analysis, baseline: &Pyramid) -> FrameRecord {
    let truth = truth_for_map(terrain, pooled);
    let res = analysis.maps.resolution;
    let origin = analysis.maps.origin;
    let distance = distance_transform(&analysis.maps.landing_mask, res);
    let mean_sigma_z = if frame.measurements.is_empty() {
        0.0
    } else {
        frame.measurements.iter().map(|m| m.variance.sqrt()).sum::<f64>() / frame.measurements.len() as f64
    };
    FrameRecord {
        frame: frame.id,
        altitude: frame.pose.2 - terrain.ground_height(frame.pose.0, frame.pose.1),
        rmse: eval_rmse(&pooled.layer_raster(0, Channel::Mean), &truth),
        baseline_rmse: eval_rmse(&baseline.layer_raster(0, Channel::Mean), &truth_for_map(terrain, baseline)),
        mean_sigma_z,
        selected: analysis
            .detection
            .selected_candidate()
            .map(|c| candidate_world(c, origin, res)),
        dt_max: dt_max(&distance).map(|(r, c)| cell_world(origin, res, r as f64, c as f64)),
        candidates: analysis.detection.candidates.len(),
    }
}

/// Result of a whole flight.
#[derive(Debug, Clone)]
pub struct FlightResult {
    pub records: Vec<FrameRecord>,
    pub final_pooled: Pyramid,
    pub final_analysis: Analysis,
}

/// Runs a synthetic flight through the pipeline and a per-frame-overwrite
/// baseline (a fresh map per frame, no fusion across frames).
pub fn run_flight(terrain: &Terrain, traj: &TrajectorySpec, cfg: &PipelineConfig) -> Result<FlightResult, MapError> {
    let mut mapper = Mapper::new(cfg.clone())?;
    let mut records = Vec::with_capacity(traj.frame_count);
    let mut last = None;
    for i in 0..traj.frame_count {
        let frame = render_pointcloud(terrain, traj, i);
        let (pooled, _) = mapper.ingest(&frame)?;
        let analysis = analyze(&pooled, cfg);
        let mut fresh = Mapper::new(cfg.clone())?;
        let (baseline, _) = fresh.ingest(&frame)?;
        records.push(frame_record(terrain, &frame, &pooled, &analysis, &baseline));
        last = Some((pooled, analysis));
    }
    let (final_pooled, final_analysis) = last.expect("at least one frame");
    Ok(FlightResult {
        records,
        final_pooled,
        final_analysis,
    })
}

/// Failure counts of one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FailureCounts {
    pub frames: usize,
    pub dt_max_failures: usize,
    pub shifted_failures: usize,
    /// Same counts with rocks grown by one finest cell.
    pub dt_max_margin_failures: usize,
    pub shifted_margin_failures: usize,
    pub dt_max_rejects: usize,
    pub shifted_rejects: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub resolution: f64,
    pub counts: FailureCounts,
}

/// Counts selections on rocks for the clearance-maximum baseline and the
/// full method at each finest resolution.
pub fn eval_landing_failures(
    terrain: &Terrain,
    traj: &TrajectorySpec,
    cfg: &PipelineConfig,
    resolutions: &[f64],
) -> Result<Vec<FailureRow>, MapError> {
    let mut rows = Vec::new();
    for &res in resolutions {
        let cfg = PipelineConfig {
            pyramid: PyramidConfig {
                base_resolution: res,
                ..cfg.pyramid.clone()
            },
            ..cfg.clone()
        };
        let mut mapper = Mapper::new(cfg.clone())?;
        let mut counts = FailureCounts::default();
        for i in 0..traj.frame_count {
            let frame = render_pointcloud(terrain, traj, i);
            let (pooled, _) = mapper.ingest(&frame)?;
            let analysis = analyze(&pooled, &cfg);
            let (origin, r) = (analysis.maps.origin, analysis.maps.resolution);
            counts.frames += 1;
            match analysis.detection.selected_candidate() {
                Some(c) => {
                    let (x, y) = candidate_world(c, origin, r);
                    counts.shifted_failures += terrain.is_rock(x, y) as usize;
                    counts.shifted_margin_failures += terrain.rock_within(x, y, r) as usize;
                }
                None => counts.shifted_rejects += 1,
            }
            let distance = distance_transform(&analysis.maps.landing_mask, r);
            match dt_max(&distance) {
                Some((row, col)) => {
                    let (x, y) = cell_world(origin, r, row as f64, col as f64);
                    counts.dt_max_failures += terrain.is_rock(x, y) as usize;
                    counts.dt_max_margin_failures += terrain.rock_within(x, y, r) as usize;
                }
                None => counts.dt_max_rejects += 1,
            }
        }
        rows.push(FailureRow { resolution: res, counts });
    }
    Ok(rows)
}

/// Mean-shift Monte Carlo over one analyzed map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShiftTrial {
    pub starts: usize,
    pub start_on_rock: usize,
    pub end_on_rock: usize,
    /// Starts on rock that end off rock.
    pub escaped: usize,
    pub degenerate: usize,
}

impl ShiftTrial {
    pub fn initial_fraction(&self) -> f64 {
        self.start_on_rock as f64 / self.starts.max(1) as f64
    }

    pub fn final_fraction(&self) -> f64 {
        self.end_on_rock as f64 / self.starts.max(1) as f64
    }

    pub fn escape_rate(&self) -> f64 {
        self.escaped as f64 / self.start_on_rock.max(1) as f64
    }
}

/// Runs mean shift from `n` uniformly drawn cells whose features are defined.
pub fn eval_mean_shift(terrain: &Terrain, analysis: &Analysis, cfg: &PipelineConfig, n: usize, seed: u64) -> ShiftTrial {
    let maps = &analysis.maps;
    let distance = distance_transform(&maps.landing_mask, maps.resolution);
    let mut trial = ShiftTrial::default();
    let Some(field) = FeatureField::new(maps, &distance) else {
        return trial;
    };
    let defined: Vec<(usize, usize)> = (0..field.features.height)
        .flat_map(|r| (0..field.features.width).map(move |c| (r, c)))
        .filter(|&(r, c)| field.features.get(r, c).is_some())
        .collect();
    if defined.is_empty() {
        return trial;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on_rock = |r: f64, c: f64| {
        let (x, y) = cell_world(maps.origin, maps.resolution, r, c);
        terrain.is_rock(x, y)
    };
    for _ in 0..n {
        let (r, c) = defined[rng.gen_range(0..defined.len())];
        let start = LandingCandidate {
            peak: (r, c),
            shifted: (r as f64, c as f64),
            clearance: *distance.get(r, c) as f64,
            area_fit: None,
            degenerate: false,
        };
        let out = mean_shift(&start, &field, maps.resolution, &cfg.detect);
        let (er, ec) = out.shifted_cell();
        let before = on_rock(r as f64, c as f64);
        let after = on_rock(er as f64, ec as f64);
        trial.starts += 1;
        trial.start_on_rock += before as usize;
        trial.end_on_rock += after as usize;
        trial.escaped += (before && !after) as usize;
        trial.degenerate += out.degenerate as usize;
    }
    trial
}

/// Cell-write counts and wall time of the two update schemes on one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBench {
    pub measurements: u64,
    pub direct_writes: u64,
    pub indirect_writes: u64,
    pub pool: PoolStats,
    pub direct_seconds: f64,
    pub indirect_seconds: f64,
    /// Largest relative per-cell difference between the two pyramids.
    pub max_rel_diff: f64,
}

impl UpdateBench {
    pub fn indirect_total(&self) -> u64 {
        self.indirect_writes + self.pool.total()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative difference in mean, variance and precision sum between
/// two pyramids; `INFINITY` when emptiness differs.
pub fn max_rel_diff(a: &Pyramid, b: &Pyramid) -> f64 {
    let mut worst = 0.0f64;
    for l in 0..a.num_layers() {
        let side = a.side(l);
        for r in 0..side {
            for c in 0..side {
                let (x, y) = (a.cell(l, r, c), b.cell(l, r, c));
                if x.is_empty() != y.is_empty() {
                    return f64::INFINITY;
                }
                if x.is_empty() {
                    continue;
                }
                worst = worst
                    .max(rel(x.mean, y.mean))
                    .max(rel(x.variance, y.variance))
                    .max(rel(x.precision_sum, y.precision_sum));
            }
        }
    }
    worst
}

/// Feeds the same stream to both schemes at the given layers and compares.
pub fn bench_updates(cfg: &PyramidConfig, stream: &[(Measurement, usize)]) -> Result<UpdateBench, MapError> {
    let mut direct = Pyramid::new(cfg.clone(), 0.0, 0.0)?;
    let mut indirect = Pyramid::new(cfg.clone(), 0.0, 0.0)?;
    let t0 = Instant::now();
    for (m, layer) in stream {
        direct.update_direct_at_layer(m, *layer)?;
    }
    let direct_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    for (m, layer) in stream {
        indirect.update_at_layer(m, *layer)?;
    }
    let (pooled, pool) = indirect.pool_pyramid();
    let indirect_seconds = t1.elapsed().as_secs_f64();
    Ok(UpdateBench {
        measurements: stream.len() as u64,
        direct_writes: direct.stats.cell_writes,
        indirect_writes: indirect.stats.cell_writes,
        pool,
        direct_seconds,
        indirect_seconds,
        max_rel_diff: max_rel_diff(&pooled, &direct),
    })
}

/// Random measurements inside a map centered at the origin, each routed to
/// a layer drawn from `layers`.
pub fn random_stream(cfg: &PyramidConfig, n: usize, layers: &[usize], seed: u64) -> Vec<(Measurement, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.map_size / 2.0;
    (0..n)
        .map(|_| {
            let m = Measurement {
                world_x: rng.gen_range(-half..half),
                world_y: rng.gen_range(-half..half),
                height: rng.gen_range(-1.0..1.0),
                depth: rng.gen_range(5.0..30.0),
                variance: rng.gen_range(1e-3..1.0),
            };
            (m, layers[rng.gen_range(0..layers.len())])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegBench {
    pub size: usize,
    pub radius: usize,
    pub naive_reads: u64,
    pub rolling_reads: u64,
    pub naive_seconds: f64,
    pub rolling_seconds: f64,
    /// Roughness rasters are bit-identical.
    pub identical: bool,
}

/// Smooth terrain-like heights: box-blurred uniform noise.
pub fn smooth_raster(size: usize, blur: usize, seed: u64) -> Raster<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Raster::from_fn(size, size, |_, _| rng.gen_range(-1.0f32..1.0));
    box_blur(&noise, blur)
}

fn box_blur(h: &Raster<f32>, k: usize) -> Raster<f32> {
    let k = k as isize;
    let pass = |src: &Raster<f32>, horizontal: bool| {
        Raster::from_fn(src.width, src.height, |r, c| {
            let (mut s, mut n) = (0.0f32, 0.0f32);
            for d in -k..=k {
                let (rr, cc) = if horizontal { (r as isize, c as isize + d) } else { (r as isize + d, c as isize) };
                if let Some(v) = src.get_signed(rr, cc) {
                    s += v;
                    n += 1.0;
                }
            }
            s / n
        })
    };
    pass(&pass(h, true), false)
}

/// Naive and rolling roughness on the same raster.
pub fn bench_segmentation(heights: &Raster<f32>, radius: usize) -> SegBench {
    let disk = Disk::new(radius as f64);
    let t0 = Instant::now();
    let naive = extrema_naive(heights, &disk, None);
    let naive_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let rolling = extrema_rolling(heights, &disk, None);
    let rolling_seconds = t1.elapsed().as_secs_f64();
    let bits = |r: &Raster<f32>| r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    SegBench {
        identical: bits(&naive.roughness()) == bits(&rolling.roughness()),
        size: heights.width,
        radius,
        naive_reads: naive.reads,
        rolling_reads: rolling.reads,
        naive_seconds,
        rolling_seconds,
    }
}

/// OMG and Kalman fused side by side on one flat grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionComparison {
    pub omg_mean: Raster<f32>,
    pub omg_variance: Raster<f32>,
    pub kalman_mean: Raster<f32>,
    pub kalman_variance: Raster<f32>,
    pub max_mean_rel_diff: f64,
    /// Cells where OMG variance is below Kalman variance beyond rounding.
    pub variance_violations: usize,
}

/// Fuses all points of `frames` into a finest-resolution grid of `cfg` with
/// both filters.
pub fn compare_fusion(cfg: &PyramidConfig, center: (f64, f64), frames: &[Frame]) -> Result<FusionComparison, MapError> {
    let grid = Pyramid::new(cfg.clone(), center.0, center.1)?;
    let side = grid.side(0);
    let mut omg = vec![CellState::<f64>::empty(); side * side];
    let mut kal: Vec<Option<KalmanState<f64>>> = vec![None; side * side];
    for f in frames {
        for m in &f.measurements {
            let Some((r, c)) = grid.world_to_cell(0, m.world_x, m.world_y) else { continue };
            let g = GaussianMeasurement::new(m.height, m.variance);
            let i = r * side + c;
            omg[i] = omg_update(&omg[i], &g)?;
            kal[i] = Some(match &kal[i] {
                None => KalmanState::from_measurement(&g)?,
                Some(k) => kalman_update(k, &g)?,
            });
        }
    }
    let pick = |f: &dyn Fn(usize) -> Option<f64>| Raster::from_fn(side, side, |r, c| f(r * side + c).map_or(f32::NAN, |v| v as f32));
    let mut max_mean_rel_diff = 0.0f64;
    let mut variance_violations = 0;
    for (o, k) in omg.iter().zip(&kal) {
        if let Some(k) = k {
            max_mean_rel_diff = max_mean_rel_diff.max(rel(o.mean, k.mean));
            variance_violations += (o.variance < k.variance - 1e-12) as usize;
        }
    }
    Ok(FusionComparison {
        omg_mean: pick(&|i| (!omg[i].is_empty()).then_some(omg[i].mean)),
        omg_variance: pick(&|i| (!omg[i].is_empty()).then_some(omg[i].variance)),
        kalman_mean: pick(&|i| kal[i].as_ref().map(|k| k.mean)),
        kalman_variance: pick(&|i| kal[i].as_ref().map(|k| k.variance)),
        max_mean_rel_diff,
        variance_violations,
    })
}

/// Writes one CSV row per frame with a header row.
pub fn write_frames_csv<W: Write>(w: W, records: &[FrameRecord]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    out.write_record([
        "frame",
        "altitude_m",
        "rmse_m",
        "overlap_cells",
        "empty_cells",
        "baseline_rmse_m",
        "mean_sigma_z_m",
        "selected_x",
        "selected_y",
        "dt_max_x",
        "dt_max_y",
        "candidates",
    ])?;
    for r in records {
        out.write_record([
            r.frame.to_string(),
            r.altitude.to_string(),
            opt(r.rmse.rmse),
            r.rmse.overlap.to_string(),
            r.rmse.empty.to_string(),
            opt(r.baseline_rmse.rmse),
            r.mean_sigma_z.to_string(),
            opt(r.selected.map(|p| p.0)),
            opt(r.selected.map(|p| p.1)),
            opt(r.dt_max.map(|p| p.0)),
            opt(r.dt_max.map(|p| p.1)),
            r.candidates.to_string(),
        ])?;
    }
    out.flush()
}

pub fn write_failures_csv<W: Write>(w: W, rows: &[FailureRow]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "resolution_m",
        "frames",
        "dt_max_failures",
        "shifted_failures",
        "dt_max_margin_failures",
        "shifted_margin_failures",
        "dt_max_rejects",
        "shifted_rejects",
    ])?;
    for row in rows {
        let c = &row.counts;
        out.write_record([
            row.resolution.to_string(),
            c.frames.to_string(),
            c.dt_max_failures.to_string(),
            c.shifted_failures.to_string(),
            c.dt_max_margin_failures.to_string(),
            c.shifted_margin_failures.to_string(),
            c.dt_max_rejects.to_string(),
            c.shifted_rejects.to_string(),
        ])?;
    }
    out.flush()
}

/// Failure table in the layout `resolution | dt-max | shifted peaks`.
pub fn failure_table(rows: &[FailureRow]) -> String {
    let mut s = String::from("resolution  dt-max  shifted-peaks  (margin: dt-max / shifted)\n");
    for row in rows {
        let c = &row.counts;
        s += &format!(
            "{:>8.2} m  {:>6}  {:>13}  ({} / {})\n",
            row.resolution, c.dt_max_failures, c.shifted_failures, c.dt_max_margin_failures, c.shifted_margin_failures
        );
    }
    s
}

pub fn update_table(rows: &[(String, UpdateBench)]) -> String {
    let mut s = String::from("stream            measurements  direct writes  indirect writes  pool fusions  direct ms  indirect ms\n");
    for (name, b) in rows {
        s += &format!(
            "{:<16}  {:>12}  {:>13}  {:>15}  {:>12}  {:>9.2}  {:>11.2}\n",
            name,
            b.measurements,
            b.direct_writes,
            b.indirect_writes,
            b.pool.total(),
            b.direct_seconds * 1e3,
            b.indirect_seconds * 1e3
        );
    }
    s
}

pub fn seg_table(rows: &[SegBench]) -> String {
    let mut s = String::from("size  radius  naive reads  rolling reads  ratio  naive ms  rolling ms\n");
    for b in rows {
        s += &format!(
            "{:>4}  {:>6}  {:>11}  {:>13}  {:>5.3}  {:>8.2}  {:>10.2}\n",
            b.size,
            b.radius,
            b.naive_reads,
            b.rolling_reads,
            b.rolling_reads as f64 / b.naive_reads.max(1) as f64,
            b.naive_seconds * 1e3,
            b.rolling_seconds * 1e3
        );
    }
    s
}

/// Convenience for harnesses that only need the mode switch.
pub fn with_mode(cfg: &PipelineConfig, mode: UpdateMode) -> PipelineConfig {
    PipelineConfig {
        update_mode: mode,
        ..cfg.clone()
    }
}
