//! `bench`: update-scheme, roughness, fusion, landing-failure and mean-shift
//! harnesses. Every mode checks that the compared implementations agree and
//! fails with an assertion error before printing numbers otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use elevmap::eval::{
    bench_segmentation, bench_updates, compare_fusion, eval_landing_failures, eval_mean_shift, failure_table, random_stream,
    seg_table, smooth_raster, update_table, write_failures_csv,
};
use elevmap::pipeline::{analyze, Mapper};
use elevmap::raster::RasterMeta;
use elevmap::synth::{generate_terrain, render_pointcloud, Frame};

use crate::config::RunConfig;
use crate::run::{list_frames, read_frame};
use crate::{create_dir, write_raster, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Updates,
    Seg,
    Fusion,
    Landing,
    Shift,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub mode: BenchMode,
    pub out: Option<PathBuf>,
    /// Point-cloud frames for `fusion`; rendered from the config when absent.
    pub frames: Option<PathBuf>,
    /// Stream length for `updates`.
    pub measurements: usize,
    /// Finest resolutions for `landing`.
    pub resolutions: Vec<f64>,
    /// Mean-shift starts for `shift`.
    pub starts: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            mode: BenchMode::Updates,
            out: None,
            frames: None,
            measurements: 100_000,
            resolutions: vec![0.05, 0.1, 0.2],
            starts: 1000,
        }
    }
}

/// Runs one mode and returns the printable table.
pub fn bench(cfg: &RunConfig, opts: &BenchOptions) -> Result<String> {
    if let Some(out) = &opts.out {
        create_dir(out)?;
    }
    let text = match opts.mode {
        BenchMode::Updates => updates(cfg, opts)?,
        BenchMode::Seg => seg()?,
        BenchMode::Fusion => fusion(cfg, opts)?,
        BenchMode::Landing => landing(cfg, opts)?,
        BenchMode::Shift => shift(cfg, opts)?,
    };
    if let Some(out) = &opts.out {
        fs::write(out.join("config.txt"), cfg.to_text())?;
    }
    Ok(text)
}

fn updates(cfg: &RunConfig, opts: &BenchOptions) -> Result<String> {
    let py = &cfg.pipeline.pyramid;
    let top = py.num_layers - 1;
    let all: Vec<usize> = (0..py.num_layers).collect();
    let mut rows = Vec::new();
    for (name, layers) in [("finest", vec![0]), ("top", vec![top]), ("mixed", all)] {
        let stream = random_stream(py, opts.measurements, &layers, cfg.seed);
        let b = bench_updates(py, &stream)?;
        if b.max_rel_diff > 1e-6 {
            return Err(CliError::Assertion(format!(
                "{name}: pooled and direct pyramids differ by {:.3e}",
                b.max_rel_diff
            )));
        }
        rows.push((name.to_string(), b));
    }
    Ok(update_table(&rows))
}

fn seg() -> Result<String> {
    let mut rows = Vec::new();
    for radius in [5, 10, 20] {
        let b = bench_segmentation(&smooth_raster(256, 5, radius as u64), radius);
        if !b.identical {
            return Err(CliError::Assertion(format!("radius {radius}: rolling roughness differs from naive")));
        }
        rows.push(b);
    }
    Ok(seg_table(&rows))
}

fn load_frames(cfg: &RunConfig, dir: Option<&Path>) -> Result<Vec<Frame>> {
    match dir {
        Some(dir) => list_frames(dir)?.iter().map(|p| read_frame(p)).collect(),
        None => {
            let terrain = generate_terrain(&cfg.terrain_spec());
            let traj = cfg.trajectory();
            Ok((0..traj.frame_count).map(|i| render_pointcloud(&terrain, &traj, i)).collect())
        }
    }
}

fn fusion(cfg: &RunConfig, opts: &BenchOptions) -> Result<String> {
    let frames = load_frames(cfg, opts.frames.as_deref())?;
    let last = frames.last().ok_or_else(|| CliError::Input("no frames".into()))?;
    let center = (last.pose.0, last.pose.1);
    let cmp = compare_fusion(&cfg.pipeline.pyramid, center, &frames)?;
    if cmp.max_mean_rel_diff > 1e-9 || cmp.variance_violations > 0 {
        return Err(CliError::Assertion(format!(
            "OMG/Kalman mismatch: mean rel diff {:.3e}, {} cells with OMG variance below Kalman",
            cmp.max_mean_rel_diff, cmp.variance_violations
        )));
    }
    if let Some(out) = &opts.out {
        let res = cfg.pipeline.pyramid.base_resolution;
        let grid = elevmap::Pyramid::new(cfg.pipeline.pyramid.clone(), center.0, center.1)?;
        let (ox, oy) = grid.origin_world();
        let meta = |channel: &str| RasterMeta {
            resolution: res,
            origin_x: ox,
            origin_y: oy,
            layer: 0,
            channel: channel.into(),
        };
        write_raster(&out.join("omg_mean.demr1"), &cmp.omg_mean, &meta("omg_mean"))?;
        write_raster(&out.join("omg_variance.demr1"), &cmp.omg_variance, &meta("omg_variance"))?;
        write_raster(&out.join("kalman_mean.demr1"), &cmp.kalman_mean, &meta("kalman_mean"))?;
        write_raster(&out.join("kalman_variance.demr1"), &cmp.kalman_variance, &meta("kalman_variance"))?;
    }
    let cells = cmp.omg_mean.data.iter().filter(|v| !v.is_nan()).count();
    let mean_ratio = {
        let (mut s, mut n) = (0.0f64, 0usize);
        for (o, k) in cmp.omg_variance.data.iter().zip(&cmp.kalman_variance.data) {
            if !o.is_nan() && *k > 0.0 {
                s += (*o as f64) / (*k as f64);
                n += 1;
            }
        }
        s / n.max(1) as f64
    };
    Ok(format!(
        "cells  max mean rel diff  variance violations  mean OMG/Kalman variance\n{cells:>5}  {:>17.3e}  {:>19}  {mean_ratio:>24.3}\n",
        cmp.max_mean_rel_diff, cmp.variance_violations
    ))
}

fn landing(cfg: &RunConfig, opts: &BenchOptions) -> Result<String> {
    let terrain = generate_terrain(&cfg.terrain_spec());
    let rows = eval_landing_failures(&terrain, &cfg.trajectory(), &cfg.pipeline(), &opts.resolutions)?;
    if let Some(out) = &opts.out {
        write_failures_csv(fs::File::create(out.join("failures.csv"))?, &rows)?;
    }
    Ok(failure_table(&rows))
}

fn shift(cfg: &RunConfig, opts: &BenchOptions) -> Result<String> {
    let terrain = generate_terrain(&cfg.terrain_spec());
    let traj = cfg.trajectory();
    let pipeline = cfg.pipeline();
    let mut mapper = Mapper::new(pipeline.clone())?;
    let mut pooled = None;
    for i in 0..traj.frame_count {
        pooled = Some(mapper.ingest(&render_pointcloud(&terrain, &traj, i))?.0);
    }
    let pooled = pooled.ok_or_else(|| CliError::Input("no frames".into()))?;
    let analysis = analyze(&pooled, &pipeline);
    let t = eval_mean_shift(&terrain, &analysis, &pipeline, opts.starts, cfg.seed);
    Ok(format!(
        "starts  on rock before  on rock after  escaped  escape rate  degenerate\n{:>6}  {:>14.4}  {:>13.4}  {:>7}  {:>11.3}  {:>10}\n",
        t.starts,
        t.initial_fraction(),
        t.final_fraction(),
        t.escaped,
        t.escape_rate(),
        t.degenerate
    ))
}
