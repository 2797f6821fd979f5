//! `eval`: scores a run directory against a simulation's ground truth.
//!
//! Writes `rmse.csv` (per-frame DEM error) and `landing.csv` (whether the
//! selected site and the clearance maximum fall on a rock). The final frame's
//! RMSE must stay within `rmse_factor` times its mean per-point depth
//! standard deviation, and selected-site failures within `max_failures` when
//! that limit is given.

use std::fs;
use std::path::{Path, PathBuf};

use elevmap::eval::{eval_rmse, RmseResult};
use elevmap::raster::RasterMeta;
use elevmap::Raster;

use crate::{create_dir, read_raster, sample, CliError, Result};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub run: PathBuf,
    pub truth: PathBuf,
    pub out: PathBuf,
    pub rmse_factor: f64,
    pub max_failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub frames: usize,
    pub final_rmse: Option<f64>,
    pub final_sigma_z: f64,
    pub selected_failures: usize,
    pub dt_max_failures: usize,
    pub rejects: usize,
}

struct FrameRow {
    frame: u64,
    sigma_z: f64,
    selected: Option<(f64, f64)>,
    dt_max: Option<(f64, f64)>,
}

fn field<'a>(rec: &'a csv::StringRecord, headers: &csv::StringRecord, name: &str) -> Result<&'a str> {
    let i = headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("frames.csv: missing column {name}")))?;
    Ok(rec.get(i).unwrap_or(""))
}

fn number(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| CliError::Input(format!("frames.csv: bad {what} '{s}'")))
}

fn point(rec: &csv::StringRecord, headers: &csv::StringRecord, prefix: &str) -> Result<Option<(f64, f64)>> {
    let x = number(field(rec, headers, &format!("{prefix}_x"))?, prefix)?;
    let y = number(field(rec, headers, &format!("{prefix}_y"))?, prefix)?;
    Ok(x.zip(y))
}

fn read_frames(path: &Path) -> Result<Vec<FrameRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let frame = field(&rec, &headers, "frame")?
            .parse()
            .map_err(|_| CliError::Input("frames.csv: bad frame id".into()))?;
        rows.push(FrameRow {
            frame,
            sigma_z: number(field(&rec, &headers, "mean_sigma_z_m")?, "mean_sigma_z_m")?.unwrap_or(0.0),
            selected: point(&rec, &headers, "selected")?,
            dt_max: point(&rec, &headers, "dt_max")?,
        });
    }
    Ok(rows)
}

/// Truth heights at the cell centers of an estimate raster.
fn truth_on(estimate: &Raster<f32>, meta: &RasterMeta, truth: &Raster<f32>, truth_meta: &RasterMeta) -> Raster<f32> {
    Raster::from_fn(estimate.width, estimate.height, |r, c| {
        let x = meta.origin_x + (c as f64 + 0.5) * meta.resolution;
        let y = meta.origin_y + (r as f64 + 0.5) * meta.resolution;
        sample(truth, truth_meta, x, y).unwrap_or(f32::NAN)
    })
}

pub fn evaluate(opts: &EvalOptions) -> Result<EvalSummary> {
    let frames = read_frames(&opts.run.join("frames.csv"))?;
    if frames.is_empty() {
        return Err(CliError::Input("frames.csv has no frames".into()));
    }
    let (dem, dem_meta) = read_raster(&opts.truth.join("dem.demr1"))?;
    let (rocks, rocks_meta) = read_raster(&opts.truth.join("rocks.demr1"))?;
    create_dir(&opts.out)?;

    let mut rmse_out = csv::Writer::from_path(opts.out.join("rmse.csv"))?;
    rmse_out.write_record(["frame", "rmse_m", "overlap_cells", "empty_cells", "mean_sigma_z_m"])?;
    let mut landing_out = csv::Writer::from_path(opts.out.join("landing.csv"))?;
    landing_out.write_record(["frame", "selected_on_rock", "dt_max_on_rock"])?;

    let on_rock = |p: Option<(f64, f64)>| p.map(|(x, y)| sample(&rocks, &rocks_meta, x, y).is_some_and(|v| v > 0.5));
    let flag = |v: Option<bool>| v.map_or_else(String::new, |b| (b as u8).to_string());
    let mut summary = EvalSummary {
        frames: frames.len(),
        final_rmse: None,
        final_sigma_z: 0.0,
        selected_failures: 0,
        dt_max_failures: 0,
        rejects: 0,
    };
    for row in &frames {
        let path = opts.run.join("rasters").join(format!("frame_{:04}_mean.demr1", row.frame));
        let rmse = if path.exists() {
            let (est, meta) = read_raster(&path)?;
            Some(eval_rmse(&est, &truth_on(&est, &meta, &dem, &dem_meta)))
        } else {
            None
        };
        let opt_rmse = |r: &Option<RmseResult>| r.and_then(|r| r.rmse).map_or_else(String::new, |v| v.to_string());
        rmse_out.write_record([
            row.frame.to_string(),
            opt_rmse(&rmse),
            rmse.map_or_else(String::new, |r| r.overlap.to_string()),
            rmse.map_or_else(String::new, |r| r.empty.to_string()),
            row.sigma_z.to_string(),
        ])?;
        let (sel, dt) = (on_rock(row.selected), on_rock(row.dt_max));
        landing_out.write_record([row.frame.to_string(), flag(sel), flag(dt)])?;
        summary.selected_failures += sel.unwrap_or(false) as usize;
        summary.dt_max_failures += dt.unwrap_or(false) as usize;
        summary.rejects += row.selected.is_none() as usize;
        summary.final_rmse = rmse.and_then(|r| r.rmse);
        summary.final_sigma_z = row.sigma_z;
    }
    rmse_out.flush()?;
    landing_out.flush()?;
    fs::write(
        opts.out.join("summary.txt"),
        format!(
            "frames = {}\nfinal_rmse_m = {}\nfinal_mean_sigma_z_m = {}\nselected_on_rock = {}\ndt_max_on_rock = {}\nrejects = {}\n",
            summary.frames,
            summary.final_rmse.map_or_else(|| "none".into(), |v| v.to_string()),
            summary.final_sigma_z,
            summary.selected_failures,
            summary.dt_max_failures,
            summary.rejects
        ),
    )?;

    let Some(final_rmse) = summary.final_rmse else {
        return Err(CliError::Assertion("final frame has no DEM overlap with the truth".into()));
    };
    let bound = opts.rmse_factor * summary.final_sigma_z;
    if final_rmse > bound {
        return Err(CliError::Assertion(format!(
            "final RMSE {final_rmse:.4} m exceeds {} x mean sigma_z = {bound:.4} m",
            opts.rmse_factor
        )));
    }
    if let Some(max) = opts.max_failures {
        if summary.selected_failures > max {
            return Err(CliError::Assertion(format!(
                "{} selected sites on rocks, limit {max}",
                summary.selected_failures
            )));
        }
    }
    Ok(summary)
}
