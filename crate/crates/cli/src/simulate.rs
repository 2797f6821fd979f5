//! `simulate`: renders a synthetic flight and its ground truth.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.txt
//! frames/frame_0000.csv ...     (or .bin)
//! truth/dem.demr1               terrain heights at the finest resolution
//! truth/rocks.demr1             1 on a rock footprint, 0 elsewhere
//! truth/rocks.csv               x,y,radius,height per rock
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use elevmap::frame::{write_frame_binary, write_frame_csv};
use elevmap::synth::{generate_terrain, render_pointcloud, Terrain};

use crate::config::{FrameFormat, RunConfig};
use crate::{create_dir, write_raster, CliError, Result};

pub struct SimulateSummary {
    pub frames: usize,
    pub points: usize,
    pub rocks: usize,
}

pub fn frame_file_name(index: usize, format: FrameFormat) -> String {
    format!("frame_{index:04}.{}", format.extension())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let spec = cfg.terrain_spec();
    spec.validate().map_err(|m| CliError::Input(format!("terrain: {m}")))?;
    let traj = cfg.trajectory();
    traj.validate().map_err(|m| CliError::Input(format!("trajectory: {m}")))?;
    let terrain = generate_terrain(&spec);

    let frames_dir = out.join("frames");
    let truth_dir = out.join("truth");
    create_dir(&frames_dir)?;
    create_dir(&truth_dir)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;

    let mut points = 0;
    for i in 0..traj.frame_count {
        let frame = render_pointcloud(&terrain, &traj, i);
        points += frame.measurements.len();
        let mut w = BufWriter::new(fs::File::create(frames_dir.join(frame_file_name(i, cfg.frame_format)))?);
        match cfg.frame_format {
            FrameFormat::Csv => write_frame_csv(&mut w, &frame).map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?,
            FrameFormat::Binary => write_frame_binary(&mut w, &frame)?,
        }
        w.flush()?;
    }
    write_truth(&terrain, cfg.pipeline.pyramid.base_resolution, &truth_dir)?;
    Ok(SimulateSummary {
        frames: traj.frame_count,
        points,
        rocks: terrain.rocks.len(),
    })
}

fn write_truth(terrain: &Terrain, resolution: f64, dir: &Path) -> Result<()> {
    let s = &terrain.spec;
    let width = ((s.max.0 - s.min.0) / resolution).round() as usize;
    let height = ((s.max.1 - s.min.1) / resolution).round() as usize;
    let dem = terrain.dem(s.min, resolution, width, height);
    write_raster(&dir.join("dem.demr1"), &dem, &Terrain::raster_meta(s.min, resolution, "height"))?;
    let mask = terrain
        .rock_mask(s.min, resolution, width, height)
        .map(|&rock| if rock { 1.0f32 } else { 0.0 });
    write_raster(&dir.join("rocks.demr1"), &mask, &Terrain::raster_meta(s.min, resolution, "rock"))?;

    let mut w = csv::Writer::from_path(dir.join("rocks.csv"))?;
    let mut rows = vec![["x".to_string(), "y".into(), "radius".into(), "height".into()]];
    rows.extend(
        terrain
            .rocks
            .iter()
            .map(|r| [r.x.to_string(), r.y.to_string(), r.radius.to_string(), r.height.to_string()]),
    );
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
