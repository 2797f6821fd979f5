//! `run`: feeds a frame directory through the mapping pipeline.
//!
//! Outputs, all deterministic for fixed inputs and config:
//!
//! ```text
//! config.txt                    resolved config
//! report.csv                    candidates and the selected site (or REJECT) per frame
//! frames.csv                    per-frame update counters and positions
//! rasters/frame_NNNN_mean.demr1 finest pooled heights per frame
//! rasters/frame_NNNN_mask.demr1 landing mask per frame
//! final/layerL_<channel>.demr1  every layer and channel after the last frame
//! final/mask.demr1, final/roughness.demr1
//! ```
//!
//! With two threads the map is updated on the calling thread and each pooled
//! snapshot is analyzed and written by a worker, in frame order.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use elevmap::eval::candidate_world;
use elevmap::frame::{read_frame_binary, read_frame_csv};
use elevmap::landing::{distance_transform, dt_max};
use elevmap::pipeline::{analyze, Mapper, PipelineConfig, UpdateStats};
use elevmap::pyramid::Channel;
use elevmap::hazard::SafetyMaps;
use elevmap::synth::Frame;
use elevmap::Pyramid;

use crate::config::RunConfig;
use crate::{create_dir, write_raster, CliError, Result};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub frames: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    /// Abort on the first unreadable frame instead of skipping it.
    pub strict: bool,
    pub frame_rasters: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub skipped: usize,
    pub rejects: usize,
    pub points: u64,
    pub dropped: u64,
    pub update_seconds: f64,
}

pub const REPORT_HEADER: [&str; 9] = [
    "frame",
    "kind",
    "index",
    "peak_row",
    "peak_col",
    "clearance_m",
    "shifted_x",
    "shifted_y",
    "area_variance_m2",
];

pub const FRAMES_HEADER: [&str; 14] = [
    "frame",
    "pose_x",
    "pose_y",
    "pose_z",
    "applied",
    "dropped",
    "cell_writes",
    "pool_fusions",
    "mean_sigma_z_m",
    "candidates",
    "selected_x",
    "selected_y",
    "dt_max_x",
    "dt_max_y",
];

/// Frame files of a directory (`frame_*.csv` or `frame_*.bin`), by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("frame_") && (name.ends_with(".csv") || name.ends_with(".bin")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("{}: no frame files", dir.display())));
    }
    Ok(files)
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let f = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let r = BufReader::new(f);
    let parsed = if path.extension().is_some_and(|e| e == "bin") {
        read_frame_binary(r)
    } else {
        read_frame_csv(r)
    };
    parsed.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// One pooled snapshot handed from the update loop to the analysis side.
struct Job {
    frame: u64,
    pose: (f64, f64, f64),
    stats: UpdateStats,
    mean_sigma_z: f64,
    pooled: Pyramid,
}

/// Analysis and all file output; owned by exactly one thread.
struct Sink {
    cfg: PipelineConfig,
    out: PathBuf,
    frame_rasters: bool,
    report: csv::Writer<BufWriter<fs::File>>,
    frames: csv::Writer<BufWriter<fs::File>>,
    rejects: usize,
    last: Option<(Job, SafetyMaps)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl Sink {
    fn new(cfg: PipelineConfig, out: &Path, frame_rasters: bool) -> Result<Self> {
        let open = |name: &str| -> Result<csv::Writer<BufWriter<fs::File>>> {
            Ok(csv::Writer::from_writer(BufWriter::new(fs::File::create(out.join(name))?)))
        };
        let mut report = open("report.csv")?;
        report.write_record(REPORT_HEADER)?;
        let mut frames = open("frames.csv")?;
        frames.write_record(FRAMES_HEADER)?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            frame_rasters,
            report,
            frames,
            rejects: 0,
            last: None,
        })
    }

    fn process(&mut self, job: Job) -> Result<()> {
        let analysis = analyze(&job.pooled, &self.cfg);
        let (origin, res) = (analysis.maps.origin, analysis.maps.resolution);
        let id = job.frame.to_string();
        for (i, c) in analysis.detection.candidates.iter().enumerate() {
            let (x, y) = candidate_world(c, origin, res);
            self.report.write_record([
                id.clone(),
                "candidate".into(),
                i.to_string(),
                c.peak.0.to_string(),
                c.peak.1.to_string(),
                c.clearance.to_string(),
                x.to_string(),
                y.to_string(),
                opt(c.area_fit.as_ref().map(|f| f.variance)),
            ])?;
        }
        let selected = analysis.detection.selected.map(|i| {
            let c = &analysis.detection.candidates[i];
            (i, c, candidate_world(c, origin, res))
        });
        match selected {
            Some((i, c, (x, y))) => self.report.write_record([
                id.clone(),
                "selected".into(),
                i.to_string(),
                c.peak.0.to_string(),
                c.peak.1.to_string(),
                c.clearance.to_string(),
                x.to_string(),
                y.to_string(),
                opt(c.area_fit.as_ref().map(|f| f.variance)),
            ])?,
            None => {
                self.rejects += 1;
                let mut row = vec![id.clone(), "REJECT".to_string()];
                row.resize(REPORT_HEADER.len(), String::new());
                self.report.write_record(&row)?;
            }
        }
        let distance = distance_transform(&analysis.maps.landing_mask, res);
        let dt = dt_max(&distance).map(|(r, c)| (origin.0 + (c as f64 + 0.5) * res, origin.1 + (r as f64 + 0.5) * res));
        let sel = selected.map(|s| s.2);
        self.frames.write_record([
            id.clone(),
            job.pose.0.to_string(),
            job.pose.1.to_string(),
            job.pose.2.to_string(),
            job.stats.applied.to_string(),
            job.stats.dropped.to_string(),
            job.stats.cell_writes.to_string(),
            job.stats.pool.total().to_string(),
            job.mean_sigma_z.to_string(),
            analysis.detection.candidates.len().to_string(),
            opt(sel.map(|p| p.0)),
            opt(sel.map(|p| p.1)),
            opt(dt.map(|p| p.0)),
            opt(dt.map(|p| p.1)),
        ])?;
        if self.frame_rasters {
            let dir = self.out.join("rasters");
            let stem = format!("frame_{:04}", job.frame);
            write_raster(
                &dir.join(format!("{stem}_mean.demr1")),
                &job.pooled.layer_raster(0, Channel::Mean),
                &job.pooled.layer_meta(0, "mean"),
            )?;
            write_raster(
                &dir.join(format!("{stem}_mask.demr1")),
                &analysis.maps.mask_raster(),
                &job.pooled.layer_meta(0, "mask"),
            )?;
        }
        self.last = Some((job, analysis.maps));
        Ok(())
    }

    fn finish(mut self) -> Result<usize> {
        self.report.flush()?;
        self.frames.flush()?;
        if let Some((job, maps)) = &self.last {
            let dir = self.out.join("final");
            create_dir(&dir)?;
            let map = &job.pooled;
            for l in 0..map.num_layers() {
                for ch in Channel::ALL {
                    write_raster(
                        &dir.join(format!("layer{l}_{}.demr1", ch.name())),
                        &map.layer_raster(l, ch),
                        &map.layer_meta(l, ch.name()),
                    )?;
                }
            }
            write_raster(&dir.join("mask.demr1"), &maps.mask_raster(), &map.layer_meta(0, "mask"))?;
            write_raster(&dir.join("roughness.demr1"), &maps.roughness[0], &map.layer_meta(0, "roughness"))?;
        }
        Ok(self.rejects)
    }
}

fn mean_sigma_z(frame: &Frame) -> f64 {
    if frame.measurements.is_empty() {
        return 0.0;
    }
    frame.measurements.iter().map(|m| m.variance.sqrt()).sum::<f64>() / frame.measurements.len() as f64
}

/// Reads frames in name order and hands each pooled snapshot to `emit`.
fn update_loop(
    files: &[PathBuf],
    mapper: &mut Mapper,
    strict: bool,
    summary: &mut RunSummary,
    mut emit: impl FnMut(Job) -> Result<()>,
) -> Result<()> {
    for path in files {
        let frame = match read_frame(path) {
            Ok(f) => f,
            Err(e) if !strict => {
                eprintln!("skipping {e}");
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let t = Instant::now();
        let (pooled, stats) = mapper.ingest(&frame)?;
        summary.update_seconds += t.elapsed().as_secs_f64();
        summary.frames += 1;
        summary.points += stats.applied;
        summary.dropped += stats.dropped;
        emit(Job {
            frame: frame.id,
            pose: frame.pose,
            stats,
            mean_sigma_z: mean_sigma_z(&frame),
            pooled,
        })?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    if !(1..=2).contains(&opts.threads) {
        return Err(CliError::Input(format!("--threads must be 1 or 2, got {}", opts.threads)));
    }
    let files = list_frames(&opts.frames)?;
    create_dir(&opts.out)?;
    if opts.frame_rasters {
        create_dir(&opts.out.join("rasters"))?;
    }
    fs::write(opts.out.join("config.txt"), cfg.to_text())?;

    let pipeline = cfg.pipeline();
    let mut mapper = Mapper::new(pipeline.clone())?;
    let mut sink = Sink::new(pipeline, &opts.out, opts.frame_rasters)?;
    let mut summary = RunSummary::default();

    if opts.threads == 1 {
        update_loop(&files, &mut mapper, opts.strict, &mut summary, |job| sink.process(job))?;
        summary.rejects = sink.finish()?;
    } else {
        let (tx, rx) = mpsc::sync_channel::<Job>(2);
        let worker = std::thread::spawn(move || -> Result<usize> {
            for job in rx {
                sink.process(job)?;
            }
            sink.finish()
        });
        let updated = update_loop(&files, &mut mapper, opts.strict, &mut summary, |job| {
            // A closed channel means the worker failed; its error is reported below.
            tx.send(job).map_err(|_| CliError::Io(std::io::Error::other("analysis worker stopped")))
        });
        drop(tx);
        let analyzed = worker.join().map_err(|_| CliError::Io(std::io::Error::other("analysis worker panicked")))?;
        summary.rejects = analyzed?;
        updated?;
    }
    if summary.frames == 0 {
        return Err(CliError::Input("no readable frames".into()));
    }
    Ok(summary)
}
