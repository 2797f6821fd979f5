//! Flat `key = value` run configuration.
//!
//! Values come from defaults, then an optional file, then command-line
//! overrides, each later source replacing earlier ones. Every key remembers
//! where its value came from so errors can point at the offending line.

use std::collections::BTreeMap;
use std::fmt;

use elevmap::hazard::{RoughnessMethod, SegConfig};
use elevmap::landing::DetectConfig;
use elevmap::pipeline::{PipelineConfig, UpdateMode};
use elevmap::synth::{NoiseModel, RockField, TerrainSpec, TrajectorySpec};
use elevmap::CameraModel;

/// Every recognized key, in the order the resolved config is written.
pub const KEYS: &[&str] = &[
    "layers",
    "base-res",
    "map-size",
    "first-meas-inflation",
    "roughness-thresh",
    "landing-radius",
    "search-radius",
    "slope-thresh",
    "max-peaks",
    "shift-iters",
    "w-rough",
    "w-dist",
    "w-sigma",
    "peak-factor",
    "min-distance",
    "inflation",
    "inflation-k",
    "roughness-method",
    "update-mode",
    "focal",
    "baseline",
    "sigma-d",
    "seed",
    "rocks",
    "undulation",
    "frame-count",
    "image-cols",
    "image-rows",
    "pixel-stride",
    "noise",
    "frame-format",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Csv,
    Binary,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Csv => "csv",
            FrameFormat::Binary => "bin",
        }
    }
}

/// Where a value was set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    File { path: String, line: usize },
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => write!(f, "default"),
            Source::File { path, line } => write!(f, "{path}:{line}"),
            Source::Flag => write!(f, "command line"),
        }
    }
}

/// A rejected value with its origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub source: Source,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.source, self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub camera: CameraModel,
    pub inflation_enabled: bool,
    pub inflation_k: f64,
    pub seed: u64,
    /// Rock field density, rocks per m².
    pub rocks: f64,
    pub undulation: f64,
    pub frame_count: usize,
    pub image_cols: usize,
    pub image_rows: usize,
    pub pixel_stride: usize,
    pub noise: NoiseModel,
    pub frame_format: FrameFormat,
    sources: BTreeMap<&'static str, Source>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let traj = TrajectorySpec::default();
        let field = TerrainSpec::default().rock_field.expect("default terrain has a rock field");
        Self {
            pipeline: PipelineConfig::default(),
            camera: CameraModel::default(),
            inflation_enabled: false,
            inflation_k: 1.0,
            seed: 1,
            rocks: field.density,
            undulation: TerrainSpec::default().undulation_amplitude,
            frame_count: traj.frame_count,
            image_cols: traj.image_cols,
            image_rows: traj.image_rows,
            pixel_stride: traj.pixel_stride,
            noise: traj.noise,
            frame_format: FrameFormat::Csv,
            sources: BTreeMap::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("not a valid number: '{v}'"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected on/off, got '{v}'")),
    }
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<(), ConfigError> {
        let Some(&canonical) = KEYS.iter().find(|k| **k == key) else {
            return Err(ConfigError {
                source,
                key: key.to_string(),
                message: "unknown key".into(),
            });
        };
        self.apply(canonical, value.trim()).map_err(|message| ConfigError {
            source: source.clone(),
            key: key.to_string(),
            message,
        })?;
        self.sources.insert(canonical, source);
        Ok(())
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), String> {
        let p = &mut self.pipeline;
        match key {
            "layers" => p.pyramid.num_layers = parse_num(v)?,
            "base-res" => p.pyramid.base_resolution = parse_num(v)?,
            "map-size" => p.pyramid.map_size = parse_num(v)?,
            "first-meas-inflation" => p.pyramid.first_measurement_inflation = parse_num(v)?,
            "roughness-thresh" => p.seg.roughness_threshold = parse_num(v)?,
            "landing-radius" => {
                p.seg.landing_radius = parse_num(v)?;
                p.detect.landing_radius = p.seg.landing_radius;
            }
            "search-radius" => p.seg.roughness_search_radius = parse_num(v)?,
            "slope-thresh" => p.seg.slope_threshold = parse_num(v)?,
            "max-peaks" => p.detect.max_peaks = parse_num(v)?,
            "shift-iters" => p.detect.shift_iterations = parse_num(v)?,
            "w-rough" => p.detect.weight_roughness = parse_num(v)?,
            "w-dist" => p.detect.weight_distance = parse_num(v)?,
            "w-sigma" => p.detect.weight_uncertainty = parse_num(v)?,
            "peak-factor" => p.detect.peak_factor = parse_num(v)?,
            "min-distance" => p.detect.min_distance = parse_num(v)?,
            "inflation" => self.inflation_enabled = parse_bool(v)?,
            "inflation-k" => self.inflation_k = parse_num(v)?,
            "roughness-method" => {
                p.roughness = match v {
                    "naive" => RoughnessMethod::Naive,
                    "rolling" => RoughnessMethod::Rolling,
                    _ => return Err(format!("expected naive or rolling, got '{v}'")),
                }
            }
            "update-mode" => {
                p.update_mode = match v {
                    "indirect" => UpdateMode::Indirect,
                    "direct" => UpdateMode::Direct,
                    _ => return Err(format!("expected indirect or direct, got '{v}'")),
                }
            }
            "focal" => self.camera.focal_length = parse_num(v)?,
            "baseline" => self.camera.baseline = parse_num(v)?,
            "sigma-d" => self.camera.disparity_noise = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "rocks" => self.rocks = parse_num(v)?,
            "undulation" => self.undulation = parse_num(v)?,
            "frame-count" => self.frame_count = parse_num(v)?,
            "image-cols" => self.image_cols = parse_num(v)?,
            "image-rows" => self.image_rows = parse_num(v)?,
            "pixel-stride" => self.pixel_stride = parse_num(v)?,
            "noise" => {
                self.noise = match v {
                    "gaussian" => NoiseModel::Gaussian,
                    "uniform" => NoiseModel::Uniform,
                    _ => return Err(format!("expected gaussian or uniform, got '{v}'")),
                }
            }
            "frame-format" => {
                self.frame_format = match v {
                    "csv" => FrameFormat::Csv,
                    "bin" => FrameFormat::Binary,
                    _ => return Err(format!("expected csv or bin, got '{v}'")),
                }
            }
            _ => unreachable!("key list and match disagree: {key}"),
        }
        Ok(())
    }

    /// Current value of a key in the same text form `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.pipeline;
        let s = match key {
            "layers" => p.pyramid.num_layers.to_string(),
            "base-res" => p.pyramid.base_resolution.to_string(),
            "map-size" => p.pyramid.map_size.to_string(),
            "first-meas-inflation" => p.pyramid.first_measurement_inflation.to_string(),
            "roughness-thresh" => p.seg.roughness_threshold.to_string(),
            "landing-radius" => p.seg.landing_radius.to_string(),
            "search-radius" => p.seg.roughness_search_radius.to_string(),
            "slope-thresh" => p.seg.slope_threshold.to_string(),
            "max-peaks" => p.detect.max_peaks.to_string(),
            "shift-iters" => p.detect.shift_iterations.to_string(),
            "w-rough" => p.detect.weight_roughness.to_string(),
            "w-dist" => p.detect.weight_distance.to_string(),
            "w-sigma" => p.detect.weight_uncertainty.to_string(),
            "peak-factor" => p.detect.peak_factor.to_string(),
            "min-distance" => p.detect.min_distance.to_string(),
            "inflation" => if self.inflation_enabled { "on" } else { "off" }.to_string(),
            "inflation-k" => self.inflation_k.to_string(),
            "roughness-method" => match p.roughness {
                RoughnessMethod::Naive => "naive",
                RoughnessMethod::Rolling => "rolling",
            }
            .to_string(),
            "update-mode" => match p.update_mode {
                UpdateMode::Indirect => "indirect",
                UpdateMode::Direct => "direct",
            }
            .to_string(),
            "focal" => self.camera.focal_length.to_string(),
            "baseline" => self.camera.baseline.to_string(),
            "sigma-d" => self.camera.disparity_noise.to_string(),
            "seed" => self.seed.to_string(),
            "rocks" => self.rocks.to_string(),
            "undulation" => self.undulation.to_string(),
            "frame-count" => self.frame_count.to_string(),
            "image-cols" => self.image_cols.to_string(),
            "image-rows" => self.image_rows.to_string(),
            "pixel-stride" => self.pixel_stride.to_string(),
            "noise" => match self.noise {
                NoiseModel::Gaussian => "gaussian",
                NoiseModel::Uniform => "uniform",
            }
            .to_string(),
            "frame-format" => self.frame_format.extension().to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies a config file's text. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, path: &str, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let source = Source::File {
                path: path.to_string(),
                line: i + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    source,
                    key: line.to_string(),
                    message: "expected 'key = value'".into(),
                });
            };
            self.set(key.trim(), value, source)?;
        }
        Ok(())
    }

    /// Fully resolved config, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).cloned().unwrap_or(Source::Default)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            source: self.source(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Checks every module invariant and blames the key that breaks it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        let py = &p.pyramid;
        if py.num_layers == 0 || py.num_layers > 16 {
            return Err(self.err("layers", "must be in 1..=16"));
        }
        if !(py.base_resolution > 0.0 && py.base_resolution.is_finite()) {
            return Err(self.err("base-res", "must be positive"));
        }
        if !(py.first_measurement_inflation >= 1.0 && py.first_measurement_inflation.is_finite()) {
            return Err(self.err("first-meas-inflation", "must be >= 1"));
        }
        if let Err(e) = py.validate() {
            return Err(self.err("map-size", e.to_string()));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let seg: &SegConfig = &p.seg;
        for (key, v) in [
            ("roughness-thresh", seg.roughness_threshold),
            ("landing-radius", seg.landing_radius),
            ("search-radius", seg.roughness_search_radius),
            ("slope-thresh", seg.slope_threshold),
        ] {
            if !positive(v) {
                return Err(self.err(key, "must be positive"));
            }
        }
        let d: &DetectConfig = &p.detect;
        if d.max_peaks < 1 {
            return Err(self.err("max-peaks", "must be at least 1"));
        }
        for (key, v) in [("w-rough", d.weight_roughness), ("w-dist", d.weight_distance), ("w-sigma", d.weight_uncertainty)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(self.err(key, "must be finite and >= 0"));
            }
        }
        if !(d.peak_factor > 0.0 && d.peak_factor <= 1.0) {
            return Err(self.err("peak-factor", "must be in (0, 1]"));
        }
        if !(d.min_distance >= 0.0 && d.min_distance.is_finite()) {
            return Err(self.err("min-distance", "must be finite and >= 0"));
        }
        if !(self.inflation_k >= 1.0 && self.inflation_k.is_finite()) {
            return Err(self.err("inflation-k", "must be finite and >= 1"));
        }
        for (key, v) in [("focal", self.camera.focal_length), ("baseline", self.camera.baseline)] {
            if !positive(v) {
                return Err(self.err(key, "must be positive"));
            }
        }
        if !(self.camera.disparity_noise >= 0.0 && self.camera.disparity_noise.is_finite()) {
            return Err(self.err("sigma-d", "must be finite and >= 0"));
        }
        if !(self.rocks >= 0.0 && self.rocks.is_finite()) {
            return Err(self.err("rocks", "must be finite and >= 0"));
        }
        if !self.undulation.is_finite() {
            return Err(self.err("undulation", "must be finite"));
        }
        for (key, v) in [
            ("frame-count", self.frame_count),
            ("image-cols", self.image_cols),
            ("image-rows", self.image_rows),
            ("pixel-stride", self.pixel_stride),
        ] {
            if v == 0 {
                return Err(self.err(key, "must be positive"));
            }
        }
        Ok(())
    }

    /// Pipeline settings with the inflation switch folded in.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            inflation: self.inflation_enabled.then_some(self.inflation_k),
            ..self.pipeline.clone()
        }
    }

    pub fn terrain_spec(&self) -> TerrainSpec {
        let base = TerrainSpec::default();
        let field = base.rock_field.expect("default terrain has a rock field");
        TerrainSpec {
            seed: self.seed,
            undulation_amplitude: self.undulation,
            rock_field: Some(RockField {
                density: self.rocks,
                ..field
            }),
            ..base
        }
    }

    pub fn trajectory(&self) -> TrajectorySpec {
        TrajectorySpec {
            frame_count: self.frame_count,
            camera: self.camera,
            image_cols: self.image_cols,
            image_rows: self.image_rows,
            pixel_stride: self.pixel_stride,
            noise: self.noise,
            seed: self.seed,
            ..TrajectorySpec::default()
        }
    }
}
