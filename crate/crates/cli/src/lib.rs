//! Command implementations behind the `elevmap` binary.
//!
//! Each command returns [`CliError`] on failure; [`CliError::exit_code`] maps
//! it to the process status.

pub mod bench;
pub mod config;
pub mod evaluate;
pub mod run;
pub mod simulate;

use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use elevmap::raster::{read_demr1, write_demr1, RasterMeta};
use elevmap::Raster;
use thiserror::Error;

pub use config::{ConfigError, RunConfig, Source};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("input error: {0}")]
    Input(String),
    #[error("check failed: {0}")]
    Assertion(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Map(#[from] elevmap::pyramid::MapError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Io(_) | CliError::Csv(_) | CliError::Map(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Defaults, then `file`, then `overrides` in order.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&path.display().to_string(), &text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v, Source::Flag)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub(crate) fn write_raster(path: &Path, raster: &Raster<f32>, meta: &RasterMeta) -> Result<()> {
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    write_demr1(&mut w, raster, meta)?;
    io::Write::flush(&mut w)?;
    Ok(())
}

pub(crate) fn read_raster(path: &Path) -> Result<(Raster<f32>, RasterMeta)> {
    let f = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    read_demr1(BufReader::new(f)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Value of the raster cell containing world point `(x, y)`.
pub fn sample(raster: &Raster<f32>, meta: &RasterMeta, x: f64, y: f64) -> Option<f32> {
    let c = ((x - meta.origin_x) / meta.resolution).floor();
    let r = ((y - meta.origin_y) / meta.resolution).floor();
    if c < 0.0 || r < 0.0 {
        return None;
    }
    raster.get_signed(r as isize, c as isize).copied()
}
