//! Per-frame processing: shift, update, optional inflation, pooling,
//! segmentation and detection.
//!
//! [`Mapper`] owns the map and is the only writer. [`analyze`] is a pure
//! function of a pooled snapshot, so it can run on another thread.

use crate::hazard::{segment, RoughnessMethod, SafetyMaps, SegConfig};
use crate::landing::{detect, DetectConfig, Detection};
use crate::pyramid::{CameraModel, MapError, PoolStats, PyramidConfig};
use crate::synth::Frame;
use crate::Pyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One cell per measurement, then pooling.
    Indirect,
    /// Every overlapping cell at every layer; pooling is skipped.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pyramid: PyramidConfig,
    pub seg: SegConfig,
    pub detect: DetectConfig,
    /// Per-frame time inflation factor; `None` disables it.
    pub inflation: Option<f64>,
    pub roughness: RoughnessMethod,
    pub update_mode: UpdateMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidConfig::default(),
            seg: SegConfig::default(),
            detect: DetectConfig::default(),
            inflation: None,
            roughness: RoughnessMethod::Rolling,
            update_mode: UpdateMode::Indirect,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.pyramid.validate().map_err(|e| e.to_string())?;
        self.seg.validate()?;
        self.detect.validate()?;
        if let Some(k) = self.inflation {
            if !(k >= 1.0 && k.is_finite()) {
                return Err("inflation factor must be finite and >= 1".into());
            }
        }
        Ok(())
    }
}

/// Counters of one map update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub applied: u64,
    pub dropped: u64,
    pub cell_writes: u64,
    pub pool: PoolStats,
}

/// Single-writer owner of the map.
#[derive(Debug, Clone)]
pub struct Mapper {
    pub cfg: PipelineConfig,
    pub map: Pyramid,
}

impl Mapper {
    pub fn new(cfg: PipelineConfig) -> Result<Self, MapError> {
        let map = Pyramid::new(cfg.pyramid.clone(), 0.0, 0.0)?;
        Ok(Self { cfg, map })
    }

    /// Re-centers on the frame pose, fuses its points, inflates if enabled
    /// and returns the pooled snapshot.
    pub fn ingest(&mut self, frame: &Frame) -> Result<(Pyramid, UpdateStats), MapError> {
        self.map.shift_map(frame.pose.0, frame.pose.1);
        let before = self.map.stats;
        let camera: CameraModel = frame.camera;
        for m in &frame.measurements {
            match self.cfg.update_mode {
                UpdateMode::Indirect => self.map.update_single_layer(m, &camera)?,
                UpdateMode::Direct => self.map.update_direct_all_layers(m, &camera)?,
            };
        }
        if let Some(k) = self.cfg.inflation {
            self.map.apply_inflation_all(k)?;
        }
        let after = self.map.stats;
        let mut stats = UpdateStats {
            applied: after.measurements - before.measurements,
            dropped: after.dropped - before.dropped,
            cell_writes: after.cell_writes - before.cell_writes,
            pool: PoolStats::default(),
        };
        let pooled = match self.cfg.update_mode {
            UpdateMode::Indirect => {
                let (pooled, pool) = self.map.pool_pyramid();
                stats.pool = pool;
                pooled
            }
            UpdateMode::Direct => self.map.clone(),
        };
        Ok((pooled, stats))
    }
}

/// Segmentation and detection result for one pooled snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub maps: SafetyMaps,
    pub detection: Detection,
}

pub fn analyze(pooled: &Pyramid, cfg: &PipelineConfig) -> Analysis {
    let maps = segment(pooled, &cfg.seg, cfg.roughness);
    let detection = detect(&maps, pooled, &cfg.detect);
    Analysis { maps, detection }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::Measurement;

    fn flat_frame(id: u64, center: (f64, f64)) -> Frame {
        let mut measurements = Vec::new();
        for r in 0..120 {
            for c in 0..120 {
                measurements.push(Measurement {
                    world_x: center.0 - 3.0 + c as f64 * 0.05 + 0.025,
                    world_y: center.1 - 3.0 + r as f64 * 0.05 + 0.025,
                    height: 0.0,
                    depth: 5.0,
                    variance: 1e-4,
                });
            }
        }
        Frame { id, pose: (center.0, center.1, 5.0), camera: CameraModel::default(), measurements }
    }

    #[test]
    fn flat_patch_selects_a_site() {
        let cfg = PipelineConfig {
            pyramid: PyramidConfig { map_size: 6.4, ..PyramidConfig::default() },
            ..PipelineConfig::default()
        };
        let mut mapper = Mapper::new(cfg.clone()).unwrap();
        let (pooled, stats) = mapper.ingest(&flat_frame(0, (0.0, 0.0))).unwrap();
        assert!(stats.applied > 0);
        let a = analyze(&pooled, &cfg);
        assert!(a.detection.selected.is_some());
    }
}
