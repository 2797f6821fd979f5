//! Multi-resolution elevation pyramid.
//!
//! Layer 0 is the finest grid; layer `l` has cells `2^l` times larger. The map
//! origin is kept as an integer number of top-layer cells, so every layer
//! stays aligned under shifts. Each layer is a torus: a shift only moves the
//! per-layer ring offsets and clears the strips that entered the map.
//!
//! Ring offsets obey `ring[l] == 2 * ring[l + 1]`, which makes the parent of
//! the physical cell `(r, c)` the physical cell `(r / 2, c / 2)` one layer up.
//! The pooling passes rely on that to walk every layer in memory order.

use thiserror::Error;

use crate::omg::{fuse_into, inflate, omg_update, CellState, GaussianMeasurement, OmgError};
use crate::raster::{Raster, RasterMeta};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid pyramid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Omg(#[from] OmgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    pub num_layers: usize,
    /// Meters per cell at layer 0.
    pub base_resolution: f64,
    /// Side length of the square map in meters.
    pub map_size: f64,
    /// Variance multiplier for the first measurement that lands in a cell.
    pub first_measurement_inflation: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            base_resolution: 0.05,
            map_size: 24.0,
            first_measurement_inflation: 25.0,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.num_layers == 0 || self.num_layers > 16 {
            return Err(MapError::Config(format!("num_layers must be in 1..=16, got {}", self.num_layers)));
        }
        if !(self.base_resolution > 0.0) || !self.base_resolution.is_finite() {
            return Err(MapError::Config("base_resolution must be positive".into()));
        }
        if !(self.first_measurement_inflation >= 1.0) || !self.first_measurement_inflation.is_finite() {
            return Err(MapError::Config("first_measurement_inflation must be >= 1".into()));
        }
        let top = self.map_size / self.resolution(self.num_layers - 1);
        let whole = top.round();
        if !(whole >= 1.0) || (top - whole).abs() > 1e-6 {
            return Err(MapError::Config(format!(
                "map_size {} is not a whole number of top-layer cells ({top})",
                self.map_size
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn resolution(&self, layer: usize) -> f64 {
        self.base_resolution * (1u64 << layer) as f64
    }

    pub fn top_cells(&self) -> usize {
        (self.map_size / self.resolution(self.num_layers - 1)).round() as usize
    }

    pub fn cells_per_side(&self, layer: usize) -> usize {
        self.top_cells() << (self.num_layers - 1 - layer)
    }

    /// Layer-0 cells spanned by one cell of `layer` along each axis.
    #[inline]
    pub fn span(&self, layer: usize) -> usize {
        1 << layer
    }
}

/// Pinhole stereo camera parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
    /// Disparity noise standard deviation in pixels.
    pub disparity_noise: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_length: 500.0,
            baseline: 3.0,
            disparity_noise: 0.5,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.focal_length > 0.0 && self.baseline > 0.0 && self.disparity_noise >= 0.0 {
            Ok(())
        } else {
            Err(MapError::Config("camera parameters must be positive".into()))
        }
    }
}

/// One world-frame height measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub world_x: f64,
    pub world_y: f64,
    pub height: f64,
    /// Camera-frame range, used for layer selection.
    pub depth: f64,
    pub variance: f64,
}

impl Measurement {
    fn is_usable(&self) -> bool {
        self.world_x.is_finite()
            && self.world_y.is_finite()
            && self.height.is_finite()
            && self.depth.is_finite()
            && self.depth > 0.0
            && self.variance.is_finite()
            && self.variance > 0.0
    }
}

/// Standard deviation of depth from disparity quantization is
/// `z^2 * sigma_d / (f * b)`; this returns its square.
pub fn measurement_variance(depth: f64, camera: &CameraModel) -> f64 {
    let sigma = depth * depth * camera.disparity_noise / (camera.focal_length * camera.baseline);
    sigma * sigma
}

/// Lowest layer whose cell is strictly larger than the pixel footprint `z / f`,
/// clamped to the top layer.
pub fn select_layer(depth: f64, camera: &CameraModel, cfg: &PyramidConfig) -> usize {
    let footprint = depth / camera.focal_length;
    (0..cfg.num_layers)
        .find(|&l| cfg.resolution(l) > footprint)
        .unwrap_or(cfg.num_layers - 1)
}

/// Counters shared by the update paths and pooling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapStats {
    pub dropped: u64,
    pub measurements: u64,
    pub cell_writes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub up_fusions: u64,
    pub down_fusions: u64,
}

impl PoolStats {
    pub fn total(&self) -> u64 {
        self.up_fusions + self.down_fusions
    }
}

/// Output channels of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Mean,
    Variance,
    PrecisionSum,
    Count,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Mean, Channel::Variance, Channel::PrecisionSum, Channel::Count];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Mean => "mean",
            Channel::Variance => "variance",
            Channel::PrecisionSum => "precision_sum",
            Channel::Count => "count",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer<T> {
    side: usize,
    /// Physical row offset of logical row 0.
    ring_row: usize,
    ring_col: usize,
    cells: Vec<CellState<T>>,
    /// Measurements routed to each cell by this map's own update calls.
    assigned: Vec<u32>,
}

impl<T: Scalar> Layer<T> {
    fn new(side: usize) -> Self {
        Self {
            side,
            ring_row: 0,
            ring_col: 0,
            cells: vec![CellState::empty(); side * side],
            assigned: vec![0; side * side],
        }
    }

    #[inline]
    fn physical(&self, row: usize, col: usize) -> usize {
        let r = (row + self.ring_row) % self.side;
        let c = (col + self.ring_col) % self.side;
        r * self.side + c
    }

    fn clear(&mut self, idx: usize) {
        self.cells[idx] = CellState::empty();
        self.assigned[idx] = 0;
    }
}

/// N-layer elevation pyramid with toroidal addressing.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidMap<T> {
    cfg: PyramidConfig,
    /// Map corner in top-layer cells.
    origin: (i64, i64),
    layers: Vec<Layer<T>>,
    pub stats: MapStats,
}

impl<T: Scalar> PyramidMap<T> {
    /// Creates an empty map whose center is as close as possible to
    /// `(center_x, center_y)` on the top-layer lattice.
    pub fn new(cfg: PyramidConfig, center_x: f64, center_y: f64) -> Result<Self, MapError> {
        cfg.validate()?;
        let layers = (0..cfg.num_layers).map(|l| Layer::new(cfg.cells_per_side(l))).collect();
        let mut map = Self {
            origin: (0, 0),
            layers,
            stats: MapStats::default(),
            cfg,
        };
        map.origin = map.origin_for_center(center_x, center_y);
        Ok(map)
    }

    pub fn config(&self) -> &PyramidConfig {
        &self.cfg
    }

    pub fn num_layers(&self) -> usize {
        self.cfg.num_layers
    }

    pub fn side(&self, layer: usize) -> usize {
        self.layers[layer].side
    }

    /// World coordinates of the map's lower-left corner.
    pub fn origin_world(&self) -> (f64, f64) {
        let top = self.cfg.resolution(self.cfg.num_layers - 1);
        (self.origin.0 as f64 * top, self.origin.1 as f64 * top)
    }

    /// Origin in whole top-layer cells.
    pub fn origin_cells(&self) -> (i64, i64) {
        self.origin
    }

    fn origin_for_center(&self, x: f64, y: f64) -> (i64, i64) {
        let top = self.cfg.resolution(self.cfg.num_layers - 1);
        let half = self.cfg.map_size / 2.0;
        (((x - half) / top).round() as i64, ((y - half) / top).round() as i64)
    }

    /// Logical `(row, col)` of the cell at `layer` containing the world point.
    pub fn world_to_cell(&self, layer: usize, x: f64, y: f64) -> Option<(usize, usize)> {
        let res = self.cfg.resolution(layer);
        let scale = 1i64 << (self.cfg.num_layers - 1 - layer);
        let col = (x / res).floor() as i64 - self.origin.0 * scale;
        let row = (y / res).floor() as i64 - self.origin.1 * scale;
        let side = self.layers[layer].side as i64;
        if (0..side).contains(&row) && (0..side).contains(&col) {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, layer: usize, row: usize, col: usize) -> (f64, f64) {
        let res = self.cfg.resolution(layer);
        let (ox, oy) = self.origin_world();
        (ox + (col as f64 + 0.5) * res, oy + (row as f64 + 0.5) * res)
    }

    pub fn cell(&self, layer: usize, row: usize, col: usize) -> &CellState<T> {
        let l = &self.layers[layer];
        &l.cells[l.physical(row, col)]
    }

    pub fn cell_mut(&mut self, layer: usize, row: usize, col: usize) -> &mut CellState<T> {
        let l = &mut self.layers[layer];
        let i = l.physical(row, col);
        &mut l.cells[i]
    }

    pub fn cell_at_world(&self, layer: usize, x: f64, y: f64) -> Option<&CellState<T>> {
        self.world_to_cell(layer, x, y).map(|(r, c)| self.cell(layer, r, c))
    }

    /// Cells in physical (memory) order.
    pub fn physical_cells(&self, layer: usize) -> &[CellState<T>] {
        &self.layers[layer].cells
    }

    pub fn filled_cells(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.cells.iter().filter(|c| !c.is_empty()).count())
            .sum()
    }

    fn measurement_to_gaussian(&self, m: &Measurement, inflate_first: bool) -> Result<GaussianMeasurement<T>, MapError> {
        let var = if inflate_first {
            m.variance * self.cfg.first_measurement_inflation
        } else {
            m.variance
        };
        let conv = |v: f64| T::from_f64(v).ok_or(MapError::Omg(OmgError::NonFinite));
        Ok(GaussianMeasurement::new(conv(m.height)?, conv(var)?))
    }

    /// Routes the measurement through [`select_layer`] and updates one cell.
    ///
    /// Returns `false` if the measurement was dropped.
    pub fn update_single_layer(&mut self, m: &Measurement, camera: &CameraModel) -> Result<bool, MapError> {
        if !m.is_usable() {
            self.stats.dropped += 1;
            return Ok(false);
        }
        let layer = select_layer(m.depth, camera, &self.cfg);
        self.update_at_layer(m, layer)
    }

    /// Single-cell update at an explicitly chosen layer.
    pub fn update_at_layer(&mut self, m: &Measurement, layer: usize) -> Result<bool, MapError> {
        let Some((row, col)) = self.locate(m, layer) else {
            return Ok(false);
        };
        let l = &self.layers[layer];
        let idx = l.physical(row, col);
        let g = self.measurement_to_gaussian(m, l.assigned[idx] == 0)?;
        let l = &mut self.layers[layer];
        l.cells[idx] = omg_update(&l.cells[idx], &g)?;
        l.assigned[idx] = l.assigned[idx].saturating_add(1);
        self.stats.measurements += 1;
        self.stats.cell_writes += 1;
        Ok(true)
    }

    /// Direct multi-layer update: the measurement is fused into every cell
    /// whose footprint overlaps the footprint of its assigned cell, i.e. the
    /// single ancestor at each coarser layer and all descendants at each
    /// finer layer.
    pub fn update_direct_all_layers(&mut self, m: &Measurement, camera: &CameraModel) -> Result<bool, MapError> {
        if !m.is_usable() {
            self.stats.dropped += 1;
            return Ok(false);
        }
        let layer = select_layer(m.depth, camera, &self.cfg);
        self.update_direct_at_layer(m, layer)
    }

    pub fn update_direct_at_layer(&mut self, m: &Measurement, layer: usize) -> Result<bool, MapError> {
        let Some((row, col)) = self.locate(m, layer) else {
            return Ok(false);
        };
        // The first-hit rule follows the assigned cell, as in single-layer mode.
        let assigned_idx = self.layers[layer].physical(row, col);
        let first = self.layers[layer].assigned[assigned_idx] == 0;
        self.layers[layer].assigned[assigned_idx] += 1;
        let g = self.measurement_to_gaussian(m, first)?;
        let mut writes = 0u64;
        for l in 0..self.cfg.num_layers {
            let (r0, c0, n) = if l >= layer {
                let shift = l - layer;
                (row >> shift, col >> shift, 1usize)
            } else {
                let shift = layer - l;
                (row << shift, col << shift, 1usize << shift)
            };
            let lay = &mut self.layers[l];
            for r in r0..r0 + n {
                for c in c0..c0 + n {
                    let idx = lay.physical(r, c);
                    lay.cells[idx] = omg_update(&lay.cells[idx], &g)?;
                    writes += 1;
                }
            }
        }
        self.stats.measurements += 1;
        self.stats.cell_writes += writes;
        Ok(true)
    }

    fn locate(&mut self, m: &Measurement, layer: usize) -> Option<(usize, usize)> {
        if !m.is_usable() || layer >= self.cfg.num_layers {
            self.stats.dropped += 1;
            return None;
        }
        let cell = self.world_to_cell(layer, m.world_x, m.world_y);
        if cell.is_none() {
            self.stats.dropped += 1;
        }
        cell
    }

    /// Moves the map so that its center is the top-lattice point nearest to
    /// the given world position. Returns the shift in top-layer cells.
    pub fn shift_map(&mut self, center_x: f64, center_y: f64) -> (i64, i64) {
        let target = self.origin_for_center(center_x, center_y);
        let d = (target.0 - self.origin.0, target.1 - self.origin.1);
        self.shift_by(d.0, d.1);
        d
    }

    /// Shifts the origin by whole top-layer cells (`dx` along columns/x,
    /// `dy` along rows/y).
    pub fn shift_by(&mut self, dx: i64, dy: i64) {
        if dx == 0 && dy == 0 {
            return;
        }
        self.origin.0 += dx;
        self.origin.1 += dy;
        let n = self.cfg.num_layers;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let scale = 1i64 << (n - 1 - l);
            let side = layer.side as i64;
            let (sx, sy) = (dx * scale, dy * scale);
            layer.ring_col = (layer.ring_col as i64 + sx).rem_euclid(side) as usize;
            layer.ring_row = (layer.ring_row as i64 + sy).rem_euclid(side) as usize;
            if sx.abs() >= side || sy.abs() >= side {
                for i in 0..layer.cells.len() {
                    layer.clear(i);
                }
                continue;
            }
            let cols: Vec<usize> = entering(sx, layer.side).collect();
            let rows: Vec<usize> = entering(sy, layer.side).collect();
            for &col in &cols {
                for row in 0..layer.side {
                    let i = layer.physical(row, col);
                    layer.clear(i);
                }
            }
            for &row in &rows {
                for col in 0..layer.side {
                    let i = layer.physical(row, col);
                    layer.clear(i);
                }
            }
        }
    }

    /// Applies time inflation to every non-empty cell.
    pub fn apply_inflation_all(&mut self, k: f64) -> Result<(), MapError> {
        let kk = T::from_f64(k).ok_or(MapError::Omg(OmgError::InflationBelowOne))?;
        if !(k >= 1.0) {
            return Err(OmgError::InflationBelowOne.into());
        }
        for layer in &mut self.layers {
            for cell in layer.cells.iter_mut().filter(|c| !c.is_empty()) {
                *cell = inflate(cell, &kk)?;
            }
        }
        Ok(())
    }

    /// Pyramid pooling. Returns a new map in which every cell holds the fusion
    /// of all measurements whose assigned footprint overlaps it, leaving `self`
    /// untouched so later single-layer updates are not double counted.
    ///
    /// Up pass: each filled cell is fused into its parent, finest layer first.
    /// Down pass: walking from the top, each cell receives the fusion of the
    /// original (pre-pooling) states of all its ancestors. Empty targets get a
    /// plain copy.
    pub fn pool_pyramid(&self) -> (PyramidMap<T>, PoolStats) {
        let n = self.cfg.num_layers;
        let mut stats = PoolStats::default();
        let mut out = self.clone();
        out.stats = MapStats::default();

        for l in 0..n.saturating_sub(1) {
            let (lower, upper) = out.layers.split_at_mut(l + 1);
            let src = &lower[l];
            let dst = &mut upper[0];
            let side = src.side;
            for r in 0..side {
                let prow = (r / 2) * dst.side;
                for c in 0..side {
                    let cell = &src.cells[r * side + c];
                    if !cell.is_empty() {
                        fuse_into(&mut dst.cells[prow + c / 2], cell);
                        stats.up_fusions += 1;
                    }
                }
            }
        }

        if n > 1 {
            // Original states fused with all their ancestors' originals.
            let mut ancestors = self.layers[n - 1].cells.clone();
            for l in (0..n - 1).rev() {
                let side = self.layers[l].side;
                let pside = side / 2;
                let mut next = if l > 0 { Some(self.layers[l].cells.clone()) } else { None };
                let target = &mut out.layers[l].cells;
                for r in 0..side {
                    let prow = (r / 2) * pside;
                    for c in 0..side {
                        let src = &ancestors[prow + c / 2];
                        if src.is_empty() {
                            continue;
                        }
                        let i = r * side + c;
                        fuse_into(&mut target[i], src);
                        stats.down_fusions += 1;
                        if let Some(next) = next.as_mut() {
                            fuse_into(&mut next[i], src);
                            stats.down_fusions += 1;
                        }
                    }
                }
                if let Some(next) = next {
                    ancestors = next;
                }
            }
        }
        (out, stats)
    }

    /// Exports one channel of a layer in logical order. Empty cells are NaN.
    pub fn layer_raster(&self, layer: usize, channel: Channel) -> Raster<f32> {
        let side = self.layers[layer].side;
        Raster::from_fn(side, side, |r, c| {
            let cell = self.cell(layer, r, c);
            if cell.is_empty() {
                return f32::NAN;
            }
            match channel {
                Channel::Mean => cell.mean.to_f64().unwrap_or(f64::NAN) as f32,
                Channel::Variance => cell.variance.to_f64().unwrap_or(f64::NAN) as f32,
                Channel::PrecisionSum => cell.precision_sum.to_f64().unwrap_or(f64::NAN) as f32,
                Channel::Count => cell.count as f32,
            }
        })
    }

    pub fn layer_meta(&self, layer: usize, channel: &str) -> RasterMeta {
        let (ox, oy) = self.origin_world();
        RasterMeta {
            resolution: self.cfg.resolution(layer),
            origin_x: ox,
            origin_y: oy,
            layer,
            channel: channel.to_string(),
        }
    }

    /// Cell states of a layer in logical order.
    pub fn layer_states(&self, layer: usize) -> Raster<CellState<T>> {
        let side = self.layers[layer].side;
        Raster::from_fn(side, side, |r, c| self.cell(layer, r, c).clone())
    }
}

/// Logical indices that are new after shifting by `s` cells on an axis.
fn entering(s: i64, side: usize) -> impl Iterator<Item = usize> {
    let s_abs = s.unsigned_abs() as usize;
    if s > 0 {
        side - s_abs..side
    } else {
        0..s_abs
    }
}

/// Number of cells in one top cell's full pyramid: `1 + 4 + ... + 4^(N-1)`.
pub fn cell_pyramid_size(num_layers: usize) -> usize {
    (0..num_layers).map(|l| 1usize << (2 * l)).sum()
}
