//! Coarse-to-fine hazard segmentation.
//!
//! Roughness of a cell is `max - min` of the heights inside a circular
//! neighborhood. [`roughness_naive`] scans the whole disk for every cell.
//! [`roughness_rolling`] keeps the extrema of the previous cells of the row
//! and of the row above in a one-row buffer, together with their locations.
//! When a stored extremum still lies inside the new disk, the part of the new
//! disk it covers does not need to be read again, leaving one of four search
//! regions: the whole disk, the cells new with respect to the left neighbor,
//! those new with respect to the top neighbor, or those new with respect to
//! both.
//!
//! Both implementations mark a cell undefined when its disk leaves the
//! raster or contains an empty (NaN) cell, and they return bit-identical
//! rasters.

use crate::disk::Disk;
use crate::pyramid::{Channel, PyramidMap};
use crate::raster::Raster;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SegConfig {
    /// Meters; a cell is rough at or above this.
    pub roughness_threshold: f64,
    /// Meters.
    pub landing_radius: f64,
    /// Meters.
    pub roughness_search_radius: f64,
    /// Degrees.
    pub slope_threshold: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            roughness_threshold: 0.1,
            landing_radius: 0.5,
            roughness_search_radius: 0.5,
            slope_threshold: 10.0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.roughness_threshold)
            && ok(self.landing_radius)
            && ok(self.roughness_search_radius)
            && ok(self.slope_threshold)
        {
            Ok(())
        } else {
            Err("segmentation parameters must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoughnessMethod {
    Naive,
    #[default]
    Rolling,
}

/// Sliding extrema over a disk: per-cell max and min (NaN where undefined)
/// and the number of height reads performed.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrema {
    pub max: Raster<f32>,
    pub min: Raster<f32>,
    pub reads: u64,
}

impl Extrema {
    pub fn roughness(&self) -> Raster<f32> {
        let data = self
            .max
            .data
            .iter()
            .zip(&self.min.data)
            .map(|(&hi, &lo)| {
                let r = hi - lo;
                // -0.0 would otherwise depend on which zero each scan found first.
                if r == 0.0 {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        Raster {
            width: self.max.width,
            height: self.max.height,
            data,
        }
    }
}

#[inline]
fn fits(r: usize, c: usize, reach: usize, h: usize, w: usize) -> bool {
    r >= reach && c >= reach && r + reach < h && c + reach < w
}

#[inline]
fn gated(gate: Option<&[bool]>, i: usize) -> bool {
    gate.is_none_or(|g| g[i])
}

/// Full-disk scan per cell. `gate`, when given, selects the cells to
/// evaluate; the rest are left undefined.
pub fn extrema_naive(values: &Raster<f32>, disk: &Disk, gate: Option<&[bool]>) -> Extrema {
    let (h, w) = (values.height, values.width);
    let mut max = Raster::filled(w, h, f32::NAN);
    let mut min = Raster::filled(w, h, f32::NAN);
    let mut reads = 0u64;
    let reach = disk.reach();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !fits(r, c, reach, h, w) || !gated(gate, i) {
                continue;
            }
            let mut hi = f32::NEG_INFINITY;
            let mut lo = f32::INFINITY;
            let mut hole = false;
            for &(dy, dx) in disk.offsets() {
                let v = values.data[(r as isize + dy) as usize * w + (c as isize + dx) as usize];
                reads += 1;
                if v.is_nan() {
                    hole = true;
                }
                hi = hi.max(v);
                lo = lo.min(v);
            }
            if !hole {
                max.data[i] = hi;
                min.data[i] = lo;
            }
        }
    }
    Extrema { max, min, reads }
}

pub fn roughness_naive(heights: &Raster<f32>, radius: usize) -> (Raster<f32>, u64) {
    let e = extrema_naive(heights, &Disk::new(radius as f64), None);
    (e.roughness(), e.reads)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    valid: bool,
    max: f32,
    max_at: (isize, isize),
    min: f32,
    min_at: (isize, isize),
}

const INVALID: Entry = Entry {
    valid: false,
    max: 0.0,
    max_at: (0, 0),
    min: 0.0,
    min_at: (0, 0),
};

/// Which stored extrema can be reused for one of max/min.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reuse {
    None,
    Left,
    Top,
    Both,
}

impl Reuse {
    fn from_flags(left: bool, top: bool) -> Self {
        match (left, top) {
            (true, true) => Reuse::Both,
            (true, false) => Reuse::Left,
            (false, true) => Reuse::Top,
            (false, false) => Reuse::None,
        }
    }
}

/// The four search regions plus the union needed when max and min reuse
/// different neighbors.
struct Regions {
    full: Vec<(isize, isize)>,
    new_vs_left: Vec<(isize, isize)>,
    new_vs_top: Vec<(isize, isize)>,
    new_vs_both: Vec<(isize, isize)>,
    new_vs_either: Vec<(isize, isize)>,
}

impl Regions {
    fn new(disk: &Disk) -> Self {
        let new_vs_left = disk.difference_with_shifted(&[(0, -1)]);
        let new_vs_top = disk.difference_with_shifted(&[(-1, 0)]);
        let new_vs_both = disk.difference_with_shifted(&[(0, -1), (-1, 0)]);
        let new_vs_either: Vec<_> = disk
            .offsets()
            .iter()
            .copied()
            .filter(|o| new_vs_left.contains(o) || new_vs_top.contains(o))
            .collect();
        Self {
            full: disk.offsets().to_vec(),
            new_vs_left,
            new_vs_top,
            new_vs_both,
            new_vs_either,
        }
    }

    fn of(&self, reuse: Reuse) -> &[(isize, isize)] {
        match reuse {
            Reuse::None => &self.full,
            Reuse::Left => &self.new_vs_left,
            Reuse::Top => &self.new_vs_top,
            Reuse::Both => &self.new_vs_both,
        }
    }

    /// Smallest stored region that covers the search regions of both plans.
    fn covering(&self, a: Reuse, b: Reuse) -> &[(isize, isize)] {
        use Reuse::*;
        let region = match (a, b) {
            _ if a == b => self.of(a),
            (None, _) | (_, None) => &self.full,
            (Both, x) | (x, Both) => self.of(x),
            (Left, Top) | (Top, Left) => &self.new_vs_either,
            _ => &self.full,
        };
        if region.len() >= self.full.len() {
            &self.full
        } else {
            region
        }
    }
}

/// Rolling-buffer sliding extrema; same output as [`extrema_naive`].
pub fn extrema_rolling(values: &Raster<f32>, disk: &Disk, gate: Option<&[bool]>) -> Extrema {
    let (h, w) = (values.height, values.width);
    let mut max = Raster::filled(w, h, f32::NAN);
    let mut min = Raster::filled(w, h, f32::NAN);
    let mut reads = 0u64;
    let reach = disk.reach();
    let regions = Regions::new(disk);
    // buffer[c] holds the result for column c of the row above until the
    // current row overwrites it; buffer[c - 1] is then the left neighbor.
    let mut buffer = vec![INVALID; w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let top = buffer[c];
            if !fits(r, c, reach, h, w) || !gated(gate, i) {
                buffer[c] = INVALID;
                continue;
            }
            let left = if c > 0 { buffer[c - 1] } else { INVALID };
            let (ri, ci) = (r as isize, c as isize);
            let inside = |at: (isize, isize)| disk.contains(at.0 - ri, at.1 - ci);

            let max_left = left.valid && inside(left.max_at);
            let max_top = top.valid && inside(top.max_at);
            let min_left = left.valid && inside(left.min_at);
            let min_top = top.valid && inside(top.min_at);
            let region = regions.covering(
                Reuse::from_flags(max_left, max_top),
                Reuse::from_flags(min_left, min_top),
            );

            let dist = |at: (isize, isize)| (at.0 - ri) * (at.0 - ri) + (at.1 - ci) * (at.1 - ci);
            let mut hi = f32::NEG_INFINITY;
            let mut hi_at = (ri + (1 << 20), ci);
            let mut lo = f32::INFINITY;
            let mut lo_at = (ri + (1 << 20), ci);
            let mut hole = false;
            for &(dy, dx) in region {
                let (y, x) = (ri + dy, ci + dx);
                let v = values.data[y as usize * w + x as usize];
                reads += 1;
                if v.is_nan() {
                    hole = true;
                    continue;
                }
                // Among equal values keep the location nearest the center; it
                // stays inside the following disks longest.
                let d = dy * dy + dx * dx;
                if v > hi || (v == hi && d < dist(hi_at)) {
                    hi = v;
                    hi_at = (y, x);
                }
                if v < lo || (v == lo && d < dist(lo_at)) {
                    lo = v;
                    lo_at = (y, x);
                }
            }
            if hole {
                buffer[c] = INVALID;
                continue;
            }
            for (ok, e) in [(max_left, &left), (max_top, &top)] {
                if ok && (e.max > hi || (e.max == hi && dist(e.max_at) < dist(hi_at))) {
                    hi = e.max;
                    hi_at = e.max_at;
                }
            }
            for (ok, e) in [(min_left, &left), (min_top, &top)] {
                if ok && (e.min < lo || (e.min == lo && dist(e.min_at) < dist(lo_at))) {
                    lo = e.min;
                    lo_at = e.min_at;
                }
            }
            max.data[i] = hi;
            min.data[i] = lo;
            buffer[c] = Entry {
                valid: true,
                max: hi,
                max_at: hi_at,
                min: lo,
                min_at: lo_at,
            };
        }
    }
    Extrema { max, min, reads }
}

pub fn roughness_rolling(heights: &Raster<f32>, radius: usize) -> (Raster<f32>, u64) {
    let e = extrema_rolling(heights, &Disk::new(radius as f64), None);
    (e.roughness(), e.reads)
}

pub fn sliding_extrema(values: &Raster<f32>, disk: &Disk, gate: Option<&[bool]>, method: RoughnessMethod) -> Extrema {
    match method {
        RoughnessMethod::Naive => extrema_naive(values, disk, gate),
        RoughnessMethod::Rolling => extrema_rolling(values, disk, gate),
    }
}

/// Least-squares plane slope in degrees per top-layer cell, over the filled
/// cells whose centers lie within the landing radius. NaN when fewer than
/// three non-collinear cells are available.
pub fn compute_slope_top<T: Scalar>(map: &PyramidMap<T>, cfg: &SegConfig) -> Raster<f32> {
    let top = map.num_layers() - 1;
    let res = map.config().resolution(top);
    let heights = map.layer_raster(top, Channel::Mean);
    slope_raster(&heights, res, cfg.landing_radius)
}

pub fn slope_raster(heights: &Raster<f32>, resolution: f64, radius_m: f64) -> Raster<f32> {
    let disk = Disk::new(radius_m / resolution);
    let (h, w) = (heights.height, heights.width);
    Raster::from_fn(w, h, |r, c| {
        let mut pts = Vec::with_capacity(disk.len());
        for &(dy, dx) in disk.offsets() {
            if let Some(&z) = heights.get_signed(r as isize + dy, c as isize + dx) {
                if !z.is_nan() {
                    pts.push((dx as f64 * resolution, dy as f64 * resolution, z as f64));
                }
            }
        }
        plane_slope_deg(&pts).map_or(f32::NAN, |s| s as f32)
    })
}

/// Slope of the least-squares plane `z = a x + b y + c`, in degrees.
pub fn plane_slope_deg(pts: &[(f64, f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my, mz) = pts
        .iter()
        .fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n, a.2 + p.2 / n));
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, z) in pts {
        let (x, y, z) = (x - mx, y - my, z - mz);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy) * (sxx + syy);
    if !(det > 1e-9 * scale) {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    Some(a.hypot(b).atan().to_degrees())
}

/// Segmentation output at the finest resolution plus per-layer roughness.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyMaps {
    /// `true` = safe to land, finest layer.
    pub landing_mask: Raster<bool>,
    /// Finest cells whose landing disk holds at least one observed cell.
    pub observed: Raster<bool>,
    /// Roughness per layer in meters, index 0 = finest. Cells skipped by the
    /// cascade carry their coarse ancestor's value.
    pub roughness: Vec<Raster<f32>>,
    /// Top-layer slope in degrees.
    pub slope: Raster<f32>,
    /// Pooled finest-layer variance, m².
    pub uncertainty: Raster<f32>,
    /// Pooled finest-layer mean heights.
    pub heights: Raster<f32>,
    /// Finest cells whose roughness was computed rather than inherited.
    pub finest_evaluated: Raster<bool>,
    /// Meters, the radius `roughness` was computed with.
    pub search_radius: f64,
    pub resolution: f64,
    pub origin: (f64, f64),
    /// Height reads spent on roughness and landing-disk checks.
    pub reads: u64,
}

impl SafetyMaps {
    /// Mask as `DEMR1` values: 1 safe, 0 unsafe, NaN never observed.
    pub fn mask_raster(&self) -> Raster<f32> {
        Raster::from_fn(self.landing_mask.width, self.landing_mask.height, |r, c| {
            if *self.landing_mask.get(r, c) {
                1.0
            } else if *self.observed.get(r, c) {
                0.0
            } else {
                f32::NAN
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Safe,
    Unsafe,
    Unknown,
}

/// Cascade segmentation of a pooled pyramid.
///
/// The top layer is checked for slope and roughness. Each finer layer only
/// evaluates roughness under ancestors that were not found unsafe; cells
/// under an unsafe ancestor inherit the verdict. A finest cell is safe when
/// every cell within the landing radius has a computed roughness below the
/// threshold.
pub fn segment<T: Scalar>(map: &PyramidMap<T>, cfg: &SegConfig, method: RoughnessMethod) -> SafetyMaps {
    let n = map.num_layers();
    let top = n - 1;
    let pcfg = map.config();
    let thr = cfg.roughness_threshold as f32;
    let slope = compute_slope_top(map, cfg);
    let mut reads = 0u64;

    let mut roughness: Vec<Raster<f32>> = vec![Raster::filled(0, 0, f32::NAN); n];
    // Per layer: hazard value (roughness, or +inf when an ancestor is unsafe).
    let mut status_above: Option<Raster<Status>> = None;
    let mut hazard_finest = Raster::filled(0, 0, f32::NAN);
    let mut finest_evaluated = Raster::filled(0, 0, true);
    let mut finest_heights = Raster::filled(0, 0, f32::NAN);

    for l in (0..n).rev() {
        let heights = map.layer_raster(l, Channel::Mean);
        let side = heights.width;
        let disk = Disk::from_meters(cfg.roughness_search_radius, pcfg.resolution(l));
        let gate: Option<Vec<bool>> = status_above.as_ref().map(|above| {
            Raster::from_fn(side, side, |r, c| *above.get(r / 2, c / 2) != Status::Unsafe).data
        });
        let ext = sliding_extrema(&heights, &disk, gate.as_deref(), method);
        reads += ext.reads;
        let mut rough = ext.roughness();

        let status = Raster::from_fn(side, side, |r, c| {
            let i = r * side + c;
            if let Some(g) = &gate {
                if !g[i] {
                    return Status::Unsafe;
                }
            }
            let rv = rough.data[i];
            let rough_status = if rv.is_nan() {
                Status::Unknown
            } else if rv >= thr {
                Status::Unsafe
            } else {
                Status::Safe
            };
            if l == top {
                let s = *slope.get(r, c);
                if !s.is_nan() && s as f64 > cfg.slope_threshold {
                    return Status::Unsafe;
                }
                if s.is_nan() && rough_status == Status::Safe {
                    return Status::Unknown;
                }
            }
            rough_status
        });

        if l == 0 {
            finest_evaluated = Raster {
                width: side,
                height: side,
                data: gate.clone().unwrap_or_else(|| vec![true; side * side]),
            };
            finest_heights = heights.clone();
            hazard_finest = Raster::from_fn(side, side, |r, c| {
                let i = r * side + c;
                match *status.get(r, c) {
                    Status::Unsafe => f32::INFINITY,
                    _ => rough.data[i],
                }
            });
        }
        if let (Some(g), Some(coarse)) = (&gate, roughness.get(l + 1)) {
            for r in 0..side {
                for c in 0..side {
                    let i = r * side + c;
                    if !g[i] {
                        rough.data[i] = *coarse.get(r / 2, c / 2);
                    }
                }
            }
        }
        roughness[l] = rough;
        status_above = Some(status);
    }

    let res0 = pcfg.resolution(0);
    let landing = Disk::from_meters(cfg.landing_radius, res0);
    let worst = sliding_extrema(&hazard_finest, &landing, None, method);
    reads += worst.reads;
    let side = hazard_finest.width;
    let landing_mask = worst.max.map(|&v| v < thr);
    let observed_cells = map.layer_raster(0, Channel::Count).map(|v| !v.is_nan());
    let observed = Raster::from_fn(side, side, |r, c| {
        landing.offsets().iter().any(|&(dy, dx)| {
            observed_cells
                .get_signed(r as isize + dy, c as isize + dx)
                .copied()
                .unwrap_or(false)
        })
    });

    SafetyMaps {
        landing_mask,
        observed,
        roughness,
        slope,
        uncertainty: map.layer_raster(0, Channel::Variance),
        heights: finest_heights,
        finest_evaluated,
        search_radius: cfg.roughness_search_radius,
        resolution: res0,
        origin: map.origin_world(),
        reads,
    }
}

/// Non-cascaded reference: finest-layer roughness everywhere, then the same
/// landing-disk rule.
pub fn segment_flat<T: Scalar>(map: &PyramidMap<T>, cfg: &SegConfig) -> Raster<bool> {
    let res0 = map.config().resolution(0);
    let heights = map.layer_raster(0, Channel::Mean);
    let rough = extrema_naive(&heights, &Disk::from_meters(cfg.roughness_search_radius, res0), None).roughness();
    let worst = extrema_naive(&rough, &Disk::from_meters(cfg.landing_radius, res0), None);
    worst.max.map(|&v| v < cfg.roughness_threshold as f32)
}
