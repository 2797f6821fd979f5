//! Landing site detection on a segmented map.
//!
//! The landing mask is turned into a clearance raster with a 3-4 chamfer
//! distance transform. Up to `max_peaks` clearance maxima are kept after
//! non-maximum suppression, each is moved by a few mean-shift iterations
//! towards smooth, well-observed and open terrain, and the candidate whose
//! landing area has the smallest fused OMG variance wins.

use crate::disk::Disk;
use crate::hazard::{extrema_rolling, SafetyMaps};
use crate::omg::{fuse_states, CellState};
use crate::pyramid::PyramidMap;
use crate::raster::Raster;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub max_peaks: usize,
    pub shift_iterations: usize,
    pub weight_roughness: f64,
    pub weight_distance: f64,
    pub weight_uncertainty: f64,
    /// Peaks below `peak_factor * max clearance` are dropped.
    pub peak_factor: f64,
    /// Meters; candidates with less clearance are rejected.
    pub min_distance: f64,
    /// Meters; radius of the mean-shift window, the area fit and the NMS window.
    pub landing_radius: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            max_peaks: 5,
            shift_iterations: 5,
            weight_roughness: 100.0,
            weight_distance: 10.0,
            weight_uncertainty: 100.0,
            peak_factor: 0.5,
            min_distance: 0.5,
            landing_radius: 0.5,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_peaks < 1 {
            return Err("max_peaks must be at least 1".into());
        }
        for (name, w) in [
            ("weight_roughness", self.weight_roughness),
            ("weight_distance", self.weight_distance),
            ("weight_uncertainty", self.weight_uncertainty),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.peak_factor > 0.0 && self.peak_factor <= 1.0) {
            return Err("peak_factor must be in (0, 1]".into());
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return Err("min_distance must be finite and >= 0".into());
        }
        if !(self.landing_radius > 0.0 && self.landing_radius.is_finite()) {
            return Err("landing_radius must be positive".into());
        }
        Ok(())
    }
}

/// Kernel features of one finest cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Meters.
    pub roughness: f64,
    /// `1 - D`, with `D` the clearance normalized to `[0, 1]`.
    pub inv_distance: f64,
    /// m².
    pub uncertainty: f64,
}

impl FeatureVector {
    /// `xᵀ Λ x` with `Λ` the diagonal of config weights.
    pub fn quadratic(&self, cfg: &DetectConfig) -> f64 {
        cfg.weight_roughness * self.roughness * self.roughness
            + cfg.weight_distance * self.inv_distance * self.inv_distance
            + cfg.weight_uncertainty * self.uncertainty * self.uncertainty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandingCandidate {
    /// `(row, col)` of the clearance maximum, finest layer.
    pub peak: (usize, usize),
    /// Continuous `(row, col)` after mean shift; cell centers sit at integers.
    pub shifted: (f64, f64),
    /// Meters.
    pub clearance: f64,
    /// OMG fit over the landing disk around `shifted`; `None` until ranked or
    /// when the disk holds no observed cell.
    pub area_fit: Option<CellState<f64>>,
    /// Mean shift found an empty window.
    pub degenerate: bool,
}

impl LandingCandidate {
    fn at_peak(peak: (usize, usize), clearance: f64) -> Self {
        Self {
            peak,
            shifted: (peak.0 as f64, peak.1 as f64),
            clearance,
            area_fit: None,
            degenerate: false,
        }
    }

    /// Finest cell containing the shifted location.
    pub fn shifted_cell(&self) -> (usize, usize) {
        (self.shifted.0.round() as usize, self.shifted.1.round() as usize)
    }
}

/// Clearance in meters from each cell to the nearest unsafe cell or the map
/// edge, 3-4 chamfer metric divided by 3. Unsafe cells are 0.
pub fn distance_transform(safe: &Raster<bool>, resolution: f64) -> Raster<f32> {
    let (w, h) = (safe.width, safe.height);
    // Cells outside the raster are hazards at chamfer distance 0.
    let mut d: Vec<u32> = safe.data.iter().map(|&s| if s { u32::MAX } else { 0 }).collect();
    let at = |d: &[u32], r: isize, c: isize| -> u32 {
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            0
        } else {
            d[r as usize * w + c as usize]
        }
    };
    const FORWARD: [(isize, isize, u32); 4] = [(0, -1, 3), (-1, -1, 4), (-1, 0, 3), (-1, 1, 4)];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            if d[i] == 0 {
                continue;
            }
            let mut best = d[i];
            for &(dy, dx, cost) in &FORWARD {
                best = best.min(at(&d, r + dy, c + dx).saturating_add(cost));
            }
            d[i] = best;
        }
    }
    for r in (0..h as isize).rev() {
        for c in (0..w as isize).rev() {
            let i = r as usize * w + c as usize;
            if d[i] == 0 {
                continue;
            }
            let mut best = d[i];
            for &(dy, dx, cost) in &FORWARD {
                best = best.min(at(&d, r - dy, c - dx).saturating_add(cost));
            }
            d[i] = best;
        }
    }
    Raster {
        width: w,
        height: h,
        data: d.into_iter().map(|v| (v as f64 / 3.0 * resolution) as f32).collect(),
    }
}

/// Half width in cells of the square NMS window.
pub fn nms_half_window(landing_radius: f64, resolution: f64) -> usize {
    (landing_radius / resolution - 1e-9).ceil().max(0.0) as usize
}

/// Clearance peaks, strongest first.
///
/// A peak is the first cell (row-major) of a plateau of equal values with no
/// larger 8-neighbor and no larger value inside its NMS window. Peaks inside
/// the window of a stronger accepted peak are suppressed.
pub fn detect_peaks(distance: &Raster<f32>, resolution: f64, cfg: &DetectConfig) -> Vec<LandingCandidate> {
    let (w, h) = (distance.width, distance.height);
    let global = distance.data.iter().copied().filter(|v| v.is_finite()).fold(0.0f32, f32::max);
    if global <= 0.0 {
        return Vec::new();
    }
    let floor = (cfg.peak_factor * global as f64) as f32;
    let half = nms_half_window(cfg.landing_radius, resolution) as isize;
    let value = |r: isize, c: isize| distance.get_signed(r, c).copied();

    let mut seen = vec![false; w * h];
    let mut plateaus: Vec<((usize, usize), f32)> = Vec::new();
    let mut stack = Vec::new();
    for r0 in 0..h {
        for c0 in 0..w {
            let v = *distance.get(r0, c0);
            if seen[r0 * w + c0] || !(v > 0.0) {
                continue;
            }
            // Flood the plateau; it is a regional maximum if nothing around it is larger.
            let mut regional = true;
            seen[r0 * w + c0] = true;
            stack.push((r0, c0));
            while let Some((r, c)) = stack.pop() {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (rr, cc) = (r as isize + dy, c as isize + dx);
                        let Some(n) = value(rr, cc) else { continue };
                        if n > v {
                            regional = false;
                        } else if n == v && !seen[rr as usize * w + cc as usize] {
                            seen[rr as usize * w + cc as usize] = true;
                            stack.push((rr as usize, cc as usize));
                        }
                    }
                }
            }
            if regional && v >= floor {
                plateaus.push(((r0, c0), v));
            }
        }
    }
    // Stable sort keeps row-major order among equal values.
    plateaus.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut out: Vec<LandingCandidate> = Vec::new();
    for ((r, c), v) in plateaus {
        if out.len() >= cfg.max_peaks {
            break;
        }
        let (ri, ci) = (r as isize, c as isize);
        let near_accepted = out
            .iter()
            .any(|p| (p.peak.0 as isize - ri).abs() <= half && (p.peak.1 as isize - ci).abs() <= half);
        if near_accepted {
            continue;
        }
        let dominated = (-half..=half)
            .any(|dy| (-half..=half).any(|dx| value(ri + dy, ci + dx).is_some_and(|n| n > v)));
        if dominated {
            continue;
        }
        out.push(LandingCandidate::at_peak((r, c), v as f64));
    }
    out
}

/// Per-cell features for mean shift. Cells with undefined roughness or
/// uncertainty are `None`.
#[derive(Debug, Clone)]
pub struct FeatureField {
    pub features: Raster<Option<FeatureVector>>,
}

impl FeatureField {
    /// `None` when the clearance raster is all zero.
    ///
    /// Roughness is the finest-layer value at every cell: cells the cascade
    /// skipped are evaluated here instead of using their inherited coarse
    /// value.
    pub fn new(maps: &SafetyMaps, distance: &Raster<f32>) -> Option<Self> {
        let dmax = distance.data.iter().copied().filter(|v| v.is_finite()).fold(0.0f32, f32::max) as f64;
        if dmax <= 0.0 {
            return None;
        }
        let mut rough = maps.roughness[0].clone();
        let skipped: Vec<bool> = maps.finest_evaluated.data.iter().map(|&e| !e).collect();
        if skipped.iter().any(|&s| s) && maps.heights.data.len() == rough.data.len() {
            let disk = Disk::from_meters(maps.search_radius, maps.resolution);
            let filled = extrema_rolling(&maps.heights, &disk, Some(&skipped)).roughness();
            for (i, &s) in skipped.iter().enumerate() {
                if s {
                    rough.data[i] = filled.data[i];
                }
            }
        }
        let features = Raster::from_fn(distance.width, distance.height, |r, c| {
            let rv = *rough.get(r, c) as f64;
            let sv = *maps.uncertainty.get(r, c) as f64;
            if !rv.is_finite() || !sv.is_finite() {
                return None;
            }
            let d = (*distance.get(r, c) as f64 / dmax).clamp(0.0, 1.0);
            Some(FeatureVector {
                roughness: rv,
                inv_distance: 1.0 - d,
                uncertainty: sv,
            })
        });
        Some(Self { features })
    }
}

/// One mean-shift iteration from `u`. `None` when the window is empty.
pub fn mean_shift_step(u: (f64, f64), field: &FeatureField, radius_cells: f64, cfg: &DetectConfig) -> Option<(f64, f64)> {
    let f = &field.features;
    let r2 = radius_cells * radius_cells;
    let r_lo = (u.0 - radius_cells).ceil().max(0.0) as usize;
    let c_lo = (u.1 - radius_cells).ceil().max(0.0) as usize;
    let r_hi = ((u.0 + radius_cells).floor().max(-1.0) as isize).min(f.height as isize - 1);
    let c_hi = ((u.1 + radius_cells).floor().max(-1.0) as isize).min(f.width as isize - 1);

    let mut window: Vec<(f64, f64, f64)> = Vec::new();
    for r in r_lo as isize..=r_hi {
        for c in c_lo as isize..=c_hi {
            let (py, px) = (r as f64, c as f64);
            let (dy, dx) = (py - u.0, px - u.1);
            if dy * dy + dx * dx > r2 {
                continue;
            }
            if let Some(fv) = f.get(r as usize, c as usize) {
                window.push((py, px, fv.quadratic(cfg)));
            }
        }
    }
    let q_min = window.iter().map(|w| w.2).fold(f64::INFINITY, f64::min);
    if !q_min.is_finite() {
        return None;
    }
    // Shifting the exponent by q_min leaves the ratio unchanged.
    let (mut sw, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for &(py, px, q) in &window {
        let k = (-(q - q_min)).exp();
        sw += k;
        sy += k * py;
        sx += k * px;
    }
    let max_r = (f.height.max(1) - 1) as f64;
    let max_c = (f.width.max(1) - 1) as f64;
    Some(((sy / sw).clamp(0.0, max_r), (sx / sw).clamp(0.0, max_c)))
}

/// Runs `shift_iterations` mean-shift steps from the candidate's peak.
pub fn mean_shift(start: &LandingCandidate, field: &FeatureField, resolution: f64, cfg: &DetectConfig) -> LandingCandidate {
    let radius = cfg.landing_radius / resolution;
    let mut u = (start.peak.0 as f64, start.peak.1 as f64);
    let mut out = start.clone();
    for _ in 0..cfg.shift_iterations {
        match mean_shift_step(u, field, radius, cfg) {
            Some(next) => u = next,
            None => {
                out.shifted = (start.peak.0 as f64, start.peak.1 as f64);
                out.degenerate = true;
                return out;
            }
        }
    }
    out.shifted = u;
    out
}

/// OMG fit of the finest pooled states within `radius_cells` of `center`.
pub fn area_fit<T: Scalar>(map: &PyramidMap<T>, center: (f64, f64), radius_cells: f64) -> Option<CellState<T>> {
    let side = map.side(0) as isize;
    let r2 = radius_cells * radius_cells;
    let reach = radius_cells.ceil() as isize + 1;
    let (cr, cc) = (center.0.round() as isize, center.1.round() as isize);
    let mut acc = CellState::<T>::empty();
    for r in (cr - reach).max(0)..=(cr + reach).min(side - 1) {
        for c in (cc - reach).max(0)..=(cc + reach).min(side - 1) {
            let (dy, dx) = (r as f64 - center.0, c as f64 - center.1);
            if dy * dy + dx * dx <= r2 {
                acc = fuse_states(&acc, map.cell(0, r as usize, c as usize));
            }
        }
    }
    (!acc.is_empty()).then_some(acc)
}

/// Fills `area_fit` for each candidate and returns the index of the one with
/// the smallest area variance among those with enough clearance, or `None`
/// for a rejection.
pub fn select_site<T: Scalar>(
    candidates: &mut [LandingCandidate],
    map: &PyramidMap<T>,
    cfg: &DetectConfig,
) -> Option<usize> {
    let radius = cfg.landing_radius / map.config().resolution(0);
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter_mut().enumerate() {
        if cand.degenerate {
            continue;
        }
        cand.area_fit = area_fit(map, cand.shifted, radius).map(|s| s.to_f64());
        let Some(fit) = &cand.area_fit else { continue };
        if cand.clearance < cfg.min_distance || !fit.variance.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, v)| fit.variance < v) {
            best = Some((i, fit.variance));
        }
    }
    best.map(|(i, _)| i)
}

/// Outcome of the detection stage for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub candidates: Vec<LandingCandidate>,
    pub selected: Option<usize>,
}

impl Detection {
    pub fn selected_candidate(&self) -> Option<&LandingCandidate> {
        self.selected.map(|i| &self.candidates[i])
    }
}

/// Distance transform, peaks, mean shift and ranking on one segmented frame.
pub fn detect<T: Scalar>(maps: &SafetyMaps, pooled: &PyramidMap<T>, cfg: &DetectConfig) -> Detection {
    let distance = distance_transform(&maps.landing_mask, maps.resolution);
    let Some(field) = FeatureField::new(maps, &distance) else {
        return Detection {
            candidates: Vec::new(),
            selected: None,
        };
    };
    let mut candidates: Vec<LandingCandidate> = detect_peaks(&distance, maps.resolution, cfg)
        .iter()
        .map(|p| mean_shift(p, &field, maps.resolution, cfg))
        .collect();
    let selected = select_site(&mut candidates, pooled, cfg);
    Detection { candidates, selected }
}

/// Baseline selector: the clearance maximum, first in row-major order.
pub fn dt_max(distance: &Raster<f32>) -> Option<(usize, usize)> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in distance.data.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| (i / distance.width, i % distance.width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_maps(side: usize) -> SafetyMaps {
        SafetyMaps {
            landing_mask: Raster::filled(side, side, true),
            observed: Raster::filled(side, side, true),
            roughness: vec![Raster::filled(side, side, 0.0)],
            slope: Raster::filled(1, 1, 0.0),
            uncertainty: Raster::filled(side, side, 0.0),
            heights: Raster::filled(side, side, 0.0),
            finest_evaluated: Raster::filled(side, side, true),
            search_radius: 0.5,
            resolution: 0.05,
            origin: (0.0, 0.0),
            reads: 0,
        }
    }

    #[test]
    fn all_unsafe_is_zero() {
        let d = distance_transform(&Raster::filled(7, 5, false), 0.05);
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chamfer_weights_around_single_hazard() {
        let mut m = Raster::filled(41, 41, true);
        m.set(20, 20, false);
        let d = distance_transform(&m, 0.1);
        assert!((*d.get(20, 21) as f64 - 0.1).abs() < 1e-7);
        assert!((*d.get(19, 20) as f64 - 0.1).abs() < 1e-7);
        assert!((*d.get(21, 21) as f64 - 0.4 / 3.0).abs() < 1e-7);
        // Border cells are one step from the outside.
        assert!((*d.get(0, 5) as f64 - 0.1).abs() < 1e-7);
    }

    #[test]
    fn single_plateau_one_peak() {
        let mut d = Raster::filled(20, 20, 0.0f32);
        for r in 5..8 {
            for c in 5..9 {
                d.set(r, c, 3.0);
            }
        }
        let p = detect_peaks(&d, 0.05, &DetectConfig::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].peak, (5, 5));
    }

    #[test]
    fn mean_shift_uniform_is_fixed_point() {
        let maps = blank_maps(40);
        let dist = Raster::filled(40, 40, 1.0f32);
        let field = FeatureField::new(&maps, &dist).unwrap();
        let u = mean_shift_step((20.0, 20.0), &field, 10.0, &DetectConfig::default()).unwrap();
        assert!((u.0 - 20.0).abs() < 1e-9 && (u.1 - 20.0).abs() < 1e-9);
    }

    #[test]
    fn empty_window_is_degenerate() {
        let mut maps = blank_maps(30);
        maps.roughness[0] = Raster::filled(30, 30, f32::NAN);
        let dist = Raster::filled(30, 30, 1.0f32);
        let field = FeatureField::new(&maps, &dist).unwrap();
        let start = LandingCandidate::at_peak((10, 12), 1.0);
        let out = mean_shift(&start, &field, 0.05, &DetectConfig::default());
        assert!(out.degenerate);
        assert_eq!(out.shifted, (10.0, 12.0));
    }
}
