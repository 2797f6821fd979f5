//! Deterministic synthetic terrain, flights and stereo point clouds.
//!
//! Terrain is an analytic height function: a base level, a sum of seeded
//! sinusoids, optional linear ramps and rocks modeled as spherical caps.
//! Point clouds are cast from a nadir pinhole camera and perturbed along the
//! ray with the stereo depth noise `sigma_z = z^2 * sigma_d / (f * b)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::pyramid::{measurement_variance, CameraModel, Measurement};
use crate::raster::{Raster, RasterMeta};

/// Spherical cap: footprint radius `radius`, apex `height` above the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rock {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

impl Rock {
    /// Cap height above the ground at `(x, y)`, 0 outside the footprint.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.x).powi(2) + (y - self.y).powi(2);
        if d2 >= self.radius * self.radius {
            return 0.0;
        }
        let sphere = (self.radius * self.radius + self.height * self.height) / (2.0 * self.height);
        ((sphere * sphere - d2).sqrt() - (sphere - self.height)).max(0.0)
    }
}

/// Plane `gradient . (p - origin)` added inside an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub min: (f64, f64),
    pub max: (f64, f64),
    /// Height change per meter along x and y.
    pub gradient: (f64, f64),
}

/// Random rock placement inside an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RockField {
    pub min: (f64, f64),
    pub max: (f64, f64),
    /// Rocks per m².
    pub density: f64,
    /// Footprint radius range, meters.
    pub radius: (f64, f64),
    /// Apex height range, meters; clipped to the footprint radius.
    pub height: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSpec {
    pub seed: u64,
    /// Terrain covers `[min.0, max.0] x [min.1, max.1]`, meters.
    pub min: (f64, f64),
    pub max: (f64, f64),
    pub base_height: f64,
    pub undulation_amplitude: f64,
    pub undulation_wavelength: f64,
    pub rocks: Vec<Rock>,
    pub rock_field: Option<RockField>,
    pub ramps: Vec<Ramp>,
}

impl Default for TerrainSpec {
    /// Gently undulating 80 x 24 m strip covered by a rock field.
    fn default() -> Self {
        Self {
            seed: 1,
            min: (-40.0, -12.0),
            max: (40.0, 12.0),
            base_height: 0.0,
            undulation_amplitude: 0.05,
            undulation_wavelength: 8.0,
            rocks: Vec::new(),
            rock_field: Some(RockField {
                min: (-36.0, -10.0),
                max: (36.0, 10.0),
                density: 0.3,
                radius: (0.1, 0.3),
                height: (0.1, 0.3),
            }),
            ramps: Vec::new(),
        }
    }
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min.0 < self.max.0 && self.min.1 < self.max.1) {
            return Err("terrain extent is empty".into());
        }
        let finite = [self.base_height, self.undulation_amplitude, self.undulation_wavelength];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("terrain parameters must be finite".into());
        }
        if self.undulation_amplitude != 0.0 && self.undulation_wavelength <= 0.0 {
            return Err("undulation wavelength must be positive".into());
        }
        for r in &self.rocks {
            if !(r.radius > 0.0 && r.height > 0.0 && r.height.is_finite() && r.radius.is_finite()) {
                return Err("rock radius and height must be positive".into());
            }
            if !(self.min.0..=self.max.0).contains(&r.x) || !(self.min.1..=self.max.1).contains(&r.y) {
                return Err("rock outside terrain extent".into());
            }
        }
        if let Some(f) = &self.rock_field {
            if !(f.density >= 0.0 && f.radius.0 > 0.0 && f.radius.0 <= f.radius.1 && f.height.0 > 0.0 && f.height.0 <= f.height.1) {
                return Err("invalid rock field".into());
            }
            if f.min.0 < self.min.0 || f.min.1 < self.min.1 || f.max.0 > self.max.0 || f.max.1 > self.max.1 {
                return Err("rock field outside terrain extent".into());
            }
        }
        Ok(())
    }
}

const BUCKET: f64 = 1.0;

/// Evaluated terrain: analytic heights plus a bucketed rock index.
#[derive(Debug, Clone)]
pub struct Terrain {
    pub spec: TerrainSpec,
    pub rocks: Vec<Rock>,
    waves: Vec<(f64, f64, f64)>,
    grid_w: usize,
    grid_h: usize,
    buckets: Vec<Vec<u32>>,
}

/// Builds the terrain for a spec; identical specs give identical terrains.
pub fn generate_terrain(spec: &TerrainSpec) -> Terrain {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut waves = Vec::new();
    if spec.undulation_amplitude != 0.0 {
        // Three plane waves of equal weight whose sum peaks near the amplitude.
        for _ in 0..3 {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            waves.push((theta, phase, spec.undulation_amplitude / 3.0));
        }
    }
    let mut rocks = spec.rocks.clone();
    if let Some(f) = &spec.rock_field {
        let area = (f.max.0 - f.min.0) * (f.max.1 - f.min.1);
        let n = (area * f.density).round() as usize;
        for _ in 0..n {
            let radius = rng.gen_range(f.radius.0..=f.radius.1);
            let height = rng.gen_range(f.height.0..=f.height.1).min(radius);
            rocks.push(Rock {
                x: rng.gen_range(f.min.0..=f.max.0),
                y: rng.gen_range(f.min.1..=f.max.1),
                radius,
                height,
            });
        }
    }
    let grid_w = ((spec.max.0 - spec.min.0) / BUCKET).ceil() as usize + 1;
    let grid_h = ((spec.max.1 - spec.min.1) / BUCKET).ceil() as usize + 1;
    let mut buckets = vec![Vec::new(); grid_w * grid_h];
    for (i, r) in rocks.iter().enumerate() {
        let bx0 = ((r.x - r.radius - spec.min.0) / BUCKET).floor().max(0.0) as usize;
        let bx1 = (((r.x + r.radius - spec.min.0) / BUCKET).floor().max(0.0) as usize).min(grid_w - 1);
        let by0 = ((r.y - r.radius - spec.min.1) / BUCKET).floor().max(0.0) as usize;
        let by1 = (((r.y + r.radius - spec.min.1) / BUCKET).floor().max(0.0) as usize).min(grid_h - 1);
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                buckets[by * grid_w + bx].push(i as u32);
            }
        }
    }
    Terrain {
        spec: spec.clone(),
        rocks,
        waves,
        grid_w,
        grid_h,
        buckets,
    }
}

impl Terrain {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.spec.min.0..=self.spec.max.0).contains(&x) && (self.spec.min.1..=self.spec.max.1).contains(&y)
    }

    /// Height without rocks.
    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        let mut h = self.spec.base_height;
        let k = std::f64::consts::TAU / self.spec.undulation_wavelength.max(f64::MIN_POSITIVE);
        for &(theta, phase, amp) in &self.waves {
            h += amp * (k * (x * theta.cos() + y * theta.sin()) + phase).sin();
        }
        for ramp in &self.spec.ramps {
            if x >= ramp.min.0 && x <= ramp.max.0 && y >= ramp.min.1 && y <= ramp.max.1 {
                h += ramp.gradient.0 * (x - ramp.min.0) + ramp.gradient.1 * (y - ramp.min.1);
            }
        }
        h
    }

    /// Tallest rock cap above the ground at `(x, y)`.
    pub fn rock_height(&self, x: f64, y: f64) -> f64 {
        if !self.contains(x, y) {
            return 0.0;
        }
        let bx = (((x - self.spec.min.0) / BUCKET) as usize).min(self.grid_w - 1);
        let by = (((y - self.spec.min.1) / BUCKET) as usize).min(self.grid_h - 1);
        self.buckets[by * self.grid_w + bx]
            .iter()
            .map(|&i| self.rocks[i as usize].height_at(x, y))
            .fold(0.0, f64::max)
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.ground_height(x, y) + self.rock_height(x, y)
    }

    pub fn is_rock(&self, x: f64, y: f64) -> bool {
        self.rock_height(x, y) > 0.0
    }

    /// Whether some rock footprint, grown by `margin`, contains `(x, y)`.
    pub fn rock_within(&self, x: f64, y: f64, margin: f64) -> bool {
        self.rocks
            .iter()
            .any(|r| (x - r.x).powi(2) + (y - r.y).powi(2) < (r.radius + margin).powi(2))
    }

    /// Heights sampled at cell centers of a grid with lower-left corner `origin`.
    pub fn dem(&self, origin: (f64, f64), resolution: f64, width: usize, height: usize) -> Raster<f32> {
        Raster::from_fn(width, height, |r, c| {
            let (x, y) = cell_center(origin, resolution, r, c);
            if self.contains(x, y) {
                self.height(x, y) as f32
            } else {
                f32::NAN
            }
        })
    }

    /// Cells whose center lies on a rock footprint.
    pub fn rock_mask(&self, origin: (f64, f64), resolution: f64, width: usize, height: usize) -> Raster<bool> {
        Raster::from_fn(width, height, |r, c| {
            let (x, y) = cell_center(origin, resolution, r, c);
            self.is_rock(x, y)
        })
    }

    pub fn raster_meta(origin: (f64, f64), resolution: f64, channel: &str) -> RasterMeta {
        RasterMeta {
            resolution,
            origin_x: origin.0,
            origin_y: origin.1,
            layer: 0,
            channel: channel.to_string(),
        }
    }
}

fn cell_center(origin: (f64, f64), resolution: f64, r: usize, c: usize) -> (f64, f64) {
    (origin.0 + (c as f64 + 0.5) * resolution, origin.1 + (r as f64 + 0.5) * resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Gaussian,
    /// Uniform with the same standard deviation.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    /// `(x, y, altitude above ground)` waypoints, linearly interpolated.
    pub waypoints: Vec<(f64, f64, f64)>,
    pub frame_count: usize,
    pub camera: CameraModel,
    pub image_cols: usize,
    pub image_rows: usize,
    /// Every `pixel_stride`-th pixel is cast.
    pub pixel_stride: usize,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    /// 60 frames over 60 m along x, descending from 20 m to 10 m.
    fn default() -> Self {
        Self {
            waypoints: vec![(-30.0, 0.0, 20.0), (30.0, 0.0, 10.0)],
            frame_count: 60,
            camera: CameraModel::default(),
            image_cols: 640,
            image_rows: 480,
            pixel_stride: 2,
            noise: NoiseModel::Gaussian,
            seed: 1,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.waypoints.is_empty() {
            return Err("trajectory needs at least one waypoint".into());
        }
        if self.waypoints.iter().any(|w| !(w.2 > 0.0) || !w.0.is_finite() || !w.1.is_finite() || !w.2.is_finite()) {
            return Err("waypoint altitude must be positive and finite".into());
        }
        if self.frame_count == 0 || self.image_cols == 0 || self.image_rows == 0 || self.pixel_stride == 0 {
            return Err("frame count, image size and pixel stride must be positive".into());
        }
        self.camera.validate().map_err(|e| e.to_string())
    }

    /// `(x, y, altitude above ground)` of frame `i`.
    pub fn pose(&self, i: usize) -> (f64, f64, f64) {
        let w = &self.waypoints;
        if w.len() == 1 || self.frame_count == 1 {
            return w[0];
        }
        let t = i as f64 / (self.frame_count - 1) as f64 * (w.len() - 1) as f64;
        let seg = (t.floor() as usize).min(w.len() - 2);
        let f = t - seg as f64;
        let (a, b) = (w[seg], w[seg + 1]);
        (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2))
    }
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    /// Camera position, world meters.
    pub pose: (f64, f64, f64),
    /// Camera of the image the points were sampled from; its focal length
    /// sets the footprint used for layer routing.
    pub camera: CameraModel,
    pub measurements: Vec<Measurement>,
}

/// Ray parameter where a ray from `origin` along `(dx, dy, -1)` meets the
/// terrain, by fixed-point iteration on the height. `None` if the ray leaves
/// the terrain or does not settle.
fn intersect(terrain: &Terrain, origin: (f64, f64, f64), dir: (f64, f64)) -> Option<f64> {
    let mut t = origin.2 - terrain.height(origin.0, origin.1);
    for _ in 0..50 {
        let (x, y) = (origin.0 + t * dir.0, origin.1 + t * dir.1);
        if !terrain.contains(x, y) {
            return None;
        }
        let next = origin.2 - terrain.height(x, y);
        if (next - t).abs() < 1e-10 {
            return (next > 0.0).then_some(next);
        }
        t = next;
    }
    None
}

/// Casts the sampled pixel grid of frame `index` and returns noisy
/// world-frame measurements. Output depends only on the inputs.
///
/// Depth noise follows the full-resolution camera. The returned frame's
/// focal length is divided by the pixel stride, so each point's routing
/// footprint equals the ground spacing of the samples.
pub fn render_pointcloud(terrain: &Terrain, traj: &TrajectorySpec, index: usize) -> Frame {
    let (px, py, agl) = traj.pose(index);
    let pose = (px, py, terrain.ground_height(px, py) + agl);
    let cam = traj.camera;
    let seed = traj.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (cx, cy) = ((traj.image_cols as f64 - 1.0) / 2.0, (traj.image_rows as f64 - 1.0) / 2.0);

    let mut measurements = Vec::new();
    for v in (0..traj.image_rows).step_by(traj.pixel_stride) {
        for u in (0..traj.image_cols).step_by(traj.pixel_stride) {
            // Image x maps to world x, image rows to world y.
            let dir = ((u as f64 - cx) / cam.focal_length, (v as f64 - cy) / cam.focal_length);
            let unit: f64 = match traj.noise {
                NoiseModel::Gaussian => normal.sample(&mut rng),
                NoiseModel::Uniform => rng.gen_range(-1.0..1.0) * 3f64.sqrt(),
            };
            let Some(z) = intersect(terrain, pose, dir) else { continue };
            let sigma_z = z * z * cam.disparity_noise / (cam.focal_length * cam.baseline);
            let zm = z + sigma_z * unit;
            if !(zm > 0.0) {
                continue;
            }
            measurements.push(Measurement {
                world_x: pose.0 + zm * dir.0,
                world_y: pose.1 + zm * dir.1,
                height: pose.2 - zm,
                depth: zm,
                variance: measurement_variance(zm, &cam),
            });
        }
    }
    Frame {
        id: index as u64,
        pose,
        camera: CameraModel {
            focal_length: cam.focal_length / traj.pixel_stride as f64,
            ..cam
        },
        measurements,
    }
}

/// All frames of a flight.
pub fn render_flight(terrain: &Terrain, traj: &TrajectorySpec) -> Vec<Frame> {
    (0..traj.frame_count).map(|i| render_pointcloud(terrain, traj, i)).collect()
}
