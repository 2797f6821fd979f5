//! Continuous multi-resolution elevation mapping and safe landing site
//! detection.
//!
//! Height measurements are fused per cell with an Optimal Mixture of
//! Gaussians ([`omg`]) into an N-layer pyramid ([`pyramid`]). The pooled
//! pyramid is segmented coarse-to-fine into a landing mask ([`hazard`]), and
//! landing sites are picked from distance-transform peaks refined by mean
//! shift ([`landing`]). [`synth`] and [`eval`] provide the synthetic flights
//! and the reproduction harnesses.

pub mod disk;
pub mod eval;
pub mod frame;
pub mod hazard;
pub mod landing;
pub mod omg;
pub mod pipeline;
pub mod pyramid;
pub mod raster;
pub mod scalar;
pub mod synth;

pub use omg::{CellState, GaussianMeasurement, KalmanState, OmgError};
pub use pyramid::{CameraModel, Measurement, PyramidConfig, PyramidMap};
pub use raster::Raster;
pub use scalar::{Exact, Scalar};

/// Production cell state.
pub type Cell = CellState<f64>;
/// Cell state with exact rational arithmetic, used as a reference.
pub type ExactCell = CellState<Exact>;
/// Production pyramid.
pub type Pyramid = PyramidMap<f64>;
/// Pyramid evaluated in exact rational arithmetic.
pub type ExactPyramid = PyramidMap<Exact>;
