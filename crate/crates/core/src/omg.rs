//! Optimal Mixture of Gaussians (OMG) height fusion.
//!
//! A cell stores `{mean, variance, precision_sum, count}`. The mixture mean is
//! the precision-weighted mean of the measurements (identical to a Kalman
//! filter); the mixture variance additionally keeps the precision-weighted
//! spread of the measurements, so disagreement inside a cell shows up as
//! uncertainty.
//!
//! Batch form, with `s_i = 1 / var_i` and `S = sum s_i`:
//!
//! ```text
//! mean     = (1/S) sum s_i x_i
//! variance = (1/S) sum s_i (var_i + x_i^2) - mean^2
//! ```
//!
//! The cumulative update folds one measurement into a stored state. Written
//! out literally it reads
//!
//! ```text
//! var_t = (1/S_t) (S_{t-1} (var_{t-1} + mean_{t-1}^2) + x_t^2 / var_x + 1) - mean_t^2
//! ```
//!
//! where the `+ 1` is the `s_t * var_x` term of the batch sum. [`omg_update`]
//! evaluates the algebraically identical deviation form
//!
//! ```text
//! var_t = (S_{t-1} var_{t-1} + 1) / S_t + S_{t-1} s_t (x_t - mean_{t-1})^2 / S_t^2
//! ```
//!
//! which avoids subtracting two large second moments. Both readings agree
//! exactly in rational arithmetic (see the tests).

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OmgError {
    #[error("no measurements to fuse")]
    EmptyInput,
    #[error("measurement variance must be strictly positive")]
    NonPositiveVariance,
    #[error("measurement value or variance is not finite")]
    NonFinite,
    #[error("inflation factor must be >= 1")]
    InflationBelowOne,
    #[error("cannot inflate an empty state")]
    EmptyState,
}

/// One scalar height observation with its variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasurement<T> {
    pub value: T,
    pub variance: T,
}

impl<T: Scalar> GaussianMeasurement<T> {
    pub fn new(value: T, variance: T) -> Self {
        Self { value, variance }
    }

    pub fn validate(&self) -> Result<(), OmgError> {
        if !self.value.is_finite_value() || !self.variance.is_finite_value() {
            return Err(OmgError::NonFinite);
        }
        if self.variance <= T::zero() {
            return Err(OmgError::NonPositiveVariance);
        }
        Ok(())
    }

    fn precision(&self) -> T {
        T::one() / self.variance.clone()
    }
}

/// Fused state of one map cell.
///
/// The empty state (`count == 0`, `precision_sum == 0`) is the identity of
/// every fusion operation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub mean: T,
    pub variance: T,
    pub precision_sum: T,
    pub count: u32,
}

impl<T: Scalar> Default for CellState<T> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<T: Scalar> CellState<T> {
    pub fn empty() -> Self {
        Self {
            mean: T::zero(),
            variance: T::zero(),
            precision_sum: T::zero(),
            count: 0,
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Kalman-equivalent variance `1 / S`. `None` for the empty state.
    pub fn kalman_variance(&self) -> Option<T> {
        if self.is_empty() {
            None
        } else {
            Some(T::one() / self.precision_sum.clone())
        }
    }

    /// Lossy conversion to `f64`, used when exporting exact states.
    pub fn to_f64(&self) -> CellState<f64> {
        CellState {
            mean: self.mean.to_f64().unwrap_or(f64::NAN),
            variance: self.variance.to_f64().unwrap_or(f64::NAN),
            precision_sum: self.precision_sum.to_f64().unwrap_or(f64::NAN),
            count: self.count,
        }
    }
}

/// Closed-form fusion of a whole measurement list.
///
/// Evaluated in two passes (mean first, then spread around the mean), which is
/// the same quantity as the raw second-moment formula without its
/// cancellation.
pub fn omg_batch<T: Scalar>(measurements: &[GaussianMeasurement<T>]) -> Result<CellState<T>, OmgError> {
    if measurements.is_empty() {
        return Err(OmgError::EmptyInput);
    }
    let mut s = T::zero();
    let mut weighted = T::zero();
    for m in measurements {
        m.validate()?;
        let p = m.precision();
        weighted = weighted + p.clone() * m.value.clone();
        s = s + p;
    }
    let mean = weighted / s.clone();
    let mut spread = T::zero();
    for m in measurements {
        let d = m.value.clone() - mean.clone();
        spread = spread + m.precision() * d.clone() * d;
    }
    let count = u32::try_from(measurements.len()).unwrap_or(u32::MAX);
    let variance = if measurements.len() == 1 {
        measurements[0].variance.clone()
    } else {
        (T::from_count(count) + spread) / s.clone()
    };
    Ok(CellState {
        mean,
        variance,
        precision_sum: s,
        count,
    })
}

/// Cumulative update of `prior` with one measurement.
pub fn omg_update<T: Scalar>(prior: &CellState<T>, m: &GaussianMeasurement<T>) -> Result<CellState<T>, OmgError> {
    m.validate()?;
    if prior.is_empty() {
        return Ok(first_state(m));
    }
    let p = m.precision();
    let s_prev = prior.precision_sum.clone();
    let s = s_prev.clone() + p.clone();
    let mean = (s_prev.clone() * prior.mean.clone() + p.clone() * m.value.clone()) / s.clone();
    let d = m.value.clone() - prior.mean.clone();
    let variance = (s_prev.clone() * prior.variance.clone() + T::one()) / s.clone()
        + s_prev * p * d.clone() * d / (s.clone() * s.clone());
    Ok(CellState {
        mean,
        variance,
        precision_sum: s,
        count: prior.count.saturating_add(1),
    })
}

/// Same contract as [`omg_update`], but every term is first divided by the
/// largest magnitude involved and the result scaled back, so heights near the
/// top of the floating point range do not overflow through `x^2` or `S * mean`.
pub fn omg_update_overflow_safe<T: Scalar>(
    prior: &CellState<T>,
    m: &GaussianMeasurement<T>,
) -> Result<CellState<T>, OmgError> {
    m.validate()?;
    if prior.is_empty() {
        return Ok(first_state(m));
    }
    let scale = T::max_of(T::max_of(m.value.abs(), prior.mean.abs()), T::one());
    let x = m.value.clone() / scale.clone();
    let mu = prior.mean.clone() / scale.clone();
    let p = m.precision();
    let s_prev = prior.precision_sum.clone();
    let s = s_prev.clone() + p.clone();
    let w_prev = s_prev.clone() / s.clone();
    let w_new = p.clone() / s.clone();
    let mean = (w_prev.clone() * mu.clone() + w_new.clone() * x.clone()) * scale.clone();
    let d = x - mu;
    let spread = w_prev * w_new * d.clone() * d * scale.clone() * scale;
    let variance = (s_prev * prior.variance.clone() + T::one()) / s.clone() + spread;
    Ok(CellState {
        mean,
        variance,
        precision_sum: s,
        count: prior.count.saturating_add(1),
    })
}

fn first_state<T: Scalar>(m: &GaussianMeasurement<T>) -> CellState<T> {
    CellState {
        mean: m.value.clone(),
        variance: m.variance.clone(),
        precision_sum: m.precision(),
        count: 1,
    }
}

/// Fuses two cell states as if their measurement sets had been fused together.
pub fn fuse_states<T: Scalar>(a: &CellState<T>, b: &CellState<T>) -> CellState<T> {
    if a.is_empty() {
        return b.clone();
    }
    if b.is_empty() {
        return a.clone();
    }
    let s = a.precision_sum.clone() + b.precision_sum.clone();
    let mean = (a.precision_sum.clone() * a.mean.clone() + b.precision_sum.clone() * b.mean.clone()) / s.clone();
    let d = a.mean.clone() - b.mean.clone();
    let variance = (a.precision_sum.clone() * a.variance.clone() + b.precision_sum.clone() * b.variance.clone())
        / s.clone()
        + a.precision_sum.clone() * b.precision_sum.clone() * d.clone() * d / (s.clone() * s.clone());
    CellState {
        mean,
        variance,
        precision_sum: s,
        count: a.count.saturating_add(b.count),
    }
}

/// In-place variant of [`fuse_states`] used by the grid passes.
#[inline]
pub fn fuse_into<T: Scalar>(target: &mut CellState<T>, source: &CellState<T>) {
    if source.is_empty() {
        return;
    }
    if target.is_empty() {
        *target = source.clone();
        return;
    }
    *target = fuse_states(target, source);
}

/// Time inflation: `variance += (count + 1)(k - 1)`, `precision_sum /= k`.
pub fn inflate<T: Scalar>(state: &CellState<T>, k: &T) -> Result<CellState<T>, OmgError> {
    if !k.is_finite_value() || *k < T::one() {
        return Err(OmgError::InflationBelowOne);
    }
    if state.is_empty() {
        return Err(OmgError::EmptyState);
    }
    let n1 = T::from_count(state.count.saturating_add(1));
    Ok(CellState {
        mean: state.mean.clone(),
        variance: state.variance.clone() + n1 * (k.clone() - T::one()),
        precision_sum: state.precision_sum.clone() / k.clone(),
        count: state.count,
    })
}

/// Flat per-cell Kalman baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T> {
    pub mean: T,
    pub variance: T,
}

impl<T: Scalar> KalmanState<T> {
    pub fn from_measurement(m: &GaussianMeasurement<T>) -> Result<Self, OmgError> {
        m.validate()?;
        Ok(Self {
            mean: m.value.clone(),
            variance: m.variance.clone(),
        })
    }
}

/// Product-of-Gaussians update.
pub fn kalman_update<T: Scalar>(prior: &KalmanState<T>, m: &GaussianMeasurement<T>) -> Result<KalmanState<T>, OmgError> {
    m.validate()?;
    if prior.variance <= T::zero() {
        return Err(OmgError::NonPositiveVariance);
    }
    let denom = prior.variance.clone() + m.variance.clone();
    Ok(KalmanState {
        mean: (prior.mean.clone() * m.variance.clone() + m.value.clone() * prior.variance.clone()) / denom.clone(),
        variance: prior.variance.clone() * m.variance.clone() / denom,
    })
}

/// Folds a whole sequence through [`kalman_update`].
pub fn kalman_fold<T: Scalar>(measurements: &[GaussianMeasurement<T>]) -> Result<KalmanState<T>, OmgError> {
    let (first, rest) = measurements.split_first().ok_or(OmgError::EmptyInput)?;
    let mut state = KalmanState::from_measurement(first)?;
    for m in rest {
        state = kalman_update(&state, m)?;
    }
    Ok(state)
}

/// Folds a whole sequence through [`omg_update`].
pub fn omg_fold<T: Scalar>(measurements: &[GaussianMeasurement<T>]) -> Result<CellState<T>, OmgError> {
    measurements
        .iter()
        .try_fold(CellState::empty(), |state, m| omg_update(&state, m))
}
