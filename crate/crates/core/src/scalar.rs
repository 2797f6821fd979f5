//! Scalar abstraction for the fusion algebra.
//!
//! Every fusion operation only needs field arithmetic and ordering, so the
//! state types are generic over [`Scalar`]. `f64` is the production type;
//! [`Exact`] (arbitrary precision rationals) lets tests evaluate the same code
//! with zero rounding error.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Exact rational scalar.
pub type Exact = BigRational;

pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `false` for NaN and infinities. Always `true` for exact types.
    fn is_finite_value(&self) -> bool;

    fn from_count(n: u32) -> Self;

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }

    #[inline]
    fn from_count(n: u32) -> Self {
        f64::from(n)
    }
}

impl Scalar for f32 {
    #[inline]
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }

    #[inline]
    fn from_count(n: u32) -> Self {
        n as f32
    }
}

impl Scalar for BigRational {
    fn is_finite_value(&self) -> bool {
        true
    }

    fn from_count(n: u32) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

/// Converts an `f64` into an exact rational without rounding.
///
/// Panics on non-finite input.
pub fn exact(v: f64) -> Exact {
    BigRational::from_float(v).expect("finite value")
}
