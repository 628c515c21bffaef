use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar the numeric core is generic over (`f32` or `f64`).
///
/// The bounds collect everything the fitting, feature, and diagnostics code
/// needs: IEEE float math, primitive conversions, compound assignment,
/// text round-tripping for the delimited exports, and serde for the model
/// document.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Debug
    + Display
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant; panics only for non-finite inputs that a
    /// float type cannot represent, which never happens for the literals we
    /// feed it.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sum of a slice in index order. Kept explicit so results are identical
/// across runs and thread counts.
pub fn sum<F: Scalar>(values: &[F]) -> F {
    values.iter().fold(F::zero(), |acc, &v| acc + v)
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean<F: Scalar>(values: &[F]) -> F {
    if values.is_empty() {
        F::zero()
    } else {
        sum(values) / F::from_usize(values.len()).unwrap()
    }
}

/// Population variance (divide by `n`).
pub fn population_variance<F: Scalar>(values: &[F]) -> F {
    let m = mean(values);
    let ss = values
        .iter()
        .fold(F::zero(), |acc, &v| acc + (v - m) * (v - m));
    ss / F::from_usize(values.len()).unwrap()
}

/// Population standard deviation (divide by `n`).
pub fn population_std<F: Scalar>(values: &[F]) -> F {
    population_variance(values).sqrt()
}

/// Sample variance (divide by `n - 1`); zero for fewer than two values.
pub fn sample_variance<F: Scalar>(values: &[F]) -> F {
    if values.len() < 2 {
        return F::zero();
    }
    let m = mean(values);
    let ss = values
        .iter()
        .fold(F::zero(), |acc, &v| acc + (v - m) * (v - m));
    ss / F::from_usize(values.len() - 1).unwrap()
}

/// Sample standard deviation (divide by `n - 1`).
pub fn sample_std<F: Scalar>(values: &[F]) -> F {
    sample_variance(values).sqrt()
}
