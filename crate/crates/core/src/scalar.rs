//! Floating-point element type used by embeddings and the stores built on them.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Element type of an [`EmbeddingVector`](crate::embedding::EmbeddingVector).
///
/// Reductions (dot products, norms) widen every element to `f64` before
/// accumulating, so `f32` storage keeps unit norms within `1e-6`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short type name written into persisted stores.
    const NAME: &'static str;

    fn widen(self) -> f64;

    fn narrow(value: f64) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Dot product accumulated in `f64`, left to right.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc + x.widen() * y.widen())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widen_narrow_roundtrip_is_exact_for_f32() {
        for v in [0.0f32, 1.0, -0.25, 1e-7, 3.4e38] {
            assert_eq!(f32::narrow(v.widen()), v);
        }
    }

    #[test]
    fn dot_matches_hand_value() {
        assert_eq!(dot(&[1.0f64, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
    }
}
