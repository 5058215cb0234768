//! Scalar abstraction over the floating-point element type.
//!
//! All numeric code in this crate is generic over [`Scalar`] so the same
//! pipeline can run in single or double precision. Concrete aliases for the
//! default `f64` instantiation live at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; every finite `f64` maps to a finite value.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    /// Widening conversion to `f64` for logging and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Lossy conversion from a count; counts in this crate stay far below
    /// the exact-integer range of `f32`.
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count converts to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product with a fixed ascending-index accumulation order.
///
/// Every inner product in the crate goes through this function so that
/// matrix-level results are bit-identical to elementwise recomputation.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = S::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Euclidean norm, accumulated in ascending index order.
pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}

/// Mean of a slice, ascending-order accumulation. Empty input yields zero.
pub fn mean<S: Scalar>(v: &[S]) -> S {
    if v.is_empty() {
        return S::zero();
    }
    let mut acc = S::zero();
    for x in v {
        acc = acc + *x;
    }
    acc / S::from_usize(v.len()).expect("length fits scalar")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_ascending_order() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [4.0f64, 5.0, 6.0];
        assert_eq!(dot(&a, &b), 32.0);
    }

    #[test]
    fn mean_empty_is_zero() {
        let v: [f64; 0] = [];
        assert_eq!(mean(&v), 0.0);
    }

    #[test]
    fn norm_matches_hand_value() {
        assert_eq!(l2_norm(&[3.0f64, 4.0]), 5.0);
    }

    #[test]
    fn f32_roundtrips_through_f64() {
        let x = 0.1f32;
        assert_eq!(f32::from_f64_lossy(x.as_f64()), x);
    }
}
