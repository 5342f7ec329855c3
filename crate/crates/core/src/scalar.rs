//! Scalar abstraction shared by every field and operator.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the geometry kernels are generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("integer representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sums a slice with a fixed pairwise tree, so reductions do not depend on
/// how the caller produced the slice.
pub fn pairwise_sum<S: Real>(values: &[S]) -> S {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        let mut acc = S::zero();
        for &v in values {
            acc = acc + v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let naive: f64 = v.iter().sum();
        assert_eq!(pairwise_sum(&v), naive);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let v = vec![0.1f32; 1 << 16];
        let exact = 0.1f64 * (1 << 16) as f64;
        let pw = pairwise_sum(&v) as f64;
        let naive: f32 = v.iter().copied().fold(0.0, |a, b| a + b);
        assert!((pw - exact).abs() < (naive as f64 - exact).abs());
    }
}
