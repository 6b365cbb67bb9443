//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point element type of fields, parameters and metrics: `f32` or `f64`.
///
/// Training and gradient checks are meant to run at `f64`; `f32` is supported
/// for storage and for inference experiments.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable as scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product of two equal-length slices.
///
/// Accumulates in eight interleaved lanes; the summation order is fixed, so
/// results are reproducible.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::zero(); 8];
    let ra = a.len() % 8;
    for (xa, xb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    let tail = a.len() - ra;
    let mut acc = reduce_lanes(lanes);
    for (&x, &y) in a[tail..].iter().zip(&b[tail..]) {
        acc += x * y;
    }
    acc
}

/// Squared Euclidean distance, same lane layout as [`dot`].
#[inline]
pub fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::zero(); 8];
    for (xa, xb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            let d = xa[l] - xb[l];
            lanes[l] += d * d;
        }
    }
    let tail = a.len() - a.len() % 8;
    let mut acc = reduce_lanes(lanes);
    for (&x, &y) in a[tail..].iter().zip(&b[tail..]) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
fn reduce_lanes<S: Scalar>(l: [S; 8]) -> S {
    ((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7]))
}

/// Numerically stable `ln(sum(exp(v)))`; `-inf` for an empty slice.
pub fn log_sum_exp<S: Scalar>(v: &[S]) -> S {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let s: S = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}
