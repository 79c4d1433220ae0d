//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the library can compute in: `f32` or `f64`.
///
/// Everything distance- and kernel-based is written against this trait. The
/// solver's default tolerance (1e-3) is comfortably above `f32` round-off for
/// cells of a few thousand samples, but `f64` is what the CLI and the toy
/// harness use.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// `n`-th root of a positive value, polished with one Newton step so that
    /// exact roots (e.g. the cube root of 1000) come out exact.
    fn nth_root(self, n: u32) -> Self {
        let root = self.powf(Self::one() / Self::lit(n as f64));
        if n <= 1 || root <= Self::zero() {
            return root;
        }
        let nn = Self::lit(n as f64);
        let step = (root.powi(n as i32) - self) / (nn * root.powi(n as i32 - 1));
        root - step
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Squared Euclidean distance by direct subtraction.
#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let t = x - y;
        acc = acc + t * t;
    }
    acc
}
