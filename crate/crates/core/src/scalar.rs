//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::Serialize;

/// Real scalar type the solvers are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Serialize + Send + Sync + 'static
{
    /// Largest exponent `|αv|` accepted before `exp` is considered out of range.
    const EXP_LIMIT: f64;

    /// Converts an `f64` literal. Panics only if the value is not representable at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const EXP_LIMIT: f64 = 80.0;
}

impl Scalar for f64 {
    const EXP_LIMIT: f64 = 700.0;
}

/// `8π`, the critical total mass for the average constraint.
pub fn eight_pi<T: Scalar>() -> T {
    T::lit(8.0) * T::PI()
}

/// Entropy integrand `f(t) = t(log t - 1)` with `f(0) = 0`.
#[inline]
pub fn entropy_density<T: Scalar>(t: T) -> T {
    if t == T::zero() {
        T::zero()
    } else {
        t * (t.ln() - T::one())
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] = acc[0] + a[k] * b[k];
        acc[1] = acc[1] + a[k + 1] * b[k + 1];
        acc[2] = acc[2] + a[k + 2] * b[k + 2];
        acc[3] = acc[3] + a[k + 3] * b[k + 3];
    }
    let mut tail = T::zero();
    for k in 4 * chunks..n {
        tail = tail + a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
