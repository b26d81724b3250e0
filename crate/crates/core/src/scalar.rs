//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating point type the receiver is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn from_usize_(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Cpx<T> = Complex<T>;

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` over a slice; `-inf` for an empty slice.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Natural log of the circular complex Gaussian density `CN(z; mean, var)`.
#[inline]
pub fn log_cn<T: Real>(z: Cpx<T>, mean: Cpx<T>, var: T) -> T {
    -(T::PI() * var).ln() - (z - mean).norm_sqr() / var
}

/// Normalize `log` weights in place into probabilities. Returns the log normalizer.
pub fn normalize_log<T: Real>(logs: &[T], out: &mut [T]) -> T {
    let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::nan());
        return max;
    }
    for (o, &l) in out.iter_mut().zip(logs) {
        *o = (l - max).exp();
    }
    let s: T = out.iter().copied().sum();
    out.iter_mut().for_each(|o| *o = *o / s);
    max + s.ln()
}
