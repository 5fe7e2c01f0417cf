//! Scalar abstraction shared by the 32-bit training path and the 64-bit
//! gradient-check path.

use core::fmt::{Debug, Display};
use core::iter::Sum;
use num_traits::Float;

pub trait Real: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn erf(self) -> Self;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
