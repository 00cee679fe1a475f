use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar accepted by the density and covariance kernels.
///
/// Implemented for `f32` and `f64`. Transcendental functions come from
/// nalgebra's `RealField`; conversions from `num_traits`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn neg_infinity() -> Self {
        Self::lit(f64::NEG_INFINITY)
    }
}

impl Real for f32 {}
impl Real for f64 {}
