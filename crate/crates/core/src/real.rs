//! Generic scalar abstraction for the numeric core.
//!
//! All geometry, spline, and optimization code is written against [`Real`]
//! so the same routines run in `f32` or `f64`. Tests and the simulation
//! harness use the `f64` aliases exported from the crate root.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every module in this crate.
///
/// A blanket impl covers `f32` and `f64` (and anything else that satisfies
/// the bounds). `real` converts an `f64` literal into `T`; `to_f64` goes the
/// other way for logging and serialization.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn real(value: f64) -> Self {
        Self::from_f64(value).expect("literal not representable in scalar type")
    }

    /// Lossy conversion back to `f64` (exact for `f64` itself).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    #[inline]
    fn half() -> Self {
        Self::real(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::real(2.0)
    }
}

impl<T> Real for T where
    T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trip() {
        assert_eq!(f64::real(9.81), 9.81);
        assert_eq!(f32::real(0.5), 0.5f32);
        assert_eq!(9.81f64.to_f64_lossy(), 9.81);
    }
}
