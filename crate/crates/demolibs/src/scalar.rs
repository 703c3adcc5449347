//! Element types the demo libraries are generic over.

use std::fmt::Debug;

use num_traits::{Float, Num, NumCast, ToPrimitive};
use splitann::Data;

/// An element type with the arithmetic the kernels need.
///
/// Integer arithmetic wraps and division by zero yields zero, so integer
/// kernels are total functions and results are reproducible bit for bit.
pub trait Scalar: Num + NumCast + ToPrimitive + Copy + Default + PartialOrd + Debug + Data + Send + Sync + 'static {
    /// Suffix that tells the registered functions and kinds of this element
    /// type apart; empty for `f64`.
    const TAG: &'static str;

    fn k_add(self, o: Self) -> Self;
    fn k_sub(self, o: Self) -> Self;
    fn k_mul(self, o: Self) -> Self;
    fn k_div(self, o: Self) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Floating-point elements.
pub trait Real: Scalar + Float {
    fn erf(self) -> Self;
}

macro_rules! float_scalar {
    ($t:ty, $tag:expr, $erf:path) => {
        impl Scalar for $t {
            const TAG: &'static str = $tag;
            #[inline(always)]
            fn k_add(self, o: Self) -> Self {
                self + o
            }
            #[inline(always)]
            fn k_sub(self, o: Self) -> Self {
                self - o
            }
            #[inline(always)]
            fn k_mul(self, o: Self) -> Self {
                self * o
            }
            #[inline(always)]
            fn k_div(self, o: Self) -> Self {
                self / o
            }
        }
        impl Real for $t {
            #[inline(always)]
            fn erf(self) -> Self {
                $erf(self)
            }
        }
    };
}

float_scalar!(f64, "", libm::erf);
float_scalar!(f32, "_f32", libm::erff);

macro_rules! int_scalar {
    ($t:ty, $tag:expr) => {
        impl Scalar for $t {
            const TAG: &'static str = $tag;
            #[inline(always)]
            fn k_add(self, o: Self) -> Self {
                self.wrapping_add(o)
            }
            #[inline(always)]
            fn k_sub(self, o: Self) -> Self {
                self.wrapping_sub(o)
            }
            #[inline(always)]
            fn k_mul(self, o: Self) -> Self {
                self.wrapping_mul(o)
            }
            #[inline(always)]
            fn k_div(self, o: Self) -> Self {
                self.checked_div(o).unwrap_or(0)
            }
        }
    };
}

int_scalar!(i64, "_i64");
int_scalar!(i32, "_i32");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_ops_are_total() {
        assert_eq!(7i64.k_div(0), 0);
        assert_eq!(i64::MIN.k_div(-1), 0);
        assert_eq!(i64::MAX.k_add(1), i64::MIN);
        assert_eq!(3i32.k_mul(-4), -12);
    }

    #[test]
    fn erf_values() {
        assert_eq!(Real::erf(0.0f64), 0.0);
        assert!((Real::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((Real::erf(1.0f32) - 0.842_700_8).abs() < 1e-6);
    }
}
