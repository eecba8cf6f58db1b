//! Scalar abstractions.
//!
//! [`Scalar`] is the set of primitives that forward-mode differentiation is
//! closed over: it is implemented for `f32`, `f64` and for [`Dual`] of any
//! scalar, so `Dual<Dual<f64>>` gives second derivatives. [`Real`] adds what
//! the grid and linear-algebra code needs on top of that and is only
//! implemented for the machine floats.
//!
//! [`Dual`]: crate::autodiff::Dual

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{FloatConst, FromPrimitive, One, ToPrimitive, Zero};

pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// The plain value, with any derivative parts dropped.
    fn primal(self) -> f64;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn erf(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs(self) -> Self;
    /// True when every component (value and derivatives) is finite.
    fn is_finite(self) -> bool;

    #[inline]
    fn square(self) -> Self {
        self * self
    }

    /// Exact GELU, `x Φ(x)` with `Φ` the standard normal CDF.
    #[inline]
    fn gelu(self) -> Self {
        let half = Self::from_f64(0.5);
        half * self * (Self::one() + (self * Self::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
    }
}

/// Machine floating point types usable throughout the solver.
pub trait Real:
    Scalar
    + LinalgScalar
    + ScalarOperand
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
    + 'static
{
    const EPSILON: Self;
    fn atan2(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_nan(self) -> bool;
    fn to_bits_u64(self) -> u64;

    /// Lossy conversion used for literals and counts.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as Scalar>::from_f64(v)
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as Scalar>::from_f64(n as f64)
    }
}

macro_rules! impl_float {
    ($t:ident, $erf:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn primal(self) -> f64 {
                self as f64
            }
            #[inline]
            fn tanh(self) -> Self {
                $t::tanh(self)
            }
            #[inline]
            fn exp(self) -> Self {
                $t::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                $t::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                $t::sqrt(self)
            }
            #[inline]
            fn sin(self) -> Self {
                $t::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                $t::cos(self)
            }
            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                $t::powi(self, n)
            }
            #[inline]
            fn abs(self) -> Self {
                $t::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                $t::is_finite(self)
            }
        }

        impl Real for $t {
            const EPSILON: Self = $t::EPSILON;
            #[inline]
            fn atan2(self, other: Self) -> Self {
                $t::atan2(self, other)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                $t::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                $t::min(self, other)
            }
            #[inline]
            fn is_nan(self) -> bool {
                $t::is_nan(self)
            }
            #[inline]
            fn to_bits_u64(self) -> u64 {
                self.to_bits() as u64
            }
        }
    };
}

impl_float!(f64, libm::erf);
impl_float!(f32, libm::erff);

/// Standard normal density.
#[inline]
pub fn normal_pdf<S: Scalar>(x: S) -> S {
    let c = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    c * (-(x * x) * S::from_f64(0.5)).exp()
}

/// Derivatives of the exact GELU `z Φ(z)` up to third order, evaluated on
/// plain floats. Returns `(σ, σ', σ'', σ''')`.
#[inline]
pub fn gelu_jet<T: Real>(z: T) -> (T, T, T, T) {
    let pdf = normal_pdf(z);
    let cdf = T::lit(0.5) * (T::one() + (z * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let z2 = z * z;
    (
        z * cdf,
        cdf + z * pdf,
        pdf * (T::lit(2.0) - z2),
        pdf * (z2 * z - T::lit(4.0) * z),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_matches_closed_form_values() {
        // Φ(1) = 0.841344746068543
        assert!((1.0f64.gelu() - 0.841_344_746_068_543).abs() < 1e-14);
        assert_eq!(0.0f64.gelu(), 0.0);
        assert!(((-30.0f64).gelu()).abs() < 1e-12);
    }

    #[test]
    fn gelu_jet_derivatives_match_differences() {
        let h = 1e-5;
        for &z in &[-2.5f64, -0.3, 0.0, 0.7, 3.1] {
            let (_, d1, d2, d3) = gelu_jet(z);
            let fd1 = ((z + h).gelu() - (z - h).gelu()) / (2.0 * h);
            let fd2 = (gelu_jet(z + h).1 - gelu_jet(z - h).1) / (2.0 * h);
            let fd3 = (gelu_jet(z + h).2 - gelu_jet(z - h).2) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-9, "{z}");
            assert!((d2 - fd2).abs() < 1e-9, "{z}");
            assert!((d3 - fd3).abs() < 1e-9, "{z}");
        }
    }

    #[test]
    fn single_precision_is_a_real() {
        fn twice<T: Real>(x: T) -> T {
            x + x
        }
        assert_eq!(twice(1.5f32), 3.0);
        assert!((0.5f32.gelu() - 0.5f64.gelu() as f32).abs() < 1e-6);
    }
}
