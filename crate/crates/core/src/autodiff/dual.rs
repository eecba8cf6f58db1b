//! Forward-mode dual numbers.

use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{One, Zero};

use crate::scalar::Scalar;

/// `primal + tangent·δ` with `δ² = 0`.
///
/// The tangent carries the directional derivative of the primal with respect
/// to whichever input was seeded with tangent 1. Nesting (`Dual<Dual<f64>>`)
/// yields second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dual<S> {
    pub primal: S,
    pub tangent: S,
}

impl<S: Scalar> Dual<S> {
    #[inline]
    pub fn new(primal: S, tangent: S) -> Self {
        Dual { primal, tangent }
    }

    /// An independent variable, seeded with unit tangent.
    #[inline]
    pub fn variable(primal: S) -> Self {
        Dual::new(primal, S::one())
    }

    #[inline]
    pub fn constant(primal: S) -> Self {
        Dual::new(primal, S::zero())
    }

    /// Applies `f` with derivative `df` via the chain rule.
    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Dual::new(f, df * self.tangent)
    }
}

impl<S: Scalar> Zero for Dual<S> {
    fn zero() -> Self {
        Dual::constant(S::zero())
    }
    fn is_zero(&self) -> bool {
        self.primal.is_zero() && self.tangent.is_zero()
    }
}

impl<S: Scalar> One for Dual<S> {
    fn one() -> Self {
        Dual::constant(S::one())
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(
            self.primal * rhs.primal,
            self.primal * rhs.tangent + self.tangent * rhs.primal,
        )
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = S::one() / rhs.primal;
        Dual::new(
            self.primal * inv,
            (self.tangent * rhs.primal - self.primal * rhs.tangent) * inv * inv,
        )
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.primal, -self.tangent)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<S: Scalar> $tr for Dual<S> {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl<S: Scalar> Scalar for Dual<S> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }

    #[inline]
    fn primal(self) -> f64 {
        self.primal.primal()
    }

    #[inline]
    fn tanh(self) -> Self {
        let t = self.primal.tanh();
        self.chain(t, S::one() - t * t)
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.primal.exp();
        self.chain(e, e)
    }

    #[inline]
    fn ln(self) -> Self {
        self.chain(self.primal.ln(), S::one() / self.primal)
    }

    #[inline]
    fn sqrt(self) -> Self {
        let r = self.primal.sqrt();
        self.chain(r, S::from_f64(0.5) / r)
    }

    #[inline]
    fn sin(self) -> Self {
        self.chain(self.primal.sin(), self.primal.cos())
    }

    #[inline]
    fn cos(self) -> Self {
        self.chain(self.primal.cos(), -self.primal.sin())
    }

    #[inline]
    fn erf(self) -> Self {
        let c = S::from_f64(std::f64::consts::FRAC_2_SQRT_PI);
        let x = self.primal;
        self.chain(x.erf(), c * (-(x * x)).exp())
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::one();
        }
        let p = self.primal.powi(n - 1);
        self.chain(p * self.primal, S::from_f64(n as f64) * p)
    }

    #[inline]
    fn abs(self) -> Self {
        if self.primal < S::zero() {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.primal.is_finite() && self.tangent.is_finite()
    }

    /// GELU with the registered exact derivative `Φ(x) + x φ(x)`.
    #[inline]
    fn gelu(self) -> Self {
        let x = self.primal;
        let pdf = crate::scalar::normal_pdf(x);
        let cdf = S::from_f64(0.5)
            * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
        self.chain(x * cdf, cdf + x * pdf)
    }
}
