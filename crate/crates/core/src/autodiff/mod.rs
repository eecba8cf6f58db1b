//! Differentiation engine.
//!
//! Forward mode ([`Dual`]) is used for derivatives with respect to the few
//! spatial inputs of a field; reverse mode ([`Tape`]) for gradients with
//! respect to the many network parameters. The batched network code in
//! [`crate::sepnet`] follows the same two rules on whole matrices and is
//! checked against these scalar engines.

mod dual;
mod tape;

use std::str::FromStr;

pub use dual::Dual;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Registered unary primitives. Anything else is rejected by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Square,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Gelu,
}

impl Unary {
    /// Primal value and first derivative at `x`.
    pub fn value_and_derivative<S: Scalar>(self, x: S) -> (S, S) {
        match self {
            Unary::Neg => (-x, -S::one()),
            Unary::Square => (x * x, S::from_f64(2.0) * x),
            Unary::Sqrt => {
                let r = x.sqrt();
                (r, S::from_f64(0.5) / r)
            }
            Unary::Exp => {
                let e = x.exp();
                (e, e)
            }
            Unary::Ln => (x.ln(), S::one() / x),
            Unary::Sin => (x.sin(), x.cos()),
            Unary::Cos => (x.cos(), -x.sin()),
            Unary::Tanh => {
                let t = x.tanh();
                (t, S::one() - t * t)
            }
            Unary::Gelu => {
                let pdf = crate::scalar::normal_pdf(x);
                let cdf = S::from_f64(0.5)
                    * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
                (x * cdf, cdf + x * pdf)
            }
        }
    }

    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Gelu => x.gelu(),
        }
    }
}

impl FromStr for Unary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "neg" => Unary::Neg,
            "square" => Unary::Square,
            "sqrt" => Unary::Sqrt,
            "exp" => Unary::Exp,
            "ln" | "log" => Unary::Ln,
            "sin" => Unary::Sin,
            "cos" => Unary::Cos,
            "tanh" => Unary::Tanh,
            "gelu" => Unary::Gelu,
            other => return Err(Error::Unsupported(other.to_string())),
        })
    }
}

/// `∂f/∂x_direction` at `x`, by one forward pass with the chosen input seeded.
pub fn forward_derivative<S, F>(f: F, x: &[S], direction: usize) -> Result<S>
where
    S: Scalar,
    F: Fn(&[Dual<S>]) -> Result<Dual<S>>,
{
    if direction >= x.len() {
        return Err(Error::config(format!(
            "direction {direction} out of range for a {}-dimensional point",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "input point".into(),
            index: format!("component {i}"),
        });
    }
    let seeded: Vec<Dual<S>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == direction {
                Dual::variable(v)
            } else {
                Dual::constant(v)
            }
        })
        .collect();
    Ok(f(&seeded)?.tangent)
}

/// Value and gradient of `loss` with respect to `params`, recorded on a fresh
/// tape and swept backward once.
pub fn parameter_gradient<S, F>(loss: F, params: &[S]) -> Result<(S, Vec<S>)>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let vars = tape.parameters(params);
    let out = loss(&tape, &vars)?;
    let grad = tape.gradient(out)?;
    Ok((out.value(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_at_three() {
        let d = forward_derivative(|x| Ok(x[0] * x[0]), &[3.0f64], 0).unwrap();
        assert_eq!(d, 6.0);
    }

    #[test]
    fn log_minus_product_example() {
        let f = |x: &[Dual<f64>]| Ok(x[0].ln() - x[0] * x[1] * x[1]);
        let d = forward_derivative(f, &[2.0, 5.0], 0).unwrap();
        assert!((d - (-24.5)).abs() < 1e-14);
        // independent check
        let fd = central_difference(|a| a.ln() - a * 25.0, 2.0, 1e-6);
        assert!((d - fd).abs() < 1e-6);
        let d2 = forward_derivative(f, &[2.0, 5.0], 1).unwrap();
        assert!((d2 - (-20.0)).abs() < 1e-14);
    }

    #[test]
    fn tanh_slope_at_origin() {
        let d = forward_derivative(|x| Ok(x[0].tanh()), &[0.0f64], 0).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn unregistered_primitive_is_rejected() {
        let f = |x: &[Dual<f64>]| Ok("sinh".parse::<Unary>()?.apply(x[0]));
        match forward_derivative(f, &[1.0], 0) {
            Err(Error::Unsupported(name)) => assert_eq!(name, "sinh"),
            other => panic!("expected Unsupported, got {other:?}"),
        }
    }

    #[test]
    fn bad_direction_and_non_finite_input() {
        assert!(forward_derivative(|x| Ok(x[0]), &[1.0f64], 1).is_err());
        assert!(matches!(
            forward_derivative(|x| Ok(x[0]), &[f64::NAN], 0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let (v, g) = parameter_gradient(
            |_, p| Ok((p[0].square() + p[1].square()) * 0.5),
            &[1.0f64, -2.0],
        )
        .unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(g, vec![1.0, -2.0]);
    }

    #[test]
    fn tanh_parameter_gradient_matches_difference() {
        let (_, g) = parameter_gradient(|_, p| Ok(p[0].tanh()), &[0.5f64]).unwrap();
        let fd = central_difference(f64::tanh, 0.5, 1e-6);
        // sech²(0.5) = 0.78644773296592741...
        assert!((g[0] - 0.786_447_732_965_927_4).abs() < 1e-15);
        assert!((g[0] - fd).abs() < 1e-9);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (_, g) = parameter_gradient(|t, _| Ok(t.constant(7.0f64)), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn nan_in_forward_pass_is_reported() {
        let r = parameter_gradient(|_, p| Ok(p[0].sqrt() + p[0]), &[-1.0f64]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn forward_and_reverse_agree_on_scalar_input() {
        let expr = |x: f64| {
            let fwd = forward_derivative(
                |v| Ok((v[0].gelu() * v[0].sin()).exp() / (v[0].square() + Dual::from_f64(1.0))),
                &[x],
                0,
            )
            .unwrap();
            let (_, rev) = parameter_gradient(
                |_, p| Ok((p[0].gelu() * p[0].sin()).exp() / (p[0].square() + 1.0)),
                &[x],
            )
            .unwrap();
            (fwd, rev[0])
        };
        for &x in &[-2.0, -0.1, 0.3, 1.9] {
            let (a, b) = expr(x);
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{x}: {a} vs {b}");
        }
    }
}
