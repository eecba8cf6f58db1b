//! Ginzburg–Landau energy, movement penalty and the per-step loss.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadMesh;
use crate::scalar::Real;
use crate::sepnet::{GradEval, SeparableField};

/// Interface width, time step and the scale of the double-well term.
///
/// The energy is `∫ s·W(φ) + (ε²/2)|∇φ|²` with `s = potential_scale`
/// (1 for the standard functional).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub epsilon: f64,
    pub tau: f64,
    #[serde(default = "one")]
    pub potential_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl EnergyParams {
    pub fn new(epsilon: f64, tau: f64) -> Result<Self> {
        let p = EnergyParams {
            epsilon,
            tau,
            potential_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_potential_scale(mut self, s: f64) -> Result<Self> {
        self.potential_scale = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.potential_scale > 0.0) || !self.potential_scale.is_finite() {
            return Err(Error::config(format!(
                "potential scale must be positive, got {}",
                self.potential_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub energy: T,
    pub movement: T,
    pub total: T,
}

/// `W(φ) = (φ² − 1)² / 4`.
pub fn double_well<T: Real>(phi: T) -> T {
    let a = phi * phi - T::one();
    a * a * T::lit(0.25)
}

/// `W′(φ) = φ³ − φ`.
pub fn double_well_derivative<T: Real>(phi: T) -> T {
    phi * phi * phi - phi
}

fn check_congruent<T>(a: &ArrayD<T>, b: &ArrayD<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} against {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Pointwise energy density on the Gauss grid.
pub fn energy_density<T: Real>(
    values: &ArrayD<T>,
    gradients: &[ArrayD<T>],
    params: &EnergyParams,
) -> Result<ArrayD<T>> {
    for g in gradients {
        check_congruent(values, g, "gradient against values")?;
    }
    let s = T::lit(params.potential_scale);
    let half_eps2 = T::lit(0.5 * params.epsilon * params.epsilon);
    let mut density = values.mapv(|p| s * double_well(p));
    for g in gradients {
        Zip::from(&mut density)
            .and(g)
            .for_each(|d, &v| *d += half_eps2 * v * v);
    }
    Ok(density)
}

/// `∫_Ω s·W(φ) + (ε²/2)|∇φ|²` by Gauss quadrature.
pub fn energy<T: Real>(
    values: &ArrayD<T>,
    gradients: &[ArrayD<T>],
    mesh: &QuadMesh<T>,
    params: &EnergyParams,
) -> Result<T> {
    if values.shape() != mesh.gauss_shape().as_slice() {
        return Err(Error::shape(format!(
            "values of shape {:?} on a Gauss grid of shape {:?}",
            values.shape(),
            mesh.gauss_shape()
        )));
    }
    if gradients.len() != mesh.dim() {
        return Err(Error::shape(format!(
            "{} gradient components on a {}-d mesh",
            gradients.len(),
            mesh.dim()
        )));
    }
    mesh.integrate(energy_density(values, gradients, params)?.view())
}

/// `(1/2τ) ∫_Ω (φ − φ_prev)²` by Gauss quadrature.
pub fn movement<T: Real>(
    values: &ArrayD<T>,
    previous: &ArrayD<T>,
    mesh: &QuadMesh<T>,
    params: &EnergyParams,
) -> Result<T> {
    check_congruent(values, previous, "values against previous step")?;
    let mut sq = values - previous;
    sq.mapv_inplace(|d| d * d);
    Ok(mesh.integrate(sq.view())? / (T::lit(2.0 * params.tau)))
}

/// Everything one loss evaluation produces.
#[derive(Debug, Clone)]
pub struct LossEval<T> {
    pub loss: LossBreakdown<T>,
    pub gradient: Vec<T>,
    pub field: GradEval<T>,
}

/// Loss of `field` for one minimizing-movement step away from `previous`
/// (transformed values at the Gauss points).
pub fn sdmm_loss<T: Real>(
    field: &SeparableField<T>,
    previous: &ArrayD<T>,
    mesh: &QuadMesh<T>,
    params: &EnergyParams,
) -> Result<LossBreakdown<T>> {
    let eval = field.evaluate_with_spatial_gradient(&mesh.gauss_axes())?;
    compose(&eval, previous, mesh, params)
}

fn compose<T: Real>(
    eval: &GradEval<T>,
    previous: &ArrayD<T>,
    mesh: &QuadMesh<T>,
    params: &EnergyParams,
) -> Result<LossBreakdown<T>> {
    let e = energy(&eval.values, &eval.gradients, mesh, params)?;
    let m = movement(&eval.values, previous, mesh, params)?;
    Ok(LossBreakdown {
        energy: e,
        movement: m,
        total: e + m,
    })
}

/// [`sdmm_loss`] together with its gradient with respect to the field
/// parameters.
pub fn sdmm_loss_and_gradient<T: Real>(
    field: &SeparableField<T>,
    previous: &ArrayD<T>,
    mesh: &QuadMesh<T>,
    weights: &ArrayD<T>,
    params: &EnergyParams,
) -> Result<LossEval<T>> {
    let eval = field.evaluate_with_spatial_gradient(&mesh.gauss_axes())?;
    let loss = compose(&eval, previous, mesh, params)?;
    check_congruent(&eval.values, weights, "quadrature weights against values")?;
    let s = T::lit(params.potential_scale);
    let inv_tau = T::lit(1.0 / params.tau);
    let eps2 = T::lit(params.epsilon * params.epsilon);
    let mut value_adj = ArrayD::<T>::zeros(eval.values.raw_dim());
    Zip::from(&mut value_adj)
        .and(&eval.values)
        .and(previous)
        .and(weights)
        .for_each(|a, &p, &q, &w| *a = w * (s * double_well_derivative(p) + (p - q) * inv_tau));
    let grad_adj: Vec<ArrayD<T>> = eval
        .gradients
        .iter()
        .map(|g| {
            let mut a = g * weights;
            a.mapv_inplace(|v| v * eps2);
            a
        })
        .collect();
    let gradient = field.backward(&eval, &value_adj, &grad_adj)?;
    Ok(LossEval {
        loss,
        gradient,
        field: eval,
    })
}
