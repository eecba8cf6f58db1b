//! Separable neural fields.

mod field;
mod init;
mod mlp;

pub use field::{GradEval, GridEval, SeparableField, Transform};
pub use init::{feature_targets, fit_features, low_rank_initialize, raw_target};
pub use mlp::{Dense, FeatureNet, NetTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{lbfgs_minimize, AdamConfig, AdamState, LbfgsConfig};
use crate::scalar::Real;
use crate::snapshot::FieldSnapshot;

/// Budget for fitting a field to sampled values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub adam: AdamConfig,
    pub adam_iters: usize,
    /// Stop as soon as the MSE drops below this.
    pub tolerance: f64,
    /// L-BFGS iterations after the Adam phase; 0 disables it.
    pub lbfgs_iters: usize,
    pub lbfgs_memory: usize,
    /// Rank of the low-rank initialization run before Adam; 0 disables it.
    pub init_rank: usize,
    /// L-BFGS iterations per feature net during that initialization.
    pub init_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            adam: AdamConfig::default(),
            adam_iters: 5000,
            tolerance: 1e-6,
            lbfgs_iters: 0,
            lbfgs_memory: 10,
            init_rank: 0,
            init_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub mse: f64,
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    pub reached_tolerance: bool,
}

/// Mean squared misfit of the transformed field against `target`, and its
/// parameter gradient.
pub fn fit_loss<T: Real>(
    field: &SeparableField<T>,
    target: &FieldSnapshot<T>,
) -> Result<(T, Vec<T>)> {
    let eval = field.trace_grid(&target.axes, 0)?;
    let orders = vec![0; field.dim()];
    let raw = eval.contract(&orders);
    let n = T::from_count(raw.len());
    let two = T::lit(2.0);
    let transform = field.transform();
    let mut loss = T::zero();
    let mut adj = raw.clone();
    for ((a, &u), &t) in adj.iter_mut().zip(raw.iter()).zip(target.values.iter()) {
        let phi = transform.apply(u);
        let r = phi - t;
        loss += r * r;
        let slope = match transform {
            Transform::Identity => T::one(),
            Transform::Tanh => T::one() - phi * phi,
        };
        *a = two * r * slope / n;
    }
    let mut seeds = eval.zero_seeds();
    eval.contract_adjoint(&orders, &adj, &mut seeds);
    Ok((loss / n, field.backward_seeds(&eval, seeds)))
}

/// Fits `field` to `target` on the target's own grid: optional low-rank
/// initialization, Adam, then an optional L-BFGS polish.
pub fn fit_initial_condition<T: Real>(
    field: &mut SeparableField<T>,
    target: &FieldSnapshot<T>,
    config: &FitConfig,
) -> Result<FitReport> {
    if target.dim() != field.dim() {
        return Err(Error::shape(format!(
            "{}-d target for a {}-d field",
            target.dim(),
            field.dim()
        )));
    }
    if config.init_rank > 0 {
        low_rank_initialize(field, target, config.init_rank, config.init_iters)?;
    }
    let tol = T::lit(config.tolerance);
    let mut params = field.params();
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut mse = T::lit(f64::INFINITY);
    let mut adam_iters = 0;
    let mut best = (T::lit(f64::INFINITY), params.clone());
    if config.adam_iters == 0 {
        mse = fit_loss(field, target)?.0;
    }
    for it in 0..config.adam_iters {
        let (loss, grad) = fit_loss(field, target)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: "non-finite initial-condition misfit".into(),
            });
        }
        mse = loss;
        if loss < best.0 {
            best = (loss, params.clone());
        }
        if loss < tol {
            break;
        }
        adam.step(&mut params, &grad).map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged {
                iteration: it,
                reason,
            },
            other => other,
        })?;
        field.set_params(&params)?;
        adam_iters += 1;
    }
    if adam_iters == config.adam_iters && config.adam_iters > 0 {
        let (loss, _) = fit_loss(field, target)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: adam_iters,
                reason: "non-finite initial-condition misfit".into(),
            });
        }
        mse = loss;
        if loss < best.0 {
            best = (loss, params.clone());
        }
    }
    if best.0 < mse {
        params = best.1;
        mse = best.0;
        field.set_params(&params)?;
    }

    let mut lbfgs_iters = 0;
    if config.lbfgs_iters > 0 && !(mse < tol) {
        let cfg = LbfgsConfig {
            memory: config.lbfgs_memory,
            max_iters: config.lbfgs_iters,
            grad_tol: 0.0,
            ..LbfgsConfig::default()
        };
        let mut probe = field.clone();
        let report = lbfgs_minimize(
            |p, g| {
                probe.set_params(p)?;
                let (loss, grad) = fit_loss(&probe, target)?;
                g.copy_from_slice(&grad);
                Ok(loss)
            },
            &mut params,
            &cfg,
        )?;
        field.set_params(&params)?;
        mse = report.loss;
        lbfgs_iters = report.iterations;
    }
    let mse = mse.to_f64().unwrap_or(f64::NAN);
    Ok(FitReport {
        mse,
        adam_iters,
        lbfgs_iters,
        reached_tolerance: mse < config.tolerance,
    })
}
