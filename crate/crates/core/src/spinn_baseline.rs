//! Strong-form space-time separable PINN for the periodic 1D Allen–Cahn
//! problem `φ_t − ε²φ_xx + r(φ³ − φ) = 0`, `φ(x, 0) = x² cos πx`.

use ndarray::{ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{lbfgs_minimize, AdamConfig, AdamState, LbfgsConfig};
use crate::reference_fd::{fd_solve, l2_difference, Boundary, FdConfig};
use crate::scalar::Real;
use crate::sepnet::{SeparableField, Transform};
use crate::snapshot::{linspace, FieldSnapshot};

pub const X_RANGE: (f64, f64) = (-1.0, 1.0);
pub const T_END: f64 = 1.0;
pub const FIGURE_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pde: 1.0,
            bc: 1.0,
            ic: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinnConfig {
    pub epsilon: f64,
    /// Coefficient `r` of the reaction term.
    pub reaction: f64,
    /// Collocation points per axis.
    pub points: usize,
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    pub lbfgs_memory: usize,
    pub weights: LossWeights,
}

impl Default for SpinnConfig {
    fn default() -> Self {
        SpinnConfig {
            epsilon: 0.01,
            reaction: 5.0,
            points: 256,
            hidden: vec![64; 3],
            rank: 64,
            seed: 0,
            adam: AdamConfig::default(),
            adam_iters: 10_000,
            lbfgs_iters: 1_000,
            lbfgs_memory: 10,
            weights: LossWeights::default(),
        }
    }
}

pub fn initial_profile(x: f64) -> f64 {
    x * x * (std::f64::consts::PI * x).cos()
}

/// Collocation coordinates: `x` spans the closed interval, `t` the
/// half-open `(0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation<T> {
    pub x: Vec<T>,
    pub t: Vec<T>,
    /// `u(x, 0)` at every `x`.
    pub initial: Vec<T>,
}

impl<T: Real> Collocation<T> {
    pub fn new(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::config(
                "need at least two collocation points per axis",
            ));
        }
        let x = linspace(T::lit(X_RANGE.0), T::lit(X_RANGE.1), points);
        let t = (1..=points)
            .map(|k| T::lit(T_END * k as f64 / points as f64))
            .collect();
        let initial = x
            .iter()
            .map(|&v| T::lit(initial_profile(v.to_f64().unwrap_or(f64::NAN))))
            .collect();
        Ok(Collocation { x, t, initial })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLoss<T> {
    pub pde: T,
    pub bc: T,
    pub ic: T,
    /// Weighted sum.
    pub total: T,
}

/// `φ_t − ε²φ_xx + r(φ³ − φ)`.
pub fn residual<T: Real>(phi: T, phi_t: T, phi_xx: T, epsilon: T, reaction: T) -> T {
    phi_t - epsilon * epsilon * phi_xx + reaction * (phi * phi * phi - phi)
}

pub fn new_spacetime_field<T: Real>(config: &SpinnConfig) -> Result<SeparableField<T>> {
    SeparableField::new(
        &[
            (T::lit(X_RANGE.0), T::lit(X_RANGE.1)),
            (T::zero(), T::lit(T_END)),
        ],
        &config.hidden,
        config.rank,
        Transform::Identity,
        config.seed,
    )
}

/// The three loss terms and the parameter gradient of their weighted sum.
pub fn pinn_loss<T: Real>(
    field: &SeparableField<T>,
    grid: &Collocation<T>,
    config: &SpinnConfig,
) -> Result<(PinnLoss<T>, Vec<T>)> {
    if field.dim() != 2 || field.transform() != Transform::Identity {
        return Err(Error::Unsupported(
            "the space-time baseline needs a 2-axis field without output transform".into(),
        ));
    }
    let eps = T::lit(config.epsilon);
    let r = T::lit(config.reaction);
    let w = config.weights;
    let two = T::lit(2.0);
    let mut grad = vec![T::zero(); field.num_params()];

    // PDE residual on the full space-time grid
    let eval = field.trace_grid(&[grid.x.clone(), grid.t.clone()], 2)?;
    let phi = eval.contract(&[0, 0]);
    let phi_t = eval.contract(&[0, 1]);
    let phi_xx = eval.contract(&[2, 0]);
    let n = T::from_count(phi.len());
    let scale = T::lit(w.pde) * two / n;
    let mut pde = T::zero();
    let mut adj_phi = phi.clone();
    let mut adj_t = phi.clone();
    let mut adj_xx = phi.clone();
    for (k, ((&u, &ut), &uxx)) in phi.iter().zip(phi_t.iter()).zip(phi_xx.iter()).enumerate() {
        let res = residual(u, ut, uxx, eps, r);
        pde += res * res;
        let g = scale * res;
        adj_phi.as_slice_mut().unwrap()[k] = g * r * (T::lit(3.0) * u * u - T::one());
        adj_t.as_slice_mut().unwrap()[k] = g;
        adj_xx.as_slice_mut().unwrap()[k] = -g * eps * eps;
    }
    let pde = pde / n;
    if w.pde != 0.0 {
        let mut seeds = eval.zero_seeds();
        eval.contract_adjoint(&[0, 0], &adj_phi, &mut seeds);
        eval.contract_adjoint(&[0, 1], &adj_t, &mut seeds);
        eval.contract_adjoint(&[2, 0], &adj_xx, &mut seeds);
        add(&mut grad, &field.backward_seeds(&eval, seeds));
    }

    // periodicity of value and slope at x = ±1
    let ends = vec![grid.x[0], grid.x[grid.x.len() - 1]];
    let eval = field.trace_grid(&[ends, grid.t.clone()], 1)?;
    let v = eval.contract(&[0, 0]);
    let vx = eval.contract(&[1, 0]);
    let nb = T::from_count(2 * grid.t.len());
    let scale = T::lit(w.bc) * two / nb;
    let mut bc = T::zero();
    let mut adj_v = ArrayD::zeros(v.raw_dim());
    let mut adj_vx = ArrayD::zeros(v.raw_dim());
    for j in 0..grid.t.len() {
        let dv = v[[0, j]] - v[[1, j]];
        let dx = vx[[0, j]] - vx[[1, j]];
        bc += dv * dv + dx * dx;
        adj_v[[0, j]] = scale * dv;
        adj_v[[1, j]] = -scale * dv;
        adj_vx[[0, j]] = scale * dx;
        adj_vx[[1, j]] = -scale * dx;
    }
    let bc = bc / nb;
    if w.bc != 0.0 {
        let mut seeds = eval.zero_seeds();
        eval.contract_adjoint(&[0, 0], &adj_v, &mut seeds);
        eval.contract_adjoint(&[1, 0], &adj_vx, &mut seeds);
        add(&mut grad, &field.backward_seeds(&eval, seeds));
    }

    // initial condition
    let eval = field.trace_grid(&[grid.x.clone(), vec![T::zero()]], 0)?;
    let u0 = eval.contract(&[0, 0]);
    let ni = T::from_count(grid.x.len());
    let scale = T::lit(w.ic) * two / ni;
    let mut ic = T::zero();
    let mut adj = u0.clone();
    for (i, a) in adj.iter_mut().enumerate() {
        let d = u0[[i, 0]] - grid.initial[i];
        ic += d * d;
        *a = scale * d;
    }
    let ic = ic / ni;
    if w.ic != 0.0 {
        let mut seeds = eval.zero_seeds();
        eval.contract_adjoint(&[0, 0], &adj, &mut seeds);
        add(&mut grad, &field.backward_seeds(&eval, seeds));
    }

    let total = T::lit(w.pde) * pde + T::lit(w.bc) * bc + T::lit(w.ic) * ic;
    Ok((PinnLoss { pde, bc, ic, total }, grad))
}

fn add<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss: PinnLoss<f64>,
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    /// Total loss every 100 Adam iterations, then after L-BFGS.
    pub history: Vec<f64>,
}

/// Adam then L-BFGS on the weighted PINN loss.
pub fn train<T: Real>(field: &mut SeparableField<T>, config: &SpinnConfig) -> Result<TrainReport> {
    let grid = Collocation::<T>::new(config.points)?;
    let to_f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let mut params = field.params();
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut best = (T::lit(f64::INFINITY), params.clone());
    let mut history = Vec::new();
    for it in 0..config.adam_iters {
        let (loss, grad) = pinn_loss(field, &grid, config)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: "non-finite residual loss".into(),
            });
        }
        if loss.total < best.0 {
            best = (loss.total, params.clone());
        }
        if it % 100 == 0 {
            history.push(to_f(loss.total));
        }
        adam.step(&mut params, &grad)?;
        field.set_params(&params)?;
    }
    let (last, _) = pinn_loss(field, &grid, config)?;
    if best.0 < last.total {
        field.set_params(&best.1)?;
        params = best.1;
    }
    let mut lbfgs_iters = 0;
    if config.lbfgs_iters > 0 {
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
                let (loss, grad) = pinn_loss(&probe, &grid, config)?;
                g.copy_from_slice(&grad);
                Ok(loss.total)
            },
            &mut params,
            &cfg,
        )?;
        field.set_params(&params)?;
        lbfgs_iters = report.iterations;
    }
    let (loss, _) = pinn_loss(field, &grid, config)?;
    history.push(to_f(loss.total));
    Ok(TrainReport {
        loss: PinnLoss {
            pde: to_f(loss.pde),
            bc: to_f(loss.bc),
            ic: to_f(loss.ic),
            total: to_f(loss.total),
        },
        adam_iters: config.adam_iters,
        lbfgs_iters,
        history,
    })
}

/// Periodic finite-difference solution on `nodes` points of `[−1, 1]` at
/// each of `times`.
pub fn reference_solution(
    config: &SpinnConfig,
    nodes: usize,
    dt: f64,
    times: &[f64],
) -> Result<Vec<FieldSnapshot<f64>>> {
    let ic = FieldSnapshot::from_fn(vec![linspace(X_RANGE.0, X_RANGE.1, nodes)], 0.0, |p| {
        initial_profile(p[0])
    });
    fd_solve(
        &ic,
        &FdConfig {
            epsilon: config.epsilon,
            dt,
            boundary: Boundary::Periodic,
            potential_scale: config.reaction,
            output_times: times.to_vec(),
        },
    )
}

/// Slice of the space-time field at time `t` on the node grid of `like`.
pub fn slice_at<T: Real>(
    field: &SeparableField<T>,
    like: &FieldSnapshot<T>,
    t: T,
) -> Result<FieldSnapshot<T>> {
    if like.dim() != 1 {
        return Err(Error::shape("time slices are one-dimensional"));
    }
    let values = field.evaluate_grid(&[like.axes[0].clone(), vec![t]])?;
    let values = values.index_axis(Axis(1), 0).to_owned().into_dyn();
    FieldSnapshot::new(like.axes.clone(), values, t)
}

/// `‖φ − φ_ref‖ / ‖φ_ref‖` in L² over the reference nodes.
pub fn relative_l2<T: Real>(pred: &FieldSnapshot<T>, reference: &FieldSnapshot<T>) -> Result<T> {
    let zero = FieldSnapshot::new(
        reference.axes.clone(),
        ArrayD::zeros(reference.values.raw_dim()),
        reference.time,
    )?;
    Ok(l2_difference(pred, reference)? / l2_difference(reference, &zero)?)
}

/// Columns `x`, then `spinn_t<t>` and `reference_t<t>` for each reference
/// snapshot.
pub fn figure_csv(
    field: &SeparableField<f64>,
    references: &[FieldSnapshot<f64>],
) -> Result<String> {
    let Some(first) = references.first() else {
        return Err(Error::EmptyInput("no reference snapshots".into()));
    };
    let mut slices = Vec::with_capacity(references.len());
    let mut header = String::from("x");
    for r in references {
        if r.axes != first.axes {
            return Err(Error::shape("reference snapshots on different grids"));
        }
        slices.push(slice_at(field, r, r.time)?);
        header.push_str(&format!(",spinn_t{0},reference_t{0}", r.time));
    }
    let mut out = header;
    out.push('\n');
    for (i, x) in first.axes[0].iter().enumerate() {
        out.push_str(&format!("{x:.16e}"));
        for (s, r) in slices.iter().zip(references) {
            out.push_str(&format!(",{:.16e},{:.16e}", s.values[[i]], r.values[[i]]));
        }
        out.push('\n');
    }
    Ok(out)
}
