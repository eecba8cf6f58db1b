//! Explicit finite-difference Allen–Cahn solver and error metrics against it.

use ndarray::{ArrayD, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{double_well, double_well_derivative};
use crate::quadrature::{tensor_quadrature, trapezoid_weights};
use crate::scalar::Real;
use crate::snapshot::FieldSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Mirrored ghost nodes, `∇φ·n = 0`.
    NoFlux,
    /// First and last node of every axis are the same point.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub boundary: Boundary,
    /// Multiplies `W′` in the reaction term.
    pub potential_scale: f64,
    /// Times at which snapshots are returned; each must be a whole number
    /// of steps.
    pub output_times: Vec<f64>,
}

/// Largest admissible explicit step, with a 0.9 safety factor:
/// `0.9 · h² / (2 d ε²)` for the smallest spacing `h`.
pub fn stability_bound(spacings: &[f64], epsilon: f64) -> f64 {
    let h = spacings.iter().copied().fold(f64::INFINITY, f64::min);
    0.9 * h * h / (2.0 * spacings.len() as f64 * epsilon * epsilon)
}

fn spacings<T: Real>(ic: &FieldSnapshot<T>) -> Result<Vec<f64>> {
    if !ic.is_uniform() {
        return Err(Error::config(
            "finite differences need uniformly spaced nodes",
        ));
    }
    ic.axes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if a.len() < 3 {
                return Err(Error::config(format!("axis {i} needs at least 3 nodes")));
            }
            let h = (a[a.len() - 1] - a[0]).to_f64().unwrap_or(f64::NAN) / (a.len() - 1) as f64;
            Ok(h)
        })
        .collect()
}

/// Step index for each requested output time.
fn output_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / dt).round();
        if t < 0.0 || (k * dt - t).abs() > 1e-9 * t.abs().max(dt) {
            return Err(Error::config(format!(
                "output time {t} is not a whole number of steps of {dt}"
            )));
        }
        steps.push(k as usize);
    }
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("output times must be non-decreasing"));
    }
    Ok(steps)
}

/// Neighbour indices along one axis of `n` nodes.
fn neighbours(i: usize, n: usize, boundary: Boundary) -> (usize, usize, usize) {
    match boundary {
        Boundary::NoFlux => (
            if i == 0 { 1 } else { i - 1 },
            i,
            if i == n - 1 { n - 2 } else { i + 1 },
        ),
        // node n-1 duplicates node 0
        Boundary::Periodic => {
            let m = n - 1;
            let c = i % m;
            ((c + m - 1) % m, c, (c + 1) % m)
        }
    }
}

/// `∇²φ` on a row-major 1-d or 2-d node grid.
fn laplacian<T: Real>(phi: &[T], shape: &[usize], inv_h2: &[T], boundary: Boundary, out: &mut [T]) {
    let two = T::lit(2.0);
    match *shape {
        [n] => {
            for i in 0..n {
                let (l, c, r) = neighbours(i, n, boundary);
                out[i] = inv_h2[0] * (phi[l] + phi[r] - two * phi[c]);
            }
        }
        [nx, ny] => {
            for i in 0..nx {
                let (il, ic, ir) = neighbours(i, nx, boundary);
                for j in 0..ny {
                    let (jl, jc, jr) = neighbours(j, ny, boundary);
                    let centre = phi[ic * ny + jc];
                    out[i * ny + j] = inv_h2[0]
                        * (phi[il * ny + jc] + phi[ir * ny + jc] - two * centre)
                        + inv_h2[1] * (phi[ic * ny + jl] + phi[ic * ny + jr] - two * centre);
                }
            }
        }
        _ => unreachable!("dimension checked by the caller"),
    }
}

/// Forward-Euler integration of `φ_t = ε²∇²φ − s·W′(φ)` from `ic`.
pub fn fd_solve<T: Real>(
    ic: &FieldSnapshot<T>,
    config: &FdConfig,
) -> Result<Vec<FieldSnapshot<T>>> {
    if !(config.epsilon > 0.0) || !(config.dt > 0.0) || !(config.potential_scale > 0.0) {
        return Err(Error::config(
            "epsilon, dt and the potential scale must be positive",
        ));
    }
    if ic.dim() == 0 || ic.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "{}-d finite differences",
            ic.dim()
        )));
    }
    let h = spacings(ic)?;
    let bound = stability_bound(&h, config.epsilon);
    if config.dt > bound {
        return Err(Error::config(format!(
            "dt = {} exceeds the explicit stability bound 0.9·h²/(2dε²) = {bound}",
            config.dt
        )));
    }
    if config.boundary == Boundary::Periodic {
        check_periodic(&ic.values)?;
    }
    let steps = output_steps(&config.output_times, config.dt)?;
    let inv_h2: Vec<T> = h.iter().map(|&v| T::lit(1.0 / (v * v))).collect();
    let eps2 = T::lit(config.epsilon * config.epsilon);
    let s = T::lit(config.potential_scale);
    let dt = T::lit(config.dt);

    let shape = ic.shape();
    let mut phi: Vec<T> = ic.values.iter().copied().collect();
    let mut lap = vec![T::zero(); phi.len()];
    let mut out = Vec::with_capacity(steps.len());
    let mut k = 0usize;
    for (&target, &t) in steps.iter().zip(&config.output_times) {
        while k < target {
            laplacian(&phi, &shape, &inv_h2, config.boundary, &mut lap);
            for (p, &l) in phi.iter_mut().zip(&lap) {
                *p = *p + dt * (eps2 * l - s * double_well_derivative(*p));
            }
            k += 1;
        }
        if let Some((i, _)) = phi.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "finite-difference solution".into(),
                index: format!("flat node {i} at step {k}"),
            });
        }
        let values = ArrayD::from_shape_vec(IxDyn(&shape), phi.clone()).expect("shape preserved");
        out.push(FieldSnapshot::new(ic.axes.clone(), values, T::lit(t))?);
    }
    Ok(out)
}

fn check_periodic<T: Real>(v: &ArrayD<T>) -> Result<()> {
    for axis in 0..v.ndim() {
        let n = v.shape()[axis];
        let first = v.index_axis(ndarray::Axis(axis), 0);
        let last = v.index_axis(ndarray::Axis(axis), n - 1);
        let tol = T::lit(1e-12);
        if Zip::from(&first)
            .and(&last)
            .fold(false, |bad, &a, &b| bad || (a - b).abs() > tol)
        {
            return Err(Error::config(format!(
                "periodic boundary: first and last nodes of axis {axis} differ"
            )));
        }
    }
    Ok(())
}

/// Discrete energy whose gradient flow the explicit scheme integrates:
/// trapezoid-weighted `s·W` plus `ε²/2` times squared edge differences.
pub fn discrete_energy<T: Real>(
    snap: &FieldSnapshot<T>,
    epsilon: f64,
    potential_scale: f64,
) -> Result<T> {
    let weights: Vec<Vec<T>> = snap.axes.iter().map(|a| trapezoid_weights(a)).collect();
    let wref: Vec<&[T]> = weights.iter().map(Vec::as_slice).collect();
    let s = T::lit(potential_scale);
    let pot = snap.values.mapv(|p| s * double_well(p));
    let mut e = tensor_quadrature(pot.view(), &wref)?;
    let half_eps2 = T::lit(0.5 * epsilon * epsilon);
    for axis in 0..snap.dim() {
        let n = snap.axes[axis].len();
        let h = (snap.axes[axis][n - 1] - snap.axes[axis][0]) / T::from_count(n - 1);
        let lo = snap
            .values
            .slice_axis(ndarray::Axis(axis), ndarray::Slice::from(0..n - 1));
        let hi = snap
            .values
            .slice_axis(ndarray::Axis(axis), ndarray::Slice::from(1..n));
        let mut sq = (&hi - &lo).mapv(|d| d * d / h);
        // edges carry the transverse trapezoid weights
        let mut w = wref.clone();
        let ones = vec![T::one(); n - 1];
        w[axis] = &ones;
        sq.mapv_inplace(|v| v * half_eps2);
        e += tensor_quadrature(sq.view(), &w)?;
    }
    Ok(e)
}

fn check_same_grid<T: Real>(a: &FieldSnapshot<T>, b: &FieldSnapshot<T>) -> Result<()> {
    if a.axes != b.axes {
        return Err(Error::shape(format!(
            "snapshots on different grids ({:?} vs {:?})",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `√∫(φ − φ_ref)²` with trapezoid weights on the node grid.
pub fn l2_difference<T: Real>(pred: &FieldSnapshot<T>, reference: &FieldSnapshot<T>) -> Result<T> {
    check_same_grid(pred, reference)?;
    let weights: Vec<Vec<T>> = pred.axes.iter().map(|a| trapezoid_weights(a)).collect();
    let wref: Vec<&[T]> = weights.iter().map(Vec::as_slice).collect();
    let mut sq = &pred.values - &reference.values;
    sq.mapv_inplace(|d| d * d);
    Ok(tensor_quadrature(sq.view(), &wref)?.sqrt())
}

/// Mean over snapshots of the L² distance to the reference.
pub fn sdmm_error<T: Real>(pred: &[FieldSnapshot<T>], reference: &[FieldSnapshot<T>]) -> Result<T> {
    if pred.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} predicted snapshots against {} reference snapshots",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no snapshots to compare".into()));
    }
    let mut total = T::zero();
    for (p, r) in pred.iter().zip(reference) {
        total += l2_difference(p, r)?;
    }
    Ok(total / T::from_count(pred.len()))
}

/// `|φ − φ_ref|` node by node.
pub fn abs_error_field<T: Real>(
    pred: &FieldSnapshot<T>,
    reference: &FieldSnapshot<T>,
) -> Result<FieldSnapshot<T>> {
    check_same_grid(pred, reference)?;
    let values = Zip::from(&pred.values)
        .and(&reference.values)
        .map_collect(|&a, &b| (a - b).abs());
    FieldSnapshot::new(pred.axes.clone(), values, pred.time)
}

/// Radius of the disc with the same area as the region `φ > 0`, using
/// `(1 + φ)/2` as the phase indicator.
pub fn equivalent_radius<T: Real>(snap: &FieldSnapshot<T>) -> Result<T> {
    let weights: Vec<Vec<T>> = snap.axes.iter().map(|a| trapezoid_weights(a)).collect();
    let wref: Vec<&[T]> = weights.iter().map(Vec::as_slice).collect();
    let half = T::lit(0.5);
    let ind = snap.values.mapv(|p| half * (T::one() + p));
    let area = tensor_quadrature(ind.view(), &wref)?;
    Ok((area / T::PI()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snapshot::linspace;

    fn grid2(n: usize, f: impl Fn(f64, f64) -> f64) -> FieldSnapshot<f64> {
        let axes = vec![linspace(0.0, 1.0, n), linspace(0.0, 1.0, n)];
        FieldSnapshot::from_fn(axes, 0.0, |p| f(p[0], p[1]))
    }

    fn cfg(dt: f64, times: Vec<f64>) -> FdConfig {
        FdConfig {
            epsilon: 0.01,
            dt,
            boundary: Boundary::NoFlux,
            potential_scale: 1.0,
            output_times: times,
        }
    }

    #[test]
    fn pure_phase_is_fixed() {
        let ic = grid2(17, |_, _| 1.0);
        let out = fd_solve(&ic, &cfg(1e-3, vec![0.0, 0.05])).unwrap();
        assert!(out[1].values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_state_follows_the_ode() {
        let ic = grid2(9, |_, _| 0.5);
        let dt = 1e-3;
        let out = fd_solve(&ic, &cfg(dt, vec![0.5])).unwrap();
        // scalar forward Euler of φ' = φ − φ³
        let mut p = 0.5;
        for _ in 0..500 {
            p += dt * (p - p * p * p);
        }
        assert!(out[0].values.iter().all(|&v| (v - p).abs() < 1e-14));
        assert!(p > 0.5 && p < 1.0);
    }

    #[test]
    fn unstable_step_is_rejected_with_bound() {
        let ic = grid2(33, |_, _| 0.0);
        let h = 1.0 / 32.0;
        let bound = 0.9 * h * h / (4.0 * 1e-4);
        let err = fd_solve(&ic, &cfg(bound * 1.01, vec![])).unwrap_err();
        assert!(err.to_string().contains("stability bound"), "{err}");
        assert!(fd_solve(&ic, &cfg(bound, vec![])).is_ok());
    }

    #[test]
    fn misaligned_output_time() {
        let ic = grid2(9, |_, _| 0.0);
        assert!(fd_solve(&ic, &cfg(1e-3, vec![0.0015])).is_err());
    }

    #[test]
    fn error_metrics() {
        let a = grid2(11, |x, y| (x * y).sin());
        assert_eq!(sdmm_error(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        let mut b = a.clone();
        b.values.mapv_inplace(|v| v + 0.2);
        let e = sdmm_error(&[b.clone(), b.clone()], &[a.clone(), a.clone()]).unwrap();
        assert!((e - 0.2).abs() < 1e-14);
        assert!(sdmm_error(&[b], &[]).is_err());

        let one = grid2(5, |_, _| 1.0);
        let minus = grid2(5, |_, _| -1.0);
        let err = abs_error_field(&minus, &one).unwrap();
        assert!(err.values.iter().all(|&v| v == 2.0));
        assert!(abs_error_field(&one, &one)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn discrete_energy_closed_forms() {
        let zero = grid2(9, |_, _| 0.0);
        assert!((discrete_energy(&zero, 0.01, 1.0).unwrap() - 0.25).abs() < 1e-15);
        // φ = x: trapezoid sum of W plus exactly ε²/2 from the edges
        let ramp = grid2(9, |x, _| x);
        let xs = linspace(0.0, 1.0, 9);
        let w = trapezoid_weights(&xs);
        let pot: f64 = xs.iter().zip(&w).map(|(x, w)| w * double_well(*x)).sum();
        let e = discrete_energy(&ramp, 0.1, 1.0).unwrap();
        assert!((e - pot - 0.005).abs() < 1e-14, "{e}");
    }

    #[test]
    fn periodic_requires_matching_ends() {
        let axes = vec![linspace(-1.0, 1.0, 65)];
        let ic = FieldSnapshot::from_fn(axes.clone(), 0.0, |p| p[0]);
        let mut c = cfg(1e-4, vec![0.01]);
        c.boundary = Boundary::Periodic;
        assert!(fd_solve(&ic, &c).is_err());
        let ic = FieldSnapshot::from_fn(axes, 0.0, |p| (std::f64::consts::PI * p[0]).cos());
        let out = fd_solve(&ic, &c).unwrap();
        let v = &out[0].values;
        assert_eq!(v[[0]], v[[64]]);
    }

    #[test]
    fn energy_decays_and_stays_bounded() {
        let ic = grid2(65, |x, y| (6.0 * x).sin() * (5.0 * y).cos());
        let h = 1.0 / 64.0;
        let dt = 0.5 * 0.9 * h * h / (4.0 * 1e-4);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 10.0 * dt).collect();
        let out = fd_solve(&ic, &cfg(dt, times)).unwrap();
        let e: Vec<f64> = out
            .iter()
            .map(|s| discrete_energy(s, 0.01, 1.0).unwrap())
            .collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0], "{e:?}");
        }
        for s in &out {
            assert!(s.max_abs() <= 1.0 + 1e-3);
        }
    }

    #[test]
    fn equivalent_radius_of_a_disc() {
        let r0 = 0.25;
        let s = grid2(257, |x, y| {
            let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
            ((r0 - r) / (2f64.sqrt() * 0.01)).tanh()
        });
        let r = equivalent_radius(&s).unwrap();
        assert!((r - r0).abs() < 2e-3, "{r}");
    }
}
