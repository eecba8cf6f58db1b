//! Adam and L-BFGS minimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Inner product summed left to right, so results do not depend on
/// vectorization choices.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

fn inf_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn first_non_finite<T: Real>(a: &[T]) -> Option<usize> {
    a.iter().position(|v| !v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state has {} entries, got {} params and {} gradient entries",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = first_non_finite(grad) {
            return Err(Error::Diverged {
                iteration: self.step as usize,
                reason: format!("non-finite gradient entry {i}"),
            });
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = one - T::lit(c.beta1.powi(self.step as i32));
        let bc2 = one - T::lit(c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 30,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradTol,
    MaxIters,
    LineSearchFailed,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::GradTol => "grad-tol",
            StopReason::MaxIters => "max-iters",
            StopReason::LineSearchFailed => "line-search-failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport<T> {
    pub initial_loss: T,
    pub loss: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Loss after every accepted step, starting with the initial loss.
    pub history: Vec<T>,
}

/// Curvature pairs of the limited-memory inverse Hessian.
#[derive(Debug, Clone)]
pub struct LbfgsState<T> {
    pairs: std::collections::VecDeque<(Vec<T>, Vec<T>, T)>,
    memory: usize,
    pub iterations: usize,
}

impl<T: Real> LbfgsState<T> {
    pub fn new(memory: usize) -> Self {
        LbfgsState {
            pairs: std::collections::VecDeque::with_capacity(memory),
            memory: memory.max(1),
            iterations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stores `(s, y)` if `sᵀy > 0`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<T>, y: Vec<T>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > T::zero()) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, T::one() / sy));
        true
    }

    /// Two-loop recursion: returns `-H g`.
    pub fn direction(&self, g: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alpha = vec![T::zero(); self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = *rho * dot(s, &q);
            alpha[k] = a;
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * *yi;
            }
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = *rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha[k] - b) * *si;
            }
        }
        for qi in q.iter_mut() {
            *qi = -*qi;
        }
        q
    }
}

struct Probe<T> {
    alpha: T,
    f: T,
    dg: T,
    x: Vec<T>,
    g: Vec<T>,
}

/// Minimizes `f` from `params` with L-BFGS and a strong-Wolfe line search.
///
/// `f(x, grad)` returns the loss and writes the gradient. A non-finite trial
/// value inside the line search only shrinks the step; a non-finite value at
/// the starting point is an error. Line-search exhaustion ends the run with
/// the best point found and `converged = false`.
pub fn lbfgs_minimize<T, F>(
    mut f: F,
    params: &mut [T],
    config: &LbfgsConfig,
) -> Result<LbfgsReport<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> Result<T>,
{
    if config.max_iters == 0 {
        return Err(Error::config("L-BFGS needs max_iters >= 1"));
    }
    let n = params.len();
    let mut g = vec![T::zero(); n];
    let mut fx = f(params, &mut g)?;
    let mut evaluations = 1;
    if !fx.is_finite() || first_non_finite(&g).is_some() {
        return Err(Error::Diverged {
            iteration: 0,
            reason: "non-finite loss or gradient at the starting point".into(),
        });
    }
    let initial_loss = fx;
    let mut history = vec![fx];
    let mut state = LbfgsState::new(config.memory);
    let tol = T::lit(config.grad_tol);
    let mut reason = StopReason::MaxIters;
    let mut iterations = 0;

    while iterations < config.max_iters {
        if inf_norm(&g) < tol {
            reason = StopReason::GradTol;
            break;
        }
        let mut d = state.direction(&g);
        let mut dg0 = dot(&d, &g);
        if !(dg0 < T::zero()) {
            // Stale curvature; restart from steepest descent.
            state = LbfgsState::new(config.memory);
            d = g.iter().map(|v| -*v).collect();
            dg0 = dot(&d, &g);
        }
        let alpha0 = if state.is_empty() {
            T::one().min(T::one() / inf_norm(&g))
        } else {
            T::one()
        };
        let (probe, evals) = strong_wolfe(&mut f, params, fx, dg0, &d, alpha0, config)?;
        evaluations += evals;
        let Some(p) = probe else {
            reason = StopReason::LineSearchFailed;
            break;
        };
        let s: Vec<T> =
            p.x.iter()
                .zip(params.iter())
                .map(|(a, b)| *a - *b)
                .collect();
        let y: Vec<T> = p.g.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        state.push(s, y);
        params.copy_from_slice(&p.x);
        g = p.g;
        fx = p.f;
        iterations += 1;
        state.iterations = iterations;
        history.push(fx);
    }
    if reason == StopReason::MaxIters && inf_norm(&g) < tol {
        reason = StopReason::GradTol;
    }
    Ok(LbfgsReport {
        initial_loss,
        loss: fx,
        iterations,
        evaluations,
        converged: reason == StopReason::GradTol,
        reason,
        history,
    })
}

/// Strong-Wolfe line search with bracketing and cubic-interpolation zoom.
/// Returns the accepted point, or `None` when no Armijo point was found.
/// If the budget runs out while a bracket holds an Armijo point better than
/// the start, that point is returned.
fn strong_wolfe<T, F>(
    f: &mut F,
    x0: &[T],
    f0: T,
    dg0: T,
    d: &[T],
    alpha_init: T,
    cfg: &LbfgsConfig,
) -> Result<(Option<Probe<T>>, usize)>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> Result<T>,
{
    let c1 = T::lit(cfg.c1);
    let c2 = T::lit(cfg.c2);
    let mut evals = 0;
    let mut eval = |alpha: T, evals: &mut usize| -> Result<Probe<T>> {
        let x: Vec<T> = x0.iter().zip(d).map(|(a, b)| *a + alpha * *b).collect();
        let mut g = vec![T::zero(); x.len()];
        let fv = f(&x, &mut g)?;
        *evals += 1;
        let dg = dot(&g, d);
        let ok = fv.is_finite() && dg.is_finite();
        Ok(Probe {
            alpha,
            f: if ok { fv } else { T::lit(f64::INFINITY) },
            dg: if ok { dg } else { T::lit(f64::INFINITY) },
            x,
            g,
        })
    };

    let start = Probe {
        alpha: T::zero(),
        f: f0,
        dg: dg0,
        x: x0.to_vec(),
        g: Vec::new(),
    };
    let mut prev = start;
    let mut alpha = alpha_init;
    let mut first = true;
    let two = T::lit(2.0);

    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_line_search {
            return Ok((accept_if_better(prev, f0), evals));
        }
        let cur = eval(alpha, &mut evals)?;
        if !cur.f.is_finite() {
            // Overshoot into a non-finite region: treat as a bracket end.
            break (prev, cur);
        }
        if cur.f > f0 + c1 * alpha * dg0 || (!first && cur.f >= prev.f) {
            break (prev, cur);
        }
        if cur.dg.abs() <= -c2 * dg0 {
            return Ok((Some(cur), evals));
        }
        if cur.dg >= T::zero() {
            break (cur, prev);
        }
        first = false;
        let next = alpha * two;
        prev = cur;
        alpha = next;
    };

    // Zoom phase: `lo` satisfies Armijo and has the lowest value so far.
    loop {
        if evals >= cfg.max_line_search {
            return Ok((accept_if_better(lo, f0), evals));
        }
        let a = interpolate(&lo, &hi);
        let width = (hi.alpha - lo.alpha).abs();
        if width <= T::EPSILON * lo.alpha.abs().max(T::one()) {
            return Ok((accept_if_better(lo, f0), evals));
        }
        let cur = eval(a, &mut evals)?;
        if cur.f > f0 + c1 * a * dg0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dg.abs() <= -c2 * dg0 {
                return Ok((Some(cur), evals));
            }
            if cur.dg * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
    }
}

fn accept_if_better<T: Real>(p: Probe<T>, f0: T) -> Option<Probe<T>> {
    (p.alpha > T::zero() && p.f < f0 && !p.g.is_empty()).then_some(p)
}

/// Minimizer of the cubic through both ends, safeguarded to the interior of
/// the bracket; bisection when the cubic is unusable.
fn interpolate<T: Real>(lo: &Probe<T>, hi: &Probe<T>) -> T {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = (a + b) * T::lit(0.5);
    if !hi.f.is_finite() || !hi.dg.is_finite() {
        return mid;
    }
    let d1 = lo.dg + hi.dg - T::lit(3.0) * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dg * hi.dg;
    if !(disc >= T::zero()) {
        return mid;
    }
    let sign = if b > a { T::one() } else { -T::one() };
    let d2 = sign * disc.sqrt();
    let t = b - (b - a) * ((hi.dg + d2 - d1) / (hi.dg - lo.dg + T::lit(2.0) * d2));
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = T::lit(0.1) * (right - left);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}
