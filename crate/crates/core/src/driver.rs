//! Time stepping: fit the initial condition, then minimize one step at a time.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{sdmm_loss_and_gradient, EnergyParams, LossBreakdown};
use crate::optim::{lbfgs_minimize, LbfgsConfig, StopReason};
use crate::quadrature::QuadMesh;
use crate::scalar::Real;
use crate::sepnet::{fit_initial_condition, FitConfig, FitReport, SeparableField, Transform};
use crate::snapshot::FieldSnapshot;

pub const MIN_ELEMENTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub epsilon: f64,
    pub tau: f64,
    pub t_end: f64,
    /// Multiplies the double-well term.
    pub potential_scale: f64,
    /// `[lo, hi]` per axis; its length is the spatial dimension.
    pub domain: Vec<[f64; 2]>,
    pub elements: usize,
    pub quadrature_points: usize,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            epsilon: 0.01,
            tau: 2e-5,
            t_end: 2e-3,
            potential_scale: 1.0,
            domain: vec![[0.0, 1.0], [0.0, 1.0]],
            elements: 128,
            quadrature_points: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub transform: Transform,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![128; 4],
            rank: 256,
            transform: Transform::Tanh,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcKind {
    Star,
    Coarsening,
    Random,
    Constant,
    Spinn1d,
}

impl std::str::FromStr for IcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "star" => IcKind::Star,
            "coarsening" => IcKind::Coarsening,
            "random" => IcKind::Random,
            "constant" => IcKind::Constant,
            "spinn1d" => IcKind::Spinn1d,
            other => {
                return Err(Error::config(format!(
                    "unknown initial condition `{other}`"
                )))
            }
        })
    }
}

/// Points the initial condition is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitGrid {
    Nodes,
    Gauss,
    /// Nodes and Gauss points merged per axis.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: IcKind,
    /// Value of the constant initial condition.
    pub value: f64,
    pub seed: u64,
    pub fit_grid: FitGrid,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: IcKind::Star,
            value: 0.0,
            seed: 0,
            fit_grid: FitGrid::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Empty means nothing is written.
    pub dir: PathBuf,
    /// Node-grid snapshot every this many steps (0 disables); step 0 is
    /// always included when enabled.
    pub snapshot_stride: usize,
    /// Parameter checkpoint every this many steps (0 disables).
    pub checkpoint_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::new(),
            snapshot_stride: 1,
            checkpoint_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub initial: InitialSection,
    pub fit: FitConfig,
    pub step: LbfgsConfig,
    pub output: OutputSection,
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        self.problem.domain.len()
    }

    /// `N_t` with `N_t·τ = T` to 1e-12 relative.
    pub fn num_steps(&self) -> Result<usize> {
        let p = &self.problem;
        let n = (p.t_end / p.tau).round();
        if !(n >= 1.0) || (n * p.tau - p.t_end).abs() > 1e-12 * p.t_end.abs() {
            return Err(Error::config(format!(
                "t_end = {} is not a whole number of steps tau = {} (need N_t·τ = T)",
                p.t_end, p.tau
            )));
        }
        Ok(n as usize)
    }

    pub fn energy_params(&self) -> Result<EnergyParams> {
        EnergyParams::new(self.problem.epsilon, self.problem.tau)?
            .with_potential_scale(self.problem.potential_scale)
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.problem.domain.iter().map(|d| (d[0], d[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.domain.is_empty() {
            return Err(Error::config("domain needs at least one axis"));
        }
        if let Some(d) = p.domain.iter().find(|d| !(d[1] > d[0])) {
            return Err(Error::config(format!("empty domain interval {d:?}")));
        }
        if p.elements < MIN_ELEMENTS {
            return Err(Error::config(format!(
                "elements per axis must be at least {MIN_ELEMENTS}, got {}",
                p.elements
            )));
        }
        self.energy_params()?;
        self.num_steps()?;
        if self.network.rank == 0 {
            return Err(Error::config("network rank must be positive"));
        }
        if self.initial.kind == IcKind::Spinn1d && self.dim() != 1 {
            return Err(Error::config(
                "the spinn1d initial condition is one-dimensional",
            ));
        }
        if self.step.max_iters == 0 {
            return Err(Error::config("step.max_iters must be at least 1"));
        }
        crate::quadrature::gauss_rule::<f64>(p.quadrature_points)?;
        Ok(())
    }

    pub fn mesh<T: Real>(&self) -> Result<QuadMesh<T>> {
        let bounds: Vec<(T, T)> = self
            .bounds()
            .iter()
            .map(|&(a, b)| (T::lit(a), T::lit(b)))
            .collect();
        QuadMesh::new(
            &bounds,
            &vec![self.problem.elements; self.dim()],
            self.problem.quadrature_points,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub movement: f64,
    pub total: f64,
    pub iterations: usize,
    pub max_abs_phi: f64,
    pub stop: StopReason,
    pub wall_seconds: f64,
}

/// Initial-condition sampler on a tensor grid.
pub fn initial_condition<T: Real>(
    config: &ProblemConfig,
    axes: Vec<Vec<T>>,
) -> Result<FieldSnapshot<T>> {
    let ic = &config.initial;
    let bounds = config.bounds();
    if axes.len() != bounds.len() {
        return Err(Error::shape(format!(
            "{} axes for a {}-d problem",
            axes.len(),
            bounds.len()
        )));
    }
    let to_f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    Ok(match ic.kind {
        IcKind::Star => {
            if bounds.len() != 2 {
                return Err(Error::config(
                    "the star initial condition is two-dimensional",
                ));
            }
            let eps = config.problem.epsilon;
            let cx = 0.5 * (bounds[0].0 + bounds[0].1);
            let cy = 0.5 * (bounds[1].0 + bounds[1].1);
            FieldSnapshot::from_fn(axes, T::zero(), |p| {
                T::lit(star(to_f(p[0]) - cx, to_f(p[1]) - cy, eps))
            })
        }
        IcKind::Coarsening => {
            let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
            let d = bounds.len();
            let modes = 4usize;
            let coeffs: Vec<f64> = (0..modes.pow(d as u32))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            FieldSnapshot::from_fn(axes, T::zero(), |p| {
                let mut v = 0.0;
                for (c, &a) in coeffs.iter().enumerate() {
                    let mut term = a;
                    let mut rest = c;
                    for (i, &(lo, hi)) in bounds.iter().enumerate() {
                        let k = (rest % modes + 1) as f64;
                        rest /= modes;
                        let s = (to_f(p[i]) - lo) / (hi - lo);
                        term *= (k * std::f64::consts::PI * s).cos();
                    }
                    v += term;
                }
                T::lit(0.1 * v)
            })
        }
        IcKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
            let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
            let values = ArrayD::from_shape_simple_fn(ndarray::IxDyn(&shape), || {
                T::lit(rng.random_range(-0.1..0.1))
            });
            FieldSnapshot::new(axes, values, T::zero())?
        }
        IcKind::Constant => FieldSnapshot::from_fn(axes, T::zero(), |_| T::lit(ic.value)),
        IcKind::Spinn1d => {
            if bounds.len() != 1 {
                return Err(Error::config(
                    "the spinn1d initial condition is one-dimensional",
                ));
            }
            FieldSnapshot::from_fn(axes, T::zero(), |p| {
                let x = to_f(p[0]);
                T::lit(x * x * (std::f64::consts::PI * x).cos())
            })
        }
    })
}

/// Star-shaped interface of radius `0.25 + 0.1 cos 7θ` around the origin
/// of `(dx, dy)`.
pub fn star(dx: f64, dy: f64, epsilon: f64) -> f64 {
    let r = (dx * dx + dy * dy).sqrt();
    let theta = dy.atan2(dx);
    ((0.25 + 0.1 * (7.0 * theta).cos() - r) / (std::f64::consts::SQRT_2 * epsilon)).tanh()
}

/// Sorted union of two sorted coordinate lists.
pub fn merge_axes<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out: Vec<T> = a.iter().chain(b).copied().collect();
    out.sort_by(|x, y| x.partial_cmp(y).expect("finite coordinates"));
    out.dedup();
    out
}

/// Grid the initial condition is fitted on.
pub fn fit_axes<T: Real>(config: &ProblemConfig, mesh: &QuadMesh<T>) -> Vec<Vec<T>> {
    match config.initial.fit_grid {
        FitGrid::Nodes => mesh.node_axes(),
        FitGrid::Gauss => mesh.gauss_axes(),
        FitGrid::Union => mesh
            .node_axes()
            .iter()
            .zip(mesh.gauss_axes())
            .map(|(n, g)| merge_axes(n, &g))
            .collect(),
    }
}

/// Freshly initialized field for `config`.
pub fn new_field<T: Real>(config: &ProblemConfig) -> Result<SeparableField<T>> {
    let bounds: Vec<(T, T)> = config
        .bounds()
        .iter()
        .map(|&(a, b)| (T::lit(a), T::lit(b)))
        .collect();
    SeparableField::new(
        &bounds,
        &config.network.hidden,
        config.network.rank,
        config.network.transform,
        config.network.seed,
    )
}

/// A field fitted to the configured initial condition.
pub fn prepare<T: Real>(config: &ProblemConfig) -> Result<(SeparableField<T>, FitReport)> {
    config.validate()?;
    let mesh = config.mesh::<T>()?;
    let mut field = new_field(config)?;
    let target = initial_condition(config, fit_axes(config, &mesh))?;
    let report = fit_initial_condition(&mut field, &target, &config.fit)?;
    Ok((field, report))
}

#[derive(Debug, Clone)]
pub struct RunOutput<T: Real> {
    pub field: SeparableField<T>,
    pub fit: Option<FitReport>,
    /// Energy of the fitted initial field.
    pub initial_energy: f64,
    pub initial_max_abs_phi: f64,
    pub records: Vec<StepRecord>,
    /// Node-grid snapshots, step 0 first.
    pub snapshots: Vec<FieldSnapshot<T>>,
    /// Checkpoints written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Hooks for writing checkpoints while stepping.
pub trait Checkpointer<T: Real> {
    fn save(&mut self, step: usize, field: &SeparableField<T>) -> Result<PathBuf>;
}

/// Checkpointer that keeps nothing.
pub struct NoCheckpoints;

impl<T: Real> Checkpointer<T> for NoCheckpoints {
    fn save(&mut self, _: usize, _: &SeparableField<T>) -> Result<PathBuf> {
        Err(Error::config("checkpointing is disabled"))
    }
}

/// Fits the initial condition and steps to `t_end`.
pub fn run<T: Real>(config: &ProblemConfig) -> Result<RunOutput<T>> {
    let (field, fit) = prepare(config)?;
    let mut out = run_from(config, field, &mut NoCheckpoints)?;
    out.fit = Some(fit);
    Ok(out)
}

/// Steps from an already fitted field.
pub fn run_from<T: Real>(
    config: &ProblemConfig,
    mut field: SeparableField<T>,
    checkpoints: &mut dyn Checkpointer<T>,
) -> Result<RunOutput<T>> {
    config.validate()?;
    let n_steps = config.num_steps()?;
    let params = config.energy_params()?;
    let mesh = config.mesh::<T>()?;
    let weights = mesh.weight_grid();
    let node_axes = mesh.node_axes();
    let tau = config.problem.tau;
    let to_f = |v: T| v.to_f64().unwrap_or(f64::NAN);

    let mut x = field.params();
    let first = sdmm_loss_and_gradient(
        &field,
        &ArrayD::zeros(ndarray::IxDyn(&mesh.gauss_shape())),
        &mesh,
        &weights,
        &params,
    )?;
    let mut previous = first.field.values.clone();
    let initial_energy = to_f(first.loss.energy);
    let initial_max_abs_phi = to_f(first.field.max_abs());

    let stride = config.output.snapshot_stride;
    let mut snapshots = Vec::new();
    if stride > 0 {
        snapshots.push(FieldSnapshot::new(
            node_axes.clone(),
            field.evaluate_grid(&node_axes)?,
            T::zero(),
        )?);
    }
    let mut records = Vec::with_capacity(n_steps);
    let mut written: Vec<PathBuf> = Vec::new();

    for step in 1..=n_steps {
        let started = Instant::now();
        let mut probe = field.clone();
        let mut last: Option<(Vec<T>, LossBreakdown<T>, ArrayD<T>)> = None;
        let report = lbfgs_minimize(
            |p, g| {
                probe.set_params(p)?;
                let ev = sdmm_loss_and_gradient(&probe, &previous, &mesh, &weights, &params)?;
                g.copy_from_slice(&ev.gradient);
                let total = ev.loss.total;
                last = Some((p.to_vec(), ev.loss, ev.field.values));
                Ok(total)
            },
            &mut x,
            &config.step,
        );
        let report = match report {
            Ok(r) => r,
            Err(e) if e.is_divergence() => {
                return Err(Error::StepDiverged {
                    step,
                    checkpoint: written.last().cloned(),
                })
            }
            Err(e) => return Err(e),
        };
        field.set_params(&x)?;
        // The accepted point was the last evaluation only if the line search
        // ended on it; otherwise evaluate once more.
        let (loss, values) = match last {
            Some((p, loss, values)) if p == x => (loss, values),
            _ => {
                let ev = sdmm_loss_and_gradient(&field, &previous, &mesh, &weights, &params)?;
                (ev.loss, ev.field.values)
            }
        };
        if !to_f(loss.total).is_finite() {
            return Err(Error::StepDiverged {
                step,
                checkpoint: written.last().cloned(),
            });
        }
        let max_abs = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        previous = values;
        records.push(StepRecord {
            step,
            time: step as f64 * tau,
            energy: to_f(loss.energy),
            movement: to_f(loss.movement),
            total: to_f(loss.total),
            iterations: report.iterations,
            max_abs_phi: to_f(max_abs),
            stop: report.reason,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if stride > 0 && step % stride == 0 {
            snapshots.push(FieldSnapshot::new(
                node_axes.clone(),
                field.evaluate_grid(&node_axes)?,
                T::lit(step as f64 * tau),
            )?);
        }
        let cs = config.output.checkpoint_stride;
        if cs > 0 && step % cs == 0 {
            written.push(checkpoints.save(step, &field)?);
        }
    }
    Ok(RunOutput {
        field,
        fit: None,
        initial_energy,
        initial_max_abs_phi,
        records,
        snapshots,
        checkpoints: written,
    })
}
