//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.

use std::fs;
use std::time::Instant;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdmm::driver::{prepare, run_from, IcKind, NoCheckpoints, ProblemConfig, RunOutput};
use sdmm::functional::{sdmm_loss_and_gradient, EnergyParams};
use sdmm::io;
use sdmm::quadrature::QuadMesh;
use sdmm::reference_fd::{
    discrete_energy, equivalent_radius, fd_solve, stability_bound, Boundary, FdConfig,
};
use sdmm::sepnet::{SeparableField, Transform};
use sdmm::snapshot::{linspace, FieldSnapshot};
use sdmm::spinn_baseline::{self, SpinnConfig};
use sdmm::{Field, Result};

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict, started: Instant) {
    println!(
        "{} {:>2} {}: {} [{:.0}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.id,
        v.name,
        v.detail,
        started.elapsed().as_secs_f64()
    );
}

fn error_verdict(id: usize, name: &'static str, e: sdmm::Error) -> Verdict {
    Verdict {
        id,
        name,
        pass: false,
        detail: format!("error: {e}"),
    }
}

fn quadrature_exactness() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for elements in [1, 3, 8] {
        let mesh = QuadMesh::<f64>::uniform(2, 0.0, 1.0, elements, 2)?;
        for a in 0..=3 {
            for b in 0..=3 {
                let got = mesh.integrate_fn(|p| p[0].powi(a) * p[1].powi(b))?;
                let exact = 1.0 / f64::from((a + 1) * (b + 1));
                worst = worst.max((got - exact).abs());
            }
        }
    }
    Ok(Verdict {
        id: 1,
        name: "quadrature exactness",
        pass: worst <= 1e-13,
        detail: format!("max |error| over x^a y^b, a,b <= 3: {worst:.2e} (tol 1e-13)"),
    })
}

fn ad_correctness() -> Result<Verdict> {
    let mesh = QuadMesh::<f64>::uniform(2, 0.0, 1.0, 4, 2)?;
    let weights = mesh.weight_grid();
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let transform = if k % 2 == 0 {
            Transform::Tanh
        } else {
            Transform::Identity
        };
        let mut field = SeparableField::<f64>::new(&[(0.0, 1.0); 2], &[8], 4, transform, k)?;
        let previous = ArrayD::from_shape_simple_fn(IxDyn(&mesh.gauss_shape()), || {
            rng.random_range(-1.0..1.0)
        });
        let params = EnergyParams::new(rng.random_range(0.01..0.1), rng.random_range(1e-3..1e-1))?
            .with_potential_scale(rng.random_range(0.5..5.0))?;
        let grad = sdmm_loss_and_gradient(&field, &previous, &mesh, &weights, &params)?.gradient;
        let p0 = field.params();
        let h = 1e-6;
        let mut fd = vec![0.0; p0.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut p = p0.clone();
            p[i] += h;
            field.set_params(&p)?;
            let up = sdmm_loss_and_gradient(&field, &previous, &mesh, &weights, &params)?
                .loss
                .total;
            p[i] -= 2.0 * h;
            field.set_params(&p)?;
            let dn = sdmm_loss_and_gradient(&field, &previous, &mesh, &weights, &params)?
                .loss
                .total;
            *slot = (up - dn) / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let err = grad
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (g, f)| m.max((g - f).abs()));
        worst = worst.max(err / scale);
    }
    Ok(Verdict {
        id: 2,
        name: "AD correctness",
        pass: worst <= 1e-6,
        detail: format!(
            "max relative gradient error over 100 configurations: {worst:.2e} (tol 1e-6)"
        ),
    })
}

/// Star problem shared by criteria 3 to 7.
fn star_config(transform: Transform) -> ProblemConfig {
    let mut c = ProblemConfig::default();
    c.problem.epsilon = 0.01;
    c.problem.tau = 2e-5;
    c.problem.t_end = 2e-3;
    c.problem.elements = 128;
    c.network.hidden = vec![128; 3];
    c.network.rank = 128;
    c.network.transform = transform;
    c.initial.kind = IcKind::Star;
    c.fit.adam_iters = 0;
    c.fit.init_rank = 128;
    c.fit.init_iters = 1000;
    c.fit.lbfgs_iters = 4000;
    c.fit.lbfgs_memory = 50;
    c.fit.tolerance = 1e-9;
    c.step.max_iters = 30;
    c.step.memory = 50;
    c.output.snapshot_stride = 1;
    c
}

fn energy_stability(run: &RunOutput<f64>) -> Verdict {
    let mut prev = run.initial_energy;
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for r in &run.records {
        let excess = r.energy - prev;
        worst = worst.max(excess / (1.0 + prev));
        ok &= excess <= 1e-8 * (1.0 + prev);
        prev = r.energy;
    }
    Verdict {
        id: 3,
        name: "energy stability",
        pass: ok && run.records.len() == 100,
        detail: format!(
            "{} steps, energy {:.8e} -> {:.8e}, max step increase / (1 + energy) = {worst:.2e} (slack 1e-8)",
            run.records.len(),
            run.initial_energy,
            prev
        ),
    }
}

fn boundedness(with_tanh: &RunOutput<f64>, base: &ProblemConfig) -> Result<Verdict> {
    let bounded = with_tanh
        .records
        .iter()
        .map(|r| r.max_abs_phi)
        .fold(with_tanh.initial_max_abs_phi, f64::max);
    let mut c = base.clone();
    c.network.transform = Transform::Identity;
    c.problem.t_end = 10.0 * c.problem.tau;
    c.fit.init_iters = 300;
    c.fit.lbfgs_iters = 500;
    let (field, _) = prepare::<f64>(&c)?;
    let free = run_from(&c, field, &mut NoCheckpoints)?;
    let unbounded = free
        .records
        .iter()
        .map(|r| r.max_abs_phi)
        .fold(0.0, f64::max);
    Ok(Verdict {
        id: 4,
        name: "boundedness",
        pass: bounded < 1.0 && unbounded > 1.0,
        detail: format!(
            "with tanh 1 - max |phi| = {:.3e} (> 0 required), without tanh over {} steps max |phi| = {unbounded:.6} (> 1 required)",
            1.0 - bounded,
            free.records.len()
        ),
    })
}

fn accuracy_and_energy(run: &RunOutput<f64>, c: &ProblemConfig) -> Result<(Verdict, Verdict)> {
    let reference = io::reference_run(c, 513, None, Boundary::NoFlux)?;
    let cmp = io::compare_snapshots(
        &run.snapshots,
        &reference,
        c.problem.epsilon,
        c.problem.potential_scale,
    )?;
    let accuracy = Verdict {
        id: 5,
        name: "accuracy vs oracle",
        pass: cmp.e_sdmm < 5e-4,
        detail: format!(
            "E_SDMM = {:.4e} over {} steps (tol 5e-4)",
            cmp.e_sdmm,
            run.records.len()
        ),
    };
    let mut worst = 0.0f64;
    for (k, r) in reference.iter().enumerate() {
        let e_sdmm = if k == 0 {
            run.initial_energy
        } else {
            run.records[k - 1].energy
        };
        let e_fd = discrete_energy(r, c.problem.epsilon, c.problem.potential_scale)?;
        worst = worst.max(((e_sdmm - e_fd) / e_fd).abs());
    }
    let energy = Verdict {
        id: 6,
        name: "energy agreement",
        pass: worst < 0.01,
        detail: format!(
            "max |E_SDMM - E_FD| / E_FD over {} times: {:.4}% (tol 1%)",
            reference.len(),
            100.0 * worst
        ),
    };
    Ok((accuracy, energy))
}

fn tau_convergence(field: &Field, base: &ProblemConfig) -> Result<Verdict> {
    let taus = [2e-5, 1e-5, 5e-6];
    let mut curves = Vec::new();
    for &tau in &taus {
        let mut c = base.clone();
        c.problem.tau = tau;
        c.problem.t_end = 1e-3;
        c.output.snapshot_stride = 0;
        let run = run_from(&c, field.clone(), &mut NoCheckpoints)?;
        let stride = (taus[0] / tau).round() as usize;
        let sampled: Vec<f64> = run
            .records
            .iter()
            .skip(stride - 1)
            .step_by(stride)
            .map(|r| r.energy)
            .collect();
        curves.push(sampled);
    }
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let d1 = sup(&curves[0], &curves[1]);
    let d2 = sup(&curves[1], &curves[2]);
    Ok(Verdict {
        id: 7,
        name: "tau convergence",
        pass: d1 > d2 && d2 > 0.0 && curves.iter().all(|c| c.len() == 50),
        detail: format!("sup|E_2e-5 - E_1e-5| = {d1:.4e} > sup|E_1e-5 - E_5e-6| = {d2:.4e}"),
    })
}

fn coarsening_config(transform: Transform, iters: usize) -> ProblemConfig {
    let mut c = ProblemConfig::default();
    c.problem.epsilon = 0.01;
    c.problem.tau = 1e-2;
    c.problem.t_end = 2.0;
    c.problem.elements = 64;
    c.network.hidden = vec![64; 3];
    c.network.rank = 64;
    c.network.transform = transform;
    c.initial.kind = IcKind::Coarsening;
    c.initial.seed = 7;
    c.fit.adam_iters = 0;
    c.fit.init_rank = 16;
    c.fit.init_iters = 500;
    c.fit.lbfgs_iters = 1000;
    c.fit.lbfgs_memory = 50;
    c.fit.tolerance = 1e-10;
    c.step.max_iters = iters;
    c.step.memory = 50;
    c.output.snapshot_stride = 10;
    c
}

fn tanh_comparison() -> Result<Verdict> {
    let mut errors = Vec::new();
    let mut iterations = Vec::new();
    let mut reference = None;
    for (transform, iters) in [(Transform::Tanh, 30), (Transform::Identity, 100)] {
        let c = coarsening_config(transform, iters);
        if reference.is_none() {
            let spacing = [1.0 / 256.0; 2];
            let dt = 1e-3f64.min(0.5 * stability_bound(&spacing, c.problem.epsilon) / 0.9);
            reference = Some(io::reference_run(&c, 257, Some(dt), Boundary::NoFlux)?);
        }
        let (field, _) = prepare::<f64>(&c)?;
        let run = run_from(&c, field, &mut NoCheckpoints)?;
        let cmp = io::compare_snapshots(
            &run.snapshots,
            reference.as_ref().unwrap(),
            c.problem.epsilon,
            c.problem.potential_scale,
        )?;
        errors.push(cmp.e_sdmm);
        iterations.push(run.records.iter().map(|r| r.iterations).sum::<usize>());
    }
    Ok(Verdict {
        id: 8,
        name: "tanh vs no tanh",
        pass: errors[0] < errors[1] && 2 * iterations[0] <= iterations[1],
        detail: format!(
            "E_SDMM tanh {:.4e} ({} iterations) vs identity {:.4e} ({} iterations)",
            errors[0], iterations[0], errors[1], iterations[1]
        ),
    })
}

fn baseline_failure() -> Result<Verdict> {
    let spinn = SpinnConfig {
        adam_iters: 3000,
        lbfgs_iters: 300,
        ..SpinnConfig::default()
    };
    let refs = spinn_baseline::reference_solution(&spinn, 513, 1e-5, &[1.0])?;
    let at_one = &refs[0];
    let mut field = spinn_baseline::new_spacetime_field::<f64>(&spinn)?;
    spinn_baseline::train(&mut field, &spinn)?;
    let spinn_err =
        spinn_baseline::relative_l2(&spinn_baseline::slice_at(&field, at_one, 1.0)?, at_one)?;

    let c = spinn1d_config();
    let (field, _) = prepare::<f64>(&c)?;
    let run = run_from(&c, field, &mut NoCheckpoints)?;
    let last = run.snapshots.last().expect("final snapshot");
    let last = FieldSnapshot::new(at_one.axes.clone(), last.values.clone(), last.time)?;
    let sdmm_err = spinn_baseline::relative_l2(&last, at_one)?;
    Ok(Verdict {
        id: 9,
        name: "SPINN baseline failure",
        pass: spinn_err > 0.1 && sdmm_err < 0.01,
        detail: format!(
            "relative L2 at t = 1: space-time PINN {spinn_err:.4} (> 0.1 required), SDMM {sdmm_err:.4} (< 0.01 required)"
        ),
    })
}

fn spinn1d_config() -> ProblemConfig {
    let mut c = ProblemConfig::default();
    c.problem.domain = vec![[-1.0, 1.0]];
    c.problem.epsilon = 0.01;
    c.problem.potential_scale = 5.0;
    c.problem.elements = 512;
    c.problem.tau = 5e-3;
    c.problem.t_end = 1.0;
    c.network.hidden = vec![32; 3];
    c.network.rank = 64;
    c.network.transform = Transform::Identity;
    c.initial.kind = IcKind::Spinn1d;
    c.fit.adam_iters = 0;
    c.fit.init_rank = 1;
    c.fit.init_iters = 1000;
    c.fit.lbfgs_iters = 500;
    c.fit.lbfgs_memory = 50;
    c.fit.tolerance = 1e-14;
    c.step.max_iters = 300;
    c.step.memory = 50;
    c.output.snapshot_stride = 200;
    c
}

fn radius_law() -> Result<Verdict> {
    let (eps, r0, t_end, nodes) = (0.01, 0.25, 0.02, 513);
    let axes = vec![linspace(0.0, 1.0, nodes), linspace(0.0, 1.0, nodes)];
    let ic = FieldSnapshot::from_fn(axes, 0.0, |p: &[f64]| {
        let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
        ((r0 - r) / (std::f64::consts::SQRT_2 * eps)).tanh()
    });
    let h = 1.0 / (nodes - 1) as f64;
    let half_bound = 0.5 * stability_bound(&[h, h], eps) / 0.9;
    let dt = t_end / (t_end / half_bound).ceil();
    let out = fd_solve(
        &ic,
        &FdConfig {
            epsilon: eps,
            dt,
            boundary: Boundary::NoFlux,
            potential_scale: 1.0,
            output_times: vec![0.0, t_end],
        },
    )?;
    let start = equivalent_radius(&out[0])?;
    let end = equivalent_radius(&out[1])?;
    let predicted = 2.0 * eps * eps * t_end;
    let measured = start * start - end * end;
    let ratio = measured / predicted;
    Ok(Verdict {
        id: 10,
        name: "FD radius law",
        pass: (ratio - 1.0).abs() < 0.03,
        detail: format!(
            "R(0) = {start:.6}, R(T) = {end:.6}, measured R0^2 - R^2 = {measured:.4e} vs 2 eps^2 T = {predicted:.4e} (ratio {ratio:.4}, tol 3%)"
        ),
    })
}

fn reproducibility() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut c = ProblemConfig::default();
    c.problem.elements = 32;
    c.problem.tau = 1e-4;
    c.problem.t_end = 5e-4;
    c.network.hidden = vec![16, 16];
    c.network.rank = 8;
    c.initial.kind = IcKind::Random;
    c.initial.seed = 11;
    c.fit.adam_iters = 200;
    c.fit.lbfgs_iters = 100;
    c.output.checkpoint_stride = 5;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (_, files) = io::run_to_dir(&c, &a)?;
    let again = io::load_config(&a.join(io::MANIFEST_FILE))?;
    let mut expected = c.clone();
    expected.output.dir = a.clone();
    let same_config = again == expected;
    io::run_to_dir(&again, &b)?;
    let mut differing = Vec::new();
    for name in &files {
        if fs::read(a.join(name))? != fs::read(b.join(name))? {
            differing.push(name.clone());
        }
    }
    Ok(Verdict {
        id: 11,
        name: "reproducibility",
        pass: same_config && differing.is_empty() && files.len() >= 7,
        detail: format!(
            "{} output files compared bitwise, {} differ; manifest reproduces config: {same_config}",
            files.len(),
            differing.len()
        ),
    })
}

/// Criterion ids named on the command line, or all of them.
fn selected() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if picked.is_empty() {
        (1..=11).collect()
    } else {
        picked
    }
}

fn main() {
    let suite = Instant::now();
    let only = selected();
    let want = |id: usize| only.contains(&id);
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict, t: Instant| {
        report(&v, t);
        verdicts.push(v.pass);
    };

    let t = Instant::now();
    if want(1) {
        record(
            quadrature_exactness().unwrap_or_else(|e| error_verdict(1, "quadrature exactness", e)),
            t,
        );
    }
    let t = Instant::now();
    if want(2) {
        record(
            ad_correctness().unwrap_or_else(|e| error_verdict(2, "AD correctness", e)),
            t,
        );
    }

    let t = Instant::now();
    let star = star_config(Transform::Tanh);
    if (3..=7).any(want) {
        match prepare::<f64>(&star).and_then(|(field, fit)| {
            println!(
                "     star fit: mse {:.3e} ({} L-BFGS iterations) [{:.0}s]",
                fit.mse,
                fit.lbfgs_iters,
                t.elapsed().as_secs_f64()
            );
            let run = run_from(&star, field.clone(), &mut NoCheckpoints)?;
            Ok((field, run))
        }) {
            Ok((field, run)) => {
                if want(3) {
                    record(energy_stability(&run), t);
                }
                let t = Instant::now();
                if want(4) {
                    record(
                        boundedness(&run, &star)
                            .unwrap_or_else(|e| error_verdict(4, "boundedness", e)),
                        t,
                    );
                }
                let t = Instant::now();
                if want(5) || want(6) {
                    match accuracy_and_energy(&run, &star) {
                        Ok((a, e)) => {
                            record(a, t);
                            record(e, t);
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            record(error_verdict(5, "accuracy vs oracle", e), t);
                            record(
                                Verdict {
                                    id: 6,
                                    name: "energy agreement",
                                    pass: false,
                                    detail: format!("error: {msg}"),
                                },
                                t,
                            );
                        }
                    }
                }
                drop(run);
                let t = Instant::now();
                if want(7) {
                    record(
                        tau_convergence(&field, &star)
                            .unwrap_or_else(|e| error_verdict(7, "tau convergence", e)),
                        t,
                    );
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for (id, name) in [
                    (3, "energy stability"),
                    (4, "boundedness"),
                    (5, "accuracy vs oracle"),
                    (6, "energy agreement"),
                    (7, "tau convergence"),
                ] {
                    if want(id) {
                        record(
                            Verdict {
                                id,
                                name,
                                pass: false,
                                detail: format!("star run failed: {msg}"),
                            },
                            t,
                        );
                    }
                }
            }
        }
    }

    let t = Instant::now();
    if want(8) {
        record(
            tanh_comparison().unwrap_or_else(|e| error_verdict(8, "tanh vs no tanh", e)),
            t,
        );
    }
    let t = Instant::now();
    if want(9) {
        record(
            baseline_failure().unwrap_or_else(|e| error_verdict(9, "SPINN baseline failure", e)),
            t,
        );
    }
    let t = Instant::now();
    if want(10) {
        record(
            radius_law().unwrap_or_else(|e| error_verdict(10, "FD radius law", e)),
            t,
        );
    }
    let t = Instant::now();
    if want(11) {
        record(
            reproducibility().unwrap_or_else(|e| error_verdict(11, "reproducibility", e)),
            t,
        );
    }

    let passed = verdicts.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        verdicts.len(),
        suite.elapsed().as_secs_f64()
    );
}
