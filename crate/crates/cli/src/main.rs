use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sdmm::driver::{initial_condition, prepare, ProblemConfig};
use sdmm::io;
use sdmm::reference_fd::{discrete_energy, Boundary};
use sdmm::spinn_baseline::{self, SpinnConfig, FIGURE_TIMES};
use sdmm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sdmm",
    version,
    about = "Allen-Cahn gradient flows with separable neural fields"
)]
struct Cli {
    /// Worker threads for matrix products.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Noflux,
    Periodic,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the initial condition and step to the final time.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference reference at the run's snapshot times.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Nodes per axis.
        #[arg(long, default_value_t = 513)]
        nodes: usize,
        /// Explicit step; defaults to half the stability bound.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Noflux)]
        boundary: BoundaryArg,
    },
    /// Train the space-time PINN baseline and write the figure data.
    Baseline {
        /// TOML file with baseline settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 513)]
        reference_nodes: usize,
        #[arg(long, default_value_t = 1e-5)]
        reference_dt: f64,
    },
    /// Error and energy difference between two snapshot directories.
    Compare {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Supplies epsilon and the potential scale; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the per-snapshot table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the initial condition only.
    FitIc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // read by the matrix-product kernels on first use
        std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
    }
    match execute(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_divergence() {
        3
    } else {
        match e {
            Error::Config(_)
            | Error::Format(_)
            | Error::Shape(_)
            | Error::EmptyInput(_)
            | Error::Unsupported(_) => 2,
            _ => 1,
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ProblemConfig> {
    let mut c = io::load_config(path)?;
    if let Some(s) = seed {
        c.network.seed = s;
        c.initial.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn execute(command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Run { config, out } => {
            let c = load(&config, seed)?;
            let dir = out.unwrap_or_else(|| c.output.dir.clone());
            if dir.as_os_str().is_empty() {
                return Err(Error::Config(
                    "no output directory: pass --out or set output.dir".into(),
                ));
            }
            let (run, files) = io::run_to_dir(&c, &dir)?;
            if let Some(fit) = &run.fit {
                println!(
                    "initial fit: mse {:.3e} after {} Adam + {} L-BFGS iterations",
                    fit.mse, fit.adam_iters, fit.lbfgs_iters
                );
            }
            println!("initial energy {:.10e}", run.initial_energy);
            if let Some(last) = run.records.last() {
                println!(
                    "{} steps to t = {}, energy {:.10e}, max |phi| {:.6}",
                    run.records.len(),
                    last.time,
                    last.energy,
                    last.max_abs_phi
                );
            }
            println!("wrote {} files to {}", files.len() + 1, dir.display());
        }
        Command::Reference {
            config,
            out,
            nodes,
            dt,
            boundary,
        } => {
            let c = load(&config, seed)?;
            let boundary = match boundary {
                BoundaryArg::Noflux => Boundary::NoFlux,
                BoundaryArg::Periodic => Boundary::Periodic,
            };
            let snaps = io::reference_run(&c, nodes, dt, boundary)?;
            let stride = c.output.snapshot_stride.max(1);
            let mut csv = String::from("time,energy\n");
            for (k, s) in snaps.iter().enumerate() {
                io::write_snapshot(&out.join(io::snapshot_name(k * stride)), s)?;
                let e = discrete_energy(s, c.problem.epsilon, c.problem.potential_scale)?;
                csv.push_str(&format!("{:.16e},{:.16e}\n", s.time, e));
            }
            io::write_atomic(&out.join("reference_energy.csv"), csv.as_bytes())?;
            println!(
                "wrote {} reference snapshots to {}",
                snaps.len(),
                out.display()
            );
        }
        Command::Baseline {
            config,
            out,
            reference_nodes,
            reference_dt,
        } => {
            let mut cfg = match config {
                Some(p) => io::load_spinn_config(&p)?,
                None => SpinnConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let refs = spinn_baseline::reference_solution(
                &cfg,
                reference_nodes,
                reference_dt,
                &FIGURE_TIMES,
            )?;
            let mut field = spinn_baseline::new_spacetime_field::<f64>(&cfg)?;
            let report = spinn_baseline::train(&mut field, &cfg)?;
            println!(
                "trained: L_PDE {:.3e}, L_BC {:.3e}, L_IC {:.3e}",
                report.loss.pde, report.loss.bc, report.loss.ic
            );
            for r in &refs {
                let s = spinn_baseline::slice_at(&field, r, r.time)?;
                println!(
                    "t = {}: relative L2 error {:.4}",
                    r.time,
                    spinn_baseline::relative_l2(&s, r)?
                );
            }
            io::write_atomic(
                &out.join("figure1.csv"),
                spinn_baseline::figure_csv(&field, &refs)?.as_bytes(),
            )?;
            io::write_checkpoint(&out.join("baseline.bin"), &field)?;
        }
        Command::Compare {
            pred,
            reference,
            config,
            out,
        } => {
            let (eps, scale) = match config {
                Some(p) => {
                    let c = load(&p, seed)?;
                    (c.problem.epsilon, c.problem.potential_scale)
                }
                None => {
                    let d = ProblemConfig::default();
                    (d.problem.epsilon, d.problem.potential_scale)
                }
            };
            let p = io::read_snapshot_dir(&pred)?;
            let r = io::read_snapshot_dir(&reference)?;
            let cmp = io::compare_snapshots(&p, &r, eps, scale)?;
            let worst = cmp
                .rows
                .iter()
                .map(|r| r.energy_diff_percent.abs())
                .fold(0.0, f64::max);
            println!("E_SDMM {:.6e}", cmp.e_sdmm);
            println!("max energy difference {worst:.4}%");
            let out = out.unwrap_or_else(|| pred.join(io::COMPARE_FILE));
            io::write_atomic(&out, io::comparison_csv(&cmp).as_bytes())?;
        }
        Command::FitIc { config, out } => {
            let c = load(&config, seed)?;
            let (field, fit) = prepare::<f64>(&c)?;
            println!(
                "mse {:.6e} after {} Adam + {} L-BFGS iterations{}",
                fit.mse,
                fit.adam_iters,
                fit.lbfgs_iters,
                if fit.reached_tolerance {
                    ""
                } else {
                    " (tolerance not reached)"
                }
            );
            let mesh = c.mesh::<f64>()?;
            let nodes = mesh.node_axes();
            let target = initial_condition(&c, nodes.clone())?;
            let values = field.evaluate_grid(&nodes)?;
            io::write_snapshot(&out.join("target.fld"), &target)?;
            io::write_snapshot(
                &out.join(io::snapshot_name(0)),
                &sdmm::snapshot::FieldSnapshot::new(nodes, values, 0.0)?,
            )?;
            io::write_checkpoint(&out.join(io::checkpoint_name(0)), &field)?;
        }
    }
    Ok(())
}
