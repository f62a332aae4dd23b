use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fpf_lab::config::{self, SolverSpec};
use fpf_lab::{runner, LabError};

#[derive(Parser)]
#[command(name = "fpf-lab", version, about = "Nonlinear filtering lab: feedback particle filter runs, gain solver demos, and refinement studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write run.csv, manifest.json, and density
    /// snapshots to the output directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the particle count.
        #[arg(long)]
        particles: Option<usize>,
        /// Override the gain solver (exact1d, fd, galerkin).
        #[arg(long)]
        solver: Option<String>,
        /// Override the mode (oracle, algorithmic).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Delta-t halving study on a bridge-refined observation path; prints
    /// one CSV row per refinement level.
    Convergence {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        refinements: usize,
    },
    /// Dump the gain K(x) from all three solvers for a prior/observation
    /// pair (prior spec: gaussian:MEAN,STD or mixture:W,M,S;W,M,S).
    GainDemo {
        #[arg(long)]
        prior: String,
        #[arg(long)]
        obs: String,
    },
    /// Run the full invariant suite.
    Verify,
}

fn run(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            particles,
            solver,
            mode,
        } => {
            let mut file = config::load_scenario(&scenario)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            if let Some(p) = particles {
                file.particles = p;
            }
            if let Some(s) = solver {
                file.gain_solver = SolverSpec::Name(s);
            }
            if let Some(m) = mode {
                file.mode = m;
            }
            // the defaults depend on steps, so refresh them after overrides
            file.fill_defaults();
            file.to_scenario()?;
            let run = runner::run_experiment(&file, &out)?;
            let t = run.terminal();
            println!(
                "done: {} steps, terminal emp_mean {:.6} emp_var {:.6} ref_mean {:.6} ref_var {:.6}",
                run.records.len(),
                t.emp_mean,
                t.emp_var,
                t.ref_mean,
                t.ref_var
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Convergence {
            scenario,
            refinements,
        } => {
            let file = config::load_scenario(&scenario)?;
            let rows = runner::run_convergence(&file, refinements)?;
            println!("level,steps,dt,sup_rel_error");
            for r in &rows {
                println!("{},{},{},{}", r.level, r.steps, r.dt, r.sup_rel_error);
            }
            Ok(())
        }
        Command::GainDemo { prior, obs } => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            runner::gain_demo(&prior, &obs, &mut lock)?;
            lock.flush()?;
            Ok(())
        }
        Command::Verify => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let ok = runner::verify(&mut lock)?;
            lock.flush()?;
            if ok {
                Ok(())
            } else {
                Err(LabError::Numeric("invariant suite failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
