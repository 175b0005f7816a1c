use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use analog_lp::circuit::{compile, export_netlist_with, NetlistOptions};
use analog_lp::lp::{canonicalize, LinearProgram};
use analog_lp::mpc::{closed_loop, MpcSpec, SolverKind};
use analog_lp::random::{generate_random_lp, RandomLpSpec};
use analog_lp::steady::{compute_ucrit, solve_steady_state, verify_equivalence, EquivalenceReport, VerifyStatus};
use analog_lp::transient::{settling_time, simulate, Integrator, TransientConfig};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "analog-lp", version, about = "Solve linear programs with simulated analog circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an LP with the circuit and compare with the oracle.
    Solve {
        problem: PathBuf,
        /// Cost node voltage; defaults to U_crit − 1.
        #[arg(long, allow_hyphen_values = true)]
        ucost: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full equivalence report, one per problem file.
    Verify {
        #[arg(required = true)]
        problems: Vec<PathBuf>,
        /// Run the problems in parallel (ANALOG_LP_THREADS caps the pool).
        #[arg(long)]
        batch: bool,
        #[arg(long, allow_hyphen_values = true)]
        ucost: Option<f64>,
        /// Largest accepted relative cost gap.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the critical cost voltage.
    Ucrit { problem: PathBuf },
    /// Simulate the circuit in time and write the trajectory as CSV.
    Transient {
        problem: PathBuf,
        /// Series inductance per resistor branch, henries.
        #[arg(long, default_value_t = 100e-9)]
        l: f64,
        #[arg(long, allow_hyphen_values = true)]
        ucost: Option<f64>,
        #[arg(long, default_value_t = 1e-9)]
        step: f64,
        #[arg(long, default_value_t = 20e-6)]
        horizon: f64,
        #[arg(long, value_enum, default_value_t = Method::BackwardEuler)]
        integrator: Method,
        /// Relative band for the settling time.
        #[arg(long, default_value_t = 0.005)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a SPICE deck of the compiled circuit.
    Netlist {
        problem: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        ucost: Option<f64>,
        /// Add this series inductance to every resistor branch.
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a closed-loop MPC scenario and write `t,x,u,cost` CSV.
    Mpc {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Solver::Circuit)]
        solver: Solver,
        /// Relative standard deviation of the resistor perturbation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random feasible, bounded LP as JSON.
    Randlp {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        p: usize,
        /// Inequality rows; at least n + 1.
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    BackwardEuler,
    Trapezoidal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Circuit,
    Oracle,
}

/// MPC scenario file: the controller plus an optional run length.
#[derive(Deserialize)]
struct Scenario {
    #[serde(flatten)]
    spec: MpcSpec,
    /// Seconds; defaults to one sample per reference entry.
    duration: Option<f64>,
}

#[derive(Serialize)]
struct SolveOutput {
    x: Vec<f64>,
    cost: Option<f64>,
    u_crit: Option<f64>,
    u_cost: Option<f64>,
    oracle_cost: Option<f64>,
    gap: Option<f64>,
    active_set: Vec<usize>,
}

#[derive(Serialize)]
struct FileReport {
    file: String,
    passed: bool,
    #[serde(flatten)]
    report: EquivalenceReport,
}

fn read_lp(path: &Path) -> Result<LinearProgram> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn cost_voltage(lp: &LinearProgram, ucost: Option<f64>) -> Result<f64> {
    match ucost {
        Some(u) => Ok(u),
        None => Ok(compute_ucrit(lp)? - 1.0),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ANALOG_LP_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ANALOG_LP_THREADS={v} is not a count"))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { problem, ucost, out } => {
            let lp = read_lp(&problem)?;
            let r = verify_equivalence(&lp, ucost);
            if matches!(r.status, VerifyStatus::Failed) {
                bail!("{}", r.message.unwrap_or_default());
            }
            let ok = r.status == VerifyStatus::Optimal;
            emit(
                out.as_deref(),
                &json(&SolveOutput {
                    x: r.x,
                    cost: r.circuit_cost,
                    u_crit: r.u_crit,
                    u_cost: r.u_cost,
                    oracle_cost: r.oracle_cost,
                    gap: r.cost_gap,
                    active_set: r.active_set,
                })?,
            )?;
            Ok(ok)
        }
        Command::Verify {
            problems,
            batch,
            ucost,
            tol,
            out,
        } => {
            if !batch && problems.len() > 1 {
                bail!("several problem files need --batch");
            }
            let check = |p: &PathBuf| -> Result<FileReport> {
                let report = verify_equivalence(&read_lp(p)?, ucost);
                let passed = report.status == VerifyStatus::Optimal && report.cost_gap.is_some_and(|g| g <= tol);
                Ok(FileReport {
                    file: p.display().to_string(),
                    passed,
                    report,
                })
            };
            let reports: Vec<FileReport> = if batch {
                // collect keeps input order whatever the completion order
                thread_pool()?.install(|| problems.par_iter().map(check).collect::<Result<_>>())?
            } else {
                problems.iter().map(check).collect::<Result<_>>()?
            };
            let ok = reports.iter().all(|r| r.passed);
            if batch {
                emit(out.as_deref(), &json(&reports)?)?;
            } else {
                emit(out.as_deref(), &json(&reports[0])?)?;
            }
            Ok(ok)
        }
        Command::Ucrit { problem } => {
            let u = compute_ucrit(&read_lp(&problem)?)?;
            println!("{u:e}");
            Ok(true)
        }
        Command::Transient {
            problem,
            l,
            ucost,
            step,
            horizon,
            integrator,
            tol,
            out,
        } => {
            let lp = read_lp(&problem)?;
            let u = cost_voltage(&lp, ucost)?;
            let clp = canonicalize(&lp)?;
            let circuit = compile(&clp)?;
            let cfg = TransientConfig {
                branch_inductance: l,
                step,
                horizon,
                integrator: match integrator {
                    Method::BackwardEuler => Integrator::BackwardEuler,
                    Method::Trapezoidal => Integrator::Trapezoidal,
                },
                settle_tolerance: tol,
                ..Default::default()
            };
            let traj = simulate(&circuit, u, &cfg)?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)?;

            let reference = solve_steady_state(&circuit, u)?.cost(&circuit);
            let fmt = |t: Option<f64>| t.map_or("not reached".to_string(), |t| format!("{t:e} s"));
            eprintln!(
                "final cost {:e}, steady state {reference:e}, settled {}, last diode change {}",
                traj.final_cost(),
                fmt(settling_time(&traj, reference, tol)),
                fmt(traj.last_diode_change())
            );
            Ok(true)
        }
        Command::Netlist { problem, ucost, l, out } => {
            let lp = read_lp(&problem)?;
            let u = cost_voltage(&lp, ucost)?;
            let circuit = compile(&canonicalize(&lp)?)?;
            let opts = NetlistOptions {
                branch_inductance: l,
                ..NetlistOptions::new(u)
            };
            emit(out.as_deref(), &export_netlist_with(&circuit, &opts))?;
            Ok(true)
        }
        Command::Mpc {
            scenario,
            solver,
            sigma,
            seed,
            out,
        } => {
            let text = fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let sc: Scenario = serde_json::from_str(&text).with_context(|| format!("parsing {}", scenario.display()))?;
            let duration = sc.duration.unwrap_or(sc.spec.x_ref.len() as f64 * sc.spec.delta);
            let kind = match solver {
                Solver::Circuit => SolverKind::Circuit,
                Solver::Oracle => SolverKind::Oracle,
            };
            let result = closed_loop(&sc.spec, duration, kind, sigma, seed)?;
            let mut buf = Vec::new();
            result.write_csv(&mut buf)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)?;
            let lowered = result.reports.iter().filter(|r| r.u_cost_lowered).count();
            if lowered > 0 {
                eprintln!("cost voltage lowered at {lowered} steps");
            }
            if let Some(msg) = result.aborted {
                bail!("closed loop aborted at {msg}");
            }
            Ok(true)
        }
        Command::Randlp {
            n,
            p,
            q,
            density,
            seed,
            out,
        } => {
            let spec = RandomLpSpec {
                n_vars: n,
                n_eq: p,
                n_ineq: q,
                density,
                seed,
            };
            emit(out.as_deref(), &json(&generate_random_lp(&spec)?)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
