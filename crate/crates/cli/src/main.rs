//! Command-line front-end: load problem instances and mechanisms from JSON,
//! run the solvers and audits, emit JSON/CSV reports.
//!
//! Exit codes: 0 success, 2 infeasible or invalid input, 3 non-convergence.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use privmap::jsonout;
use privmap::solver::write_trace_csv;
use privmap::{
    audit, brute_force_min_leakage, brute_force_minmax, build_counting_instance,
    estimate_laplace_leakage, laplace_dp_check, leakage_lower_bound, min_distortion_given_maxleak,
    solve_minmax_leakage, LaplaceMechanism, OracleConfig, PriorKind,
};

mod schema;

#[derive(Parser)]
#[command(
    name = "privmap",
    version,
    about = "Design and audit privacy-preserving mappings over finite alphabets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize average information leakage I(S;U) under distortion budgets
    SolveAvg {
        /// Problem instance JSON file
        #[arg(long)]
        instance: PathBuf,
        /// Output path: SolverResult JSON, or curve CSV in curve mode
        #[arg(long)]
        out: PathBuf,
        /// Override the solver's relative objective tolerance
        #[arg(long)]
        tol: Option<f64>,
        /// Comma-separated ascending budget grid; sweeps the first budget
        /// and writes a delta,leakage_bits CSV
        #[arg(long, value_delimiter = ',')]
        curve: Option<Vec<f64>>,
        /// Worker threads for curve mode (forfeits warm starts)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Cross-check against the brute-force oracle (tiny instances only)
        #[arg(long, hide = true)]
        oracle: bool,
        /// Dump the iteration trace as CSV
        #[arg(long, hide = true)]
        trace: Option<PathBuf>,
    },
    /// Minimize the worst per-output leakage (with --delta) or the
    /// distortion at a leakage cap (with --epsilon)
    SolveMinmax {
        /// Problem instance JSON file
        #[arg(long)]
        instance: PathBuf,
        /// Distortion budget: line-search the smallest feasible leakage cap
        #[arg(long, conflicts_with = "epsilon", required_unless_present = "epsilon")]
        delta: Option<f64>,
        /// Leakage cap in bits: minimize distortion at this cap
        #[arg(long)]
        epsilon: Option<f64>,
        /// Output path for the MinmaxResult JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-check against the brute-force oracle (tiny instances only)
        #[arg(long, hide = true)]
        oracle: bool,
        /// Dump the final solve's iteration trace as CSV
        #[arg(long, hide = true)]
        trace: Option<PathBuf>,
    },
    /// Audit a mechanism: differential-privacy and information-privacy
    /// epsilons plus log-loss leakage
    Audit {
        /// Problem instance JSON file (provides the prior over S)
        #[arg(long)]
        instance: PathBuf,
        /// Mechanism channel JSON file (rows indexed by S)
        #[arg(long)]
        mechanism: PathBuf,
        /// "unit-step" or a path to a JSON array of neighboring label pairs
        #[arg(long, default_value = "unit-step")]
        adjacency: String,
        /// Output path for the AuditReport JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the unbounded-leakage demonstration: audited DP epsilon of
    /// the Laplace release, the closed-form leakage bound, and a Monte-Carlo
    /// estimate
    DemoDpLeak {
        /// Database size (must be divisible by k)
        #[arg(long)]
        n: usize,
        /// Spacing of the supported counts
        #[arg(long)]
        k: usize,
        /// Laplace privacy parameter
        #[arg(long)]
        epsilon: f64,
        /// Monte-Carlo sample count
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// RNG seed (sampling is never wall-clock seeded)
        #[arg(long)]
        seed: u64,
    },
}

enum CliError {
    Invalid(String),
    NonConvergence(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::NonConvergence(m) => m,
        }
    }
}

impl From<privmap::Error> for CliError {
    fn from(e: privmap::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(format!("io error: {e}"))
    }
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveAvg {
            instance,
            out,
            tol,
            curve,
            jobs,
            oracle,
            trace,
        } => {
            let inst = schema::load_instance(&instance)?;
            if let Some(grid) = curve {
                let points = privmap::avg::tradeoff_curve_with(&inst, &grid, jobs.max(1))?;
                std::fs::write(&out, jsonout::curve_csv(&points))?;
                if points.iter().any(|p| p.infeasible) {
                    eprintln!("note: some grid points were infeasible (leakage recorded as inf)");
                }
                return Ok(());
            }
            let result = privmap::avg::solve_min_avg_leakage_opts(&inst, None, tol)?;
            if oracle {
                let budget = inst
                    .distortions()
                    .first()
                    .map(|d| d.budget)
                    .ok_or_else(|| CliError::Invalid("instance has no distortions".into()))?;
                let cfg = OracleConfig::default_for(inst.y_alphabet().len(), inst.u_size());
                let (value, _) = brute_force_min_leakage(&inst, budget, &cfg)?;
                println!("oracle: {}", jsonout::fmt_float(value));
            }
            if let Some(trace_path) = trace {
                let mut f = std::fs::File::create(trace_path)?;
                write_trace_csv(&result.trace, &mut f)?;
            }
            std::fs::write(&out, jsonout::solver_result_json(&result))?;
            if !result.converged {
                return Err(CliError::NonConvergence(format!(
                    "solver did not converge (kkt residual {}, max constraint residual {})",
                    result.kkt_residual,
                    result.max_residual()
                )));
            }
            Ok(())
        }
        Command::SolveMinmax {
            instance,
            delta,
            epsilon,
            out,
            oracle,
            trace,
        } => {
            let inst = schema::load_instance(&instance)?;
            let result = match (delta, epsilon) {
                (Some(d), None) => solve_minmax_leakage(&inst, d)?,
                (None, Some(e)) => min_distortion_given_maxleak(&inst, e)?,
                _ => return Err(CliError::Invalid("pass exactly one of --delta/--epsilon".into())),
            };
            if oracle {
                let cfg = OracleConfig::default_for(inst.y_alphabet().len(), inst.u_size());
                if let Some(d) = delta {
                    let (value, _) = brute_force_minmax(&inst, d, &cfg)?;
                    println!("oracle: {}", jsonout::fmt_float(value));
                } else if let Some(e) = epsilon {
                    let (value, _) = privmap::oracle::brute_force_min_distortion(&inst, e, &cfg)?;
                    println!("oracle: {}", jsonout::fmt_float(value));
                }
            }
            if let Some(trace_path) = trace {
                let mut f = std::fs::File::create(trace_path)?;
                write_trace_csv(&result.solver.trace, &mut f)?;
            }
            write_output(out.as_deref(), &jsonout::minmax_result_json(&result))?;
            if !result.solver.converged {
                return Err(CliError::NonConvergence(format!(
                    "solver did not converge (kkt residual {})",
                    result.solver.kkt_residual
                )));
            }
            Ok(())
        }
        Command::Audit {
            instance,
            mechanism,
            adjacency,
            out,
        } => {
            let inst = schema::load_instance(&instance)?;
            let prior = match inst.coupling() {
                privmap::Coupling::Joint(j) => j.marginals().0,
                _ => {
                    return Err(CliError::Invalid(
                        "audit needs an instance with an explicit p_SY joint".into(),
                    ))
                }
            };
            let mech = schema::load_mechanism(&mechanism)?;
            if mech.input_alphabet() != prior.alphabet() {
                return Err(CliError::Invalid(format!(
                    "mechanism input alphabet [{}] does not match the instance's S alphabet",
                    mech.input_alphabet().labels().join(",")
                )));
            }
            let adj = schema::load_adjacency(&adjacency, mech.input_alphabet())?;
            let report = audit(&prior, &mech, &adj)?;
            write_output(out.as_deref(), &jsonout::audit_report_json(&report))?;
            Ok(())
        }
        Command::DemoDpLeak {
            n,
            k,
            epsilon,
            samples,
            seed,
        } => {
            let counting = build_counting_instance(n, PriorKind::Spiked(k))?;
            let mech = LaplaceMechanism::new(epsilon, 1.0)?;
            let check = laplace_dp_check(&mech, n);
            let bound = leakage_lower_bound(n, k, epsilon);
            let (estimate, stderr) = estimate_laplace_leakage(&counting, &mech, samples, seed)?;

            println!("n k epsilon audited_dp_epsilon bound_bits mc_estimate_bits mc_stderr_bits");
            println!(
                "{} {} {} {} {} {} {}",
                n,
                k,
                jsonout::fmt_float(epsilon),
                jsonout::fmt_float(check.audited_epsilon),
                jsonout::fmt_float(bound),
                jsonout::fmt_float(estimate),
                jsonout::fmt_float(stderr)
            );
            if bound <= 0.0 {
                println!("note: bound vacuous (<= 0 bits) for n/k = {}", n / k);
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
