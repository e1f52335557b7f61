//! `trim-mpc`: command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible problem, 3 failed
//! verification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use trim_mpc::collocation::{self, CollocationProblem, NlpOptions};
use trim_mpc::io::{closed_loop_csv, collocation_csv, to_json_string, trace_csv, trajectory_csv};
use trim_mpc::suites::{run_suite, SuiteOptions, SUITES};
use trim_mpc::trim::{default_library, plan_flow};
use trim_mpc::{mpc, ocp, Error, MpcConfig, ProblemSpec, SolveOptions, Termination, TrimLibrary};

const CSV_HELP: &str = "CSV columns:
  trajectory  t,x1,x2,x3,u1,u2
  trace       t,x1,x2,x3,u1,u2,V,cost,replanned   (one row per MPC step plus the final state;
              u is the first control of the step, V the open-loop value,
              cost the closed-loop cost accumulated before the step)
  collocation t,x1,x2,x3,x4,x5,u1,u2";

#[derive(Parser, Debug)]
#[command(name = "trim-mpc", version, about = "MPC with trim primitives for the kinematic mobile robot", after_help = CSV_HELP)]
struct Cli {
    /// Worker threads for the parallel search (default: all cores).
    #[arg(long, global = true, env = "TRIM_MPC_THREADS")]
    threads: Option<usize>,

    /// Write a run manifest (command, inputs, outputs, seed, version, wall
    /// time) to this file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the optimal control problem over trim sequences.
    Solve {
        problem: PathBuf,
        /// Solution JSON (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Trajectory CSV of the optimal plan.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Sample spacing of the trajectory CSV.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run the receding-horizon loop.
    Mpc {
        problem: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        max_steps: usize,
        #[arg(long, default_value_t = 1e-6)]
        stop_tol: f64,
        /// Summary JSON (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Per-step trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Dense closed-loop trajectory CSV.
        #[arg(long)]
        closed_loop: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run a verification suite.
    Verify {
        /// One of: equivariance, group, uniform-effort, lyapunov,
        /// simplified-value, rstar, transcription.
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of random samples (suite default when omitted).
        #[arg(long)]
        samples: Option<usize>,
        /// Report JSON (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Emit the default trim library or validate a library file.
    Library(LibraryArgs),
    /// Solve a problem by trapezoidal collocation.
    Transcribe {
        /// Collocation problem JSON (built-in example when omitted).
        problem: Option<PathBuf>,
        /// Solution JSON (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Node values as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Seed of the random starting points.
    #[arg(long)]
    seed: Option<u64>,
    /// Random starting points per sequence.
    #[arg(long)]
    multistarts: Option<usize>,
}

impl SearchArgs {
    fn options(&self) -> SolveOptions {
        let mut o = SolveOptions::default();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        if let Some(m) = self.multistarts {
            o.multistarts = m;
        }
        o
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct LibraryArgs {
    /// Write the default library (stdout when FILE is `-`).
    #[arg(long, value_name = "FILE")]
    emit: Option<PathBuf>,
    /// Check a library file.
    #[arg(long, value_name = "FILE")]
    validate: Option<PathBuf>,
}

/// Error carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn classify(e: Error) -> Failure {
    let code = match e {
        Error::InitiallyInfeasible(_) | Error::Infeasible { .. } | Error::Degenerate { .. } => 2,
        Error::NotConverged(_) | Error::Stalled { .. } => 2,
        _ => 1,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    input: Option<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    tool_version: &'static str,
    wall_time_s: f64,
}

struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: Option<&Path>, content: &str) -> Result<(), Failure> {
        match path {
            None => {
                print!("{content}");
                Ok(())
            }
            Some(p) if p == Path::new("-") => {
                print!("{content}");
                Ok(())
            }
            Some(p) => {
                std::fs::write(p, content)
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(Failure::input)?;
                self.written.push(p.to_path_buf());
                Ok(())
            }
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::input(format!("{e:#}")))
}

fn load_problem(path: &Path) -> Result<ProblemSpec, Failure> {
    let text = read(path)?;
    ProblemSpec::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn json_out<T: Serialize + ?Sized>(v: &T) -> Result<String, Failure> {
    to_json_string(v).map_err(classify)
}

fn run(cli: &Cli, out: &mut Outputs) -> Result<(Option<PathBuf>, Option<u64>), Failure> {
    match &cli.command {
        Command::Solve {
            problem,
            output,
            csv,
            dt,
            search,
        } => {
            let p = load_problem(problem)?;
            let opts = search.options();
            let sol = ocp::solve(&p, &opts).map_err(classify)?;
            let lib = p.control_set.to_library().map_err(classify)?;
            let controls = sol.controls(&lib).map_err(classify)?;
            let doc = json!({
                "sequence": sol.sequence,
                "plan": sol.plan,
                "plan_ids": sol.plan_ids(),
                "controls": controls,
                "value": sol.value,
                "t_star": sol.t_star,
                "sequence_rank": sol.sequence_rank,
                "endpoint_error": sol.endpoint_error,
            });
            out.write(output.as_deref(), &json_out(&doc)?)?;
            if let Some(c) = csv {
                if !(*dt > 0.0) {
                    return Err(Failure::input("--dt must be positive"));
                }
                let traj = plan_flow(&lib, &sol.plan, &p.x_hat).map_err(classify)?;
                out.write(Some(c), &trajectory_csv(&traj, *dt).map_err(classify)?)?;
            }
            Ok((Some(problem.clone()), Some(opts.seed)))
        }
        Command::Mpc {
            problem,
            delta,
            max_steps,
            stop_tol,
            output,
            trace,
            closed_loop,
            dt,
            search,
        } => {
            let p = load_problem(problem)?;
            let cfg = MpcConfig {
                delta: *delta,
                stop_tol: *stop_tol,
                max_steps: *max_steps,
            };
            let opts = search.options();
            let tr = match mpc::run(&p, &cfg, &opts) {
                Ok(t) => t,
                Err(Error::InitiallyInfeasible(m)) => {
                    return Err(Failure {
                        code: 2,
                        message: format!("initially infeasible: {m}"),
                    })
                }
                Err(e) => return Err(classify(e)),
            };
            let terminated = match tr.termination {
                Termination::Converged => "converged",
                Termination::Stalled => "stalled",
            };
            let summary = json!({
                "terminated": terminated,
                "steps": tr.steps.len(),
                "closed_loop_cost": tr.closed_loop_cost,
                "final_time": tr.final_time,
                "final_state": tr.final_state,
                "final_value": tr.final_value,
                "values": tr.values(),
                "first_controls": tr.steps.iter().map(|s| s.first_control).collect::<Vec<_>>(),
                "replanning_times": tr.replanning_times(),
                "sequences": tr.steps.iter().map(|s| s.solution.plan_ids()).collect::<Vec<_>>(),
            });
            out.write(output.as_deref(), &json_out(&summary)?)?;
            if let Some(path) = trace {
                out.write(Some(path), &trace_csv(&tr).map_err(classify)?)?;
            }
            if let Some(path) = closed_loop {
                if !(*dt > 0.0) {
                    return Err(Failure::input("--dt must be positive"));
                }
                let lib = p.control_set.to_library().map_err(classify)?;
                out.write(Some(path), &closed_loop_csv(&lib, &tr, *dt).map_err(classify)?)?;
            }
            Ok((Some(problem.clone()), Some(opts.seed)))
        }
        Command::Verify {
            suite,
            seed,
            samples,
            output,
        } => {
            if !SUITES.contains(&suite.as_str()) {
                return Err(Failure::input(format!(
                    "unknown suite '{suite}', expected one of {}",
                    SUITES.join(", ")
                )));
            }
            let mut o = SuiteOptions::default();
            if let Some(s) = seed {
                o.seed = *s;
            }
            o.samples = *samples;
            let report = run_suite(suite, &o).map_err(classify)?;
            out.write(output.as_deref(), &json_out(&report)?)?;
            if let Some(f) = report.first_failure() {
                return Err(Failure {
                    code: 3,
                    message: format!("check '{}' failed: {}", f.check, json_out(f)?.trim_end()),
                });
            }
            Ok((None, Some(o.seed)))
        }
        Command::Library(args) => {
            if let Some(path) = &args.emit {
                let lib = default_library();
                let text = serde_json::to_string_pretty(&lib).map_err(Failure::input)? + "\n";
                out.write(Some(path), &text)?;
                Ok((None, None))
            } else {
                let path = args.validate.as_ref().expect("clap enforces one flag");
                let lib = TrimLibrary::from_json(&read(path)?)
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
                println!("{}: valid library with {} trims", path.display(), lib.len());
                Ok((Some(path.clone()), None))
            }
        }
        Command::Transcribe { problem, output, csv } => {
            let p = match problem {
                Some(path) => CollocationProblem::from_json(&read(path)?)
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
                None => CollocationProblem::example(),
            };
            let sol = collocation::solve(&p, &NlpOptions::default()).map_err(classify)?;
            let efforts = sol.node_efforts(&p.r);
            let hi = efforts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = efforts.iter().cloned().fold(f64::INFINITY, f64::min);
            let doc = json!({
                "converged": sol.converged,
                "objective": sol.objective,
                "residual": sol.residual,
                "gradient_norm": sol.gradient_norm,
                "iterations": sol.iterations,
                "x5_r2": sol.x5_linearity(),
                "effort_spread": if hi > 0.0 { (hi - lo) / hi } else { 0.0 },
                "interior_effort_spread": sol.interior_effort_spread(&p.r),
            });
            out.write(output.as_deref(), &json_out(&doc)?)?;
            if let Some(path) = csv {
                out.write(Some(path), &collocation_csv(&sol).map_err(classify)?)?;
            }
            if !sol.converged {
                return Err(Failure {
                    code: 2,
                    message: format!(
                        "collocation did not converge: residual {:e}, gradient {:e}",
                        sol.residual, sol.gradient_norm
                    ),
                });
            }
            Ok((problem.clone(), None))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Solve { .. } => "solve",
        Command::Mpc { .. } => "mpc",
        Command::Verify { .. } => "verify",
        Command::Library(_) => "library",
        Command::Transcribe { .. } => "transcribe",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let mut out = Outputs { written: Vec::new() };
    let result = run(&cli, &mut out);
    if let Some(path) = &cli.manifest {
        let (input, seed) = result.as_ref().map(|r| r.clone()).unwrap_or((None, None));
        let m = RunManifest {
            command: command_name(&cli.command).to_string(),
            input,
            outputs: out.written.clone(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let text = to_json_string(&m).unwrap_or_default();
        if let Err(e) = std::fs::write(path, text) {
            eprintln!("error: writing manifest {}: {e}", path.display());
        }
    }
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
