//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use l1verify::vehicle::VehicleParams;

use crate::options::VerifyOptions;
use crate::pipeline::{verify, Outcome};
use crate::probe::{flow_probe, parse_w_samples, secvar_eval};

pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "l1verify", version, about = "Checks sufficient conditions for strong local optimality of bang-singular-zero-bang extremals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct TolArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol_int: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_strict: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol_newton: f64,
    /// First penalty weight tried; doubled until the bold-space tests pass.
    #[arg(long, default_value_t = 1.0)]
    pub penalty_start: f64,
    /// Largest penalty weight tried before giving up.
    #[arg(long, default_value_t = 1048576.0)]
    pub penalty_cap: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl TolArgs {
    pub fn options(&self) -> VerifyOptions {
        VerifyOptions {
            tol_int: self.tol_int,
            tol_strict: self.tol_strict,
            tol_newton: self.tol_newton,
            penalty_start: self.penalty_start,
            penalty_cap: self.penalty_cap,
            seed: self.seed,
            ..VerifyOptions::default()
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for CSV traces.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Suppress the human-readable summary on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline on a problem and a candidate file.
    Verify {
        problem: PathBuf,
        candidate: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Built-in examples.
    Example {
        #[command(subcommand)]
        which: Example,
    },
    /// Evaluate 𝓗(t, ·) on graph points of Λ1 near q̂1.
    FlowProbe {
        problem: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0.01)]
        radius: f64,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Penalty weight of θ in Λ1.
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Evaluate the extended second variation at one variation.
    SecvarEval {
        problem: PathBuf,
        candidate: PathBuf,
        /// CSV of `t,w` samples on the singular arc.
        #[arg(long)]
        w: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        eps0: f64,
        #[arg(long, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[command(flatten)]
        tol: TolArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum Example {
    /// The electric-vehicle problem.
    Vehicle {
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        p10: f64,
        /// Length τ̂2 − τ̂1 of the singular arc.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Write problem.json and candidate.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the pipeline.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        tol: TolArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn emit(outcome: &Outcome, out: &OutputArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), String> {
    let json = outcome.report.to_json();
    match &out.report {
        Some(p) => fs::write(p, &json).map_err(|e| format!("cannot write {}: {e}", p.display()))?,
        None => stdout.write_all(json.as_bytes()).map_err(|e| e.to_string())?,
    }
    if let Some(dir) = &out.traces {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let t = &outcome.traces;
        for (name, body) in
            [("switching.csv", &t.switching_csv), ("secvar_det.csv", &t.secvar_det_csv), ("monitor.csv", &t.monitor_csv)]
        {
            if let Some(body) = body {
                fs::write(dir.join(name), body).map_err(|e| format!("cannot write {name}: {e}"))?;
            }
        }
    }
    if !out.quiet {
        let _ = stderr.write_all(outcome.report.summary().as_bytes());
    }
    Ok(())
}

fn run_verify(
    problem: &str,
    candidate: &str,
    tol: &TolArgs,
    out: &OutputArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    match verify(problem, candidate, &tol.options()) {
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            EXIT_INPUT
        }
        Ok(outcome) => match emit(&outcome, out, stdout, stderr) {
            Ok(()) => outcome.report.verdict.status.exit_code(),
            Err(e) => {
                let _ = writeln!(stderr, "{e}");
                EXIT_INPUT
            }
        },
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    let fail = |stderr: &mut dyn Write, msg: String| {
        let _ = writeln!(stderr, "{msg}");
        EXIT_INPUT
    };
    match cli.command {
        Command::Verify { problem, candidate, tol, out } => {
            let (p, c) = match (read(&problem), read(&candidate)) {
                (Ok(p), Ok(c)) => (p, c),
                (Err(e), _) | (_, Err(e)) => return fail(stderr, e),
            };
            run_verify(&p, &c, &tol, &out, stdout, stderr)
        }
        Command::Example { which: Example::Vehicle { rho, p10, delta, out, verify, tol, output } } => {
            let v = match VehicleParams::with_singular_length(rho, p10, delta) {
                Ok(v) => v,
                Err(e) => return fail(stderr, e.to_string()),
            };
            let problem = to_json(&v.problem());
            let candidate = to_json(&v.candidate());
            if let Some(dir) = &out {
                let written = fs::create_dir_all(dir)
                    .and_then(|_| fs::write(dir.join("problem.json"), &problem))
                    .and_then(|_| fs::write(dir.join("candidate.json"), &candidate));
                if let Err(e) = written {
                    return fail(stderr, format!("cannot write example files: {e}"));
                }
            }
            if verify {
                run_verify(&problem, &candidate, &tol, &output, stdout, stderr)
            } else {
                if out.is_none() {
                    let _ = write!(stdout, "{problem}{candidate}");
                }
                0
            }
        }
        Command::FlowProbe { problem, candidate, t, radius, samples, s, tol } => {
            let (p, c) = match (read(&problem), read(&candidate)) {
                (Ok(p), Ok(c)) => (p, c),
                (Err(e), _) | (_, Err(e)) => return fail(stderr, e),
            };
            match flow_probe(&p, &c, t, radius, samples, s, &tol.options()) {
                Ok(o) => {
                    let _ = stdout.write_all(to_json(&o).as_bytes());
                    0
                }
                Err(e) => fail(stderr, e),
            }
        }
        Command::SecvarEval { problem, candidate, w, eps0, eps, s, tol } => {
            let (p, c, wt) = match (read(&problem), read(&candidate), read(&w)) {
                (Ok(p), Ok(c), Ok(w)) => (p, c, w),
                (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return fail(stderr, e),
            };
            let profile = match parse_w_samples(&wt) {
                Ok(w) => w,
                Err(e) => return fail(stderr, e.to_string()),
            };
            match secvar_eval(&p, &c, profile, eps0, eps, s, &tol.options()) {
                Ok(o) => {
                    let _ = stdout.write_all(to_json(&o).as_bytes());
                    0
                }
                Err(e) => fail(stderr, e),
            }
        }
    }
}
