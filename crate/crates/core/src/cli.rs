//! `syncflow` command line: `validate` a definition or `run` it through the
//! simulator.
//!
//! Exit status: 0 when the definition is clean or the run completed, 1 for
//! validation violations or a failed run outcome, 2 for unreadable or
//! malformed inputs, 3 when the simulator aborts on an internal invariant.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::model::{parse_workflow, validate_spec, ValidatedSpec};
use crate::server::load_and_configure_with;
use crate::sim::{run_workflow, write_trace, FaultPlan, Outcome, SimError};
use crate::DEFAULT_MAX_ATTEMPTS;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "syncflow", version, about = "Validate and simulate workflow processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workflow through the deterministic simulator.
    Run(RunOptions),
    /// Check a workflow definition and print every violation.
    Validate {
        /// Workflow definition file.
        workflow: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunOptions {
    #[arg(long)]
    pub workflow: PathBuf,
    /// Fault plan file; no faults when omitted.
    #[arg(long)]
    pub faults: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_attempts: u32,
    /// Where to write the trace, one JSON record per line.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Where to write the JSON report; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(workflow: impl Into<PathBuf>) -> Self {
        RunOptions {
            workflow: workflow.into(),
            faults: None,
            seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            trace: None,
            report: None,
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Run(opts) => run_command(&opts, out, err),
        Command::Validate { workflow } => validate_command(&workflow, out, err),
    }
}

enum Loaded {
    Valid(ValidatedSpec),
    Invalid(Vec<crate::model::Violation>),
}

fn load(path: &Path, err: &mut dyn Write) -> Result<Loaded, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
        EXIT_INVALID_INPUT
    })?;
    let spec = parse_workflow(&text).map_err(|e| {
        let _ = writeln!(err, "error: {}: {e}", path.display());
        EXIT_INVALID_INPUT
    })?;
    Ok(match validate_spec(spec) {
        Ok(v) => Loaded::Valid(v),
        Err(violations) => Loaded::Invalid(violations),
    })
}

pub fn validate_command(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match load(path, err) {
        Err(code) => code,
        Ok(Loaded::Invalid(violations)) => {
            for v in &violations {
                let _ = writeln!(out, "violation: {v}");
            }
            let _ = writeln!(out, "{} violation(s)", violations.len());
            EXIT_FAILED
        }
        Ok(Loaded::Valid(spec)) => {
            let _ = writeln!(
                out,
                "ok: process {} with {} tasks and {} edges",
                spec.process_id,
                spec.tasks.len(),
                spec.edges.len()
            );
            EXIT_OK
        }
    }
}

fn write_file(path: &Path, contents: &[u8], err: &mut dyn Write) -> Result<(), i32> {
    fs::write(path, contents).map_err(|e| {
        let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
        EXIT_INVALID_INPUT
    })
}

fn trace_bytes(trace: &[crate::sim::TraceRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn run_command(opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match try_run(opts, out, err) {
        Ok(code) | Err(code) => code,
    }
}

fn try_run(opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, i32> {
    let spec = match load(&opts.workflow, err)? {
        Loaded::Valid(spec) => spec,
        Loaded::Invalid(violations) => {
            for v in &violations {
                let _ = writeln!(err, "violation: {v}");
            }
            return Err(EXIT_INVALID_INPUT);
        }
    };
    let plan = match &opts.faults {
        None => FaultPlan::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
                EXIT_INVALID_INPUT
            })?;
            FaultPlan::parse(&text).map_err(|e| {
                let _ = writeln!(err, "error: {}: {e}", path.display());
                EXIT_INVALID_INPUT
            })?
        }
    };

    let process = load_and_configure_with(spec, opts.max_attempts);
    let run = match run_workflow(&process, &plan, opts.seed) {
        Ok(run) => run,
        Err(SimError::InvalidPlan(violations)) => {
            for v in &violations {
                let _ = writeln!(err, "fault plan: {v}");
            }
            return Err(EXIT_INVALID_INPUT);
        }
        Err(SimError::Invariant { diagnostic, trace }) => {
            if let Some(path) = &opts.trace {
                write_file(path, &trace_bytes(&trace), err)?;
            }
            let _ = writeln!(err, "error: invariant violation: {diagnostic}");
            return Err(EXIT_INTERNAL);
        }
    };

    if let Some(path) = &opts.trace {
        write_file(path, &trace_bytes(&run.trace), err)?;
    }
    let report = run.report.to_json();
    match &opts.report {
        Some(path) => {
            write_file(path, format!("{report}\n").as_bytes(), err)?;
            let _ = writeln!(out, "outcome: {:?} ({} trace records)", run.report.outcome, run.trace.len());
        }
        None => {
            let _ = writeln!(out, "{report}");
        }
    }
    Ok(match run.report.outcome {
        Outcome::Completed => EXIT_OK,
        Outcome::FormatUnrecoverable | Outcome::TaskAbandoned => EXIT_FAILED,
    })
}
