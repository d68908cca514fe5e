//! Workflow execution with a synchronizing agent bound to every task.
//!
//! * [`model`]: workflow definitions, the definition-file parser, static validation.
//! * [`agent`]: per-task data validation, counted execution, the task committer,
//!   routing and acknowledgments.
//! * [`server`]: process loading and configuration, resource scheduling,
//!   escalation handling, completion recording.
//! * [`sim`]: seeded discrete-event execution under a fault plan, producing a
//!   trace and a report.
//! * [`cli`]: the `syncflow` command line.

pub mod agent;
pub mod cli;
pub mod model;
pub mod server;
pub mod sim;

pub use agent::{AgentPhase, AgentState, DEFAULT_MAX_ATTEMPTS};
pub use model::{parse_workflow, validate_spec, ValidatedSpec, WorkflowSpec};
pub use server::{load_and_configure, load_and_configure_with, ConfiguredProcess};
pub use sim::{run_workflow, FaultPlan, Outcome, SimRun, TraceRecord, WorkflowReport};
