//! Trace records and the end-of-run report.
//!
//! A trace serializes as line-delimited JSON, one record per line, each with
//! exactly the fields `time`, `kind`, `task` and `details`.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::AgentPhase;
use crate::model::{DataName, FormatTag, ProcessId, ResourceId, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "details")]
pub enum TraceEvent {
    StatementExecuted { index: u32, attempt: u32 },
    CommitFailed { attempt: u32, offset: u32 },
    Committed { t_exec: u32 },
    Escalated { attempts: u32 },
    AlternateResourceAssigned { resource: ResourceId },
    DataTransferred { data: DataName, from: TaskId, version: u32, format: FormatTag, resend: bool },
    ConsistencyUpdated { data: DataName, version: u32 },
    AckReceived { from: TaskId },
    FormatSignaled { data: DataName, predecessor: TaskId, declared: FormatTag, found: FormatTag },
    ProcessComplete { process: ProcessId },
    Warning { message: String },
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::StatementExecuted { .. } => "StatementExecuted",
            TraceEvent::CommitFailed { .. } => "CommitFailed",
            TraceEvent::Committed { .. } => "Committed",
            TraceEvent::Escalated { .. } => "Escalated",
            TraceEvent::AlternateResourceAssigned { .. } => "AlternateResourceAssigned",
            TraceEvent::DataTransferred { .. } => "DataTransferred",
            TraceEvent::ConsistencyUpdated { .. } => "ConsistencyUpdated",
            TraceEvent::AckReceived { .. } => "AckReceived",
            TraceEvent::FormatSignaled { .. } => "FormatSignaled",
            TraceEvent::ProcessComplete { .. } => "ProcessComplete",
            TraceEvent::Warning { .. } => "Warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: u64,
    pub task: Option<TaskId>,
    pub event: TraceEvent,
}

impl TraceRecord {
    pub fn kind(&self) -> &'static str {
        self.event.kind()
    }

    pub fn is_task(&self, task: &str) -> bool {
        self.task.as_ref().is_some_and(|t| t.as_str() == task)
    }
}

impl Serialize for TraceRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let tagged = serde_json::to_value(&self.event).map_err(serde::ser::Error::custom)?;
        let mut s = serializer.serialize_struct("TraceRecord", 4)?;
        s.serialize_field("time", &self.time)?;
        s.serialize_field("kind", &tagged["kind"])?;
        s.serialize_field("task", &self.task)?;
        s.serialize_field("details", &tagged["details"])?;
        s.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    time: u64,
    kind: String,
    task: Option<TaskId>,
    details: serde_json::Value,
}

impl<'de> Deserialize<'de> for TraceRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = TraceLine::deserialize(deserializer)?;
        let event = serde_json::from_value(serde_json::json!({ "kind": line.kind, "details": line.details }))
            .map_err(D::Error::custom)?;
        Ok(TraceRecord { time: line.time, task: line.task, event })
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn trace_to_jsonl(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    FormatUnrecoverable,
    TaskAbandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub t_e: u32,
    pub t_exec: u32,
    /// Commit checks performed: failures plus the successful one, if any.
    pub attempts_used: u32,
    pub commit_failures: u32,
    pub statements_executed: u64,
    pub escalations: u32,
    pub final_phase: AgentPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConsistency {
    /// Highest version held anywhere.
    pub version: u32,
    pub holders: Vec<TaskId>,
    /// All replicas agree on version and payload.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub process_id: ProcessId,
    pub outcome: Outcome,
    pub seed: u64,
    pub tasks: BTreeMap<TaskId, TaskStats>,
    pub consistency: BTreeMap<DataName, DataConsistency>,
    pub total_events: u64,
    pub trace_records: usize,
}

impl WorkflowReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}
