//! Definition-file reader and writer.
//!
//! The file is a JSON document mirroring [`WorkflowSpec`]. Parsing enforces
//! the schema only; semantic checks live in [`validate_spec`](super::validate_spec).

use std::collections::BTreeSet;

use thiserror::Error;

use super::{TaskId, WorkflowSpec, LOCAL_SOURCE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("tasks[{index}].id: duplicate task id `{id}`")]
    DuplicateTaskId { id: TaskId, index: usize },
    #[error("tasks[{index}].id: `{LOCAL_SOURCE}` is reserved for local inputs")]
    ReservedTaskId { index: usize },
    #[error("tasks[{index}].statements: task `{id}` must have at least one statement")]
    ZeroStatements { id: TaskId, index: usize },
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError::Json { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

pub fn parse_workflow(text: &str) -> Result<WorkflowSpec, ParseError> {
    let spec: WorkflowSpec = serde_json::from_str(text)?;
    let mut seen = BTreeSet::new();
    for (index, task) in spec.tasks.iter().enumerate() {
        if task.task_id.as_str() == LOCAL_SOURCE {
            return Err(ParseError::ReservedTaskId { index });
        }
        if !seen.insert(&task.task_id) {
            return Err(ParseError::DuplicateTaskId { id: task.task_id.clone(), index });
        }
        if task.statement_count == 0 {
            return Err(ParseError::ZeroStatements { id: task.task_id.clone(), index });
        }
    }
    Ok(spec)
}

pub fn serialize_workflow(spec: &WorkflowSpec) -> String {
    serde_json::to_string_pretty(spec).expect("workflow specs always serialize")
}
