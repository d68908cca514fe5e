//! Workflow definitions: identifiers, task and process specifications, the
//! definition-file parser and static validation.

mod ids;
mod parse;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use ids::{DataName, ProcessId, ResourceId, TaskId};
pub use parse::{parse_workflow, serialize_workflow, ParseError};
pub use validate::{validate_spec, ValidatedSpec, Violation};

/// Closed set of data formats. Validity is exact tag equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatTag {
    Int,
    Real,
    Text,
    Blob,
}

impl FormatTag {
    pub const ALL: [FormatTag; 4] = [FormatTag::Int, FormatTag::Real, FormatTag::Text, FormatTag::Blob];

    pub fn as_str(self) -> &'static str {
        match self {
            FormatTag::Int => "int",
            FormatTag::Real => "real",
            FormatTag::Text => "text",
            FormatTag::Blob => "blob",
        }
    }
}

impl fmt::Display for FormatTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a task input comes from: a producing task, or the task's own
/// local storage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum InputSource {
    Local,
    Task(TaskId),
}

/// Marker used by the definition file for local inputs.
pub const LOCAL_SOURCE: &str = "local";

impl From<String> for InputSource {
    fn from(s: String) -> Self {
        if s == LOCAL_SOURCE {
            InputSource::Local
        } else {
            InputSource::Task(TaskId::new(s))
        }
    }
}

impl From<InputSource> for String {
    fn from(src: InputSource) -> Self {
        match src {
            InputSource::Local => LOCAL_SOURCE.to_string(),
            InputSource::Task(t) => t.into_string(),
        }
    }
}

impl InputSource {
    pub fn producer(&self) -> Option<&TaskId> {
        match self {
            InputSource::Local => None,
            InputSource::Task(t) => Some(t),
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, InputSource::Local)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDecl {
    pub name: DataName,
    pub format: FormatTag,
    #[serde(rename = "from")]
    pub source: InputSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDecl {
    pub name: DataName,
    pub format: FormatTag,
}

/// One workflow activity. `statement_count` is the task's `t_e`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(rename = "id")]
    pub task_id: TaskId,
    #[serde(rename = "statements")]
    pub statement_count: u32,
    #[serde(default)]
    pub inputs: Vec<InputDecl>,
    #[serde(default)]
    pub outputs: Vec<OutputDecl>,
    #[serde(rename = "resources", default)]
    pub resource_sequence: Vec<ResourceId>,
    #[serde(default)]
    pub local_only: bool,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<TaskId>, statement_count: u32) -> Self {
        TaskSpec {
            task_id: task_id.into(),
            statement_count,
            inputs: Vec::new(),
            outputs: Vec::new(),
            resource_sequence: Vec::new(),
            local_only: false,
        }
    }

    pub fn with_input(mut self, name: &str, format: FormatTag, from: &str) -> Self {
        self.inputs.push(InputDecl { name: DataName::new(name), format, source: InputSource::from(from.to_string()) });
        self
    }

    pub fn with_output(mut self, name: &str, format: FormatTag) -> Self {
        self.outputs.push(OutputDecl { name: DataName::new(name), format });
        self
    }

    pub fn with_resources(mut self, resources: &[&str]) -> Self {
        self.resource_sequence.extend(resources.iter().map(|r| ResourceId::new(*r)));
        self
    }

    pub fn local_only(mut self) -> Self {
        self.local_only = true;
        self
    }

    pub fn input(&self, name: &DataName) -> Option<&InputDecl> {
        self.inputs.iter().find(|i| &i.name == name)
    }

    pub fn output(&self, name: &DataName) -> Option<&OutputDecl> {
        self.outputs.iter().find(|o| &o.name == name)
    }

    /// Resources in acquisition order: the global (lexicographic) order,
    /// independent of the declared sequence.
    pub fn acquisition_order(&self) -> Vec<ResourceId> {
        self.resource_sequence.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// Total executable statements of a task, as registered with the server and
/// bound into its agent.
pub fn compute_te(task: &TaskSpec) -> u32 {
    task.statement_count
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: TaskId,
    pub to: TaskId,
}

impl Edge {
    pub fn new(from: impl Into<TaskId>, to: impl Into<TaskId>) -> Self {
        Edge { from: from.into(), to: to.into() }
    }
}

/// A produced data item: its name, format and producing task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDecl {
    pub name: DataName,
    pub format: FormatTag,
    pub producer: TaskId,
}

/// A process definition as read from a definition file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub process_id: ProcessId,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub resources: Vec<ResourceId>,
}

impl WorkflowSpec {
    pub fn new(process_id: impl Into<ProcessId>) -> Self {
        WorkflowSpec { process_id: process_id.into(), tasks: Vec::new(), edges: Vec::new(), resources: Vec::new() }
    }

    pub fn with_task(mut self, task: TaskSpec) -> Self {
        self.tasks.push(task);
        self
    }

    pub fn with_edge(mut self, from: &str, to: &str) -> Self {
        self.edges.push(Edge::new(from, to));
        self
    }

    pub fn with_resource(mut self, resource: &str) -> Self {
        self.resources.push(ResourceId::new(resource));
        self
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| &t.task_id == id)
    }

    /// One declaration per task output, in task order.
    pub fn data_decls(&self) -> Vec<DataDecl> {
        self.tasks
            .iter()
            .flat_map(|t| {
                t.outputs.iter().map(move |o| DataDecl {
                    name: o.name.clone(),
                    format: o.format,
                    producer: t.task_id.clone(),
                })
            })
            .collect()
    }

    pub fn predecessors(&self) -> BTreeMap<TaskId, BTreeSet<TaskId>> {
        let mut preds: BTreeMap<TaskId, BTreeSet<TaskId>> =
            self.tasks.iter().map(|t| (t.task_id.clone(), BTreeSet::new())).collect();
        for e in &self.edges {
            preds.entry(e.to.clone()).or_default().insert(e.from.clone());
        }
        preds
    }

    pub fn successors(&self) -> BTreeMap<TaskId, BTreeSet<TaskId>> {
        let mut succs: BTreeMap<TaskId, BTreeSet<TaskId>> =
            self.tasks.iter().map(|t| (t.task_id.clone(), BTreeSet::new())).collect();
        for e in &self.edges {
            succs.entry(e.from.clone()).or_default().insert(e.to.clone());
        }
        succs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_te_is_the_statement_count() {
        assert_eq!(compute_te(&TaskSpec::new("A", 7)), 7);
        assert_eq!(compute_te(&TaskSpec::new("A", 1)), 1);
    }

    #[test]
    fn acquisition_order_ignores_declared_sequence() {
        let t = TaskSpec::new("A", 1).with_resources(&["R2", "R1", "R2"]);
        assert_eq!(t.acquisition_order(), vec![ResourceId::new("R1"), ResourceId::new("R2")]);
    }

    #[test]
    fn input_source_local_marker() {
        assert_eq!(InputSource::from("local".to_string()), InputSource::Local);
        assert_eq!(String::from(InputSource::Task(TaskId::new("A"))), "A");
    }

    #[test]
    fn data_decls_follow_outputs() {
        let spec = WorkflowSpec::new("P")
            .with_task(TaskSpec::new("A", 1).with_output("x", FormatTag::Int))
            .with_task(TaskSpec::new("B", 1).with_output("y", FormatTag::Text));
        let decls = spec.data_decls();
        assert_eq!(decls.len(), 2);
        assert_eq!(decls[1].producer, TaskId::new("B"));
        assert_eq!(decls[1].format, FormatTag::Text);
    }
}
