//! The workflow server: loads and configures a process, keeps the `t_e`
//! registry and pre-fetch requests, schedules resources, answers escalations
//! and records process completion.

mod resources;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::agent::{bind_agent, AgentPhase, AgentState, DEFAULT_MAX_ATTEMPTS};
use crate::model::{compute_te, DataName, ProcessId, ResourceId, TaskId, ValidatedSpec};

pub use resources::{build_resource_schedule, Grant, ResourceManager, ResourceSchedule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("task {task} is not on the priority list of resource {resource}")]
    NotScheduled { resource: ResourceId, task: TaskId },
    #[error("escalation reported for task {task}, which is in phase {phase}")]
    NotEscalated { task: TaskId, phase: AgentPhase },
    #[error("completion of {process} recorded while tasks are unfinished: {pending:?}")]
    PrematureCompletion { process: ProcessId, pending: Vec<(TaskId, AgentPhase)> },
}

/// Data requests stored ahead of execution: producer → `(consumer, name)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrefetchRegistry {
    requests: BTreeMap<TaskId, Vec<(TaskId, DataName)>>,
}

impl PrefetchRegistry {
    pub fn register(&mut self, producer: TaskId, consumer: TaskId, name: DataName) {
        let list = self.requests.entry(producer).or_default();
        if !list.contains(&(consumer.clone(), name.clone())) {
            list.push((consumer, name));
            list.sort();
        }
    }

    pub fn entries_for(&self, producer: &TaskId) -> &[(TaskId, DataName)] {
        self.requests.get(producer).map_or(&[], Vec::as_slice)
    }

    /// All `(producer, consumer, name)` triples.
    pub fn triples(&self) -> BTreeSet<(TaskId, TaskId, DataName)> {
        self.requests.iter().flat_map(|(p, l)| l.iter().map(move |(c, n)| (p.clone(), c.clone(), n.clone()))).collect()
    }
}

/// Logical clock offsets per task. Synchronization zeroes every offset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClockTable {
    offsets: BTreeMap<TaskId, i64>,
}

impl ClockTable {
    pub fn from_offsets(offsets: impl IntoIterator<Item = (TaskId, i64)>) -> Self {
        ClockTable { offsets: offsets.into_iter().collect() }
    }

    pub fn offset(&self, task: &TaskId) -> Option<i64> {
        self.offsets.get(task).copied()
    }

    /// Restricts the table to `tasks` and zeroes all offsets.
    pub fn sync_clocks<'a>(&mut self, tasks: impl IntoIterator<Item = &'a TaskId>) {
        self.offsets = tasks.into_iter().map(|t| (t.clone(), 0)).collect();
    }

    pub fn is_synchronized(&self) -> bool {
        self.offsets.values().all(|o| *o == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlternateAssignment {
    pub task: TaskId,
    pub resource: ResourceId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EscalationResponse {
    Alternate(AlternateAssignment),
    /// The task already failed on its alternate.
    Abandon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionAck {
    pub process: ProcessId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ServerState {
    pub te_registry: BTreeMap<TaskId, u32>,
    pub prefetch: PrefetchRegistry,
    pub schedule: ResourceSchedule,
    pub clock: ClockTable,
    pub completions: BTreeSet<ProcessId>,
    pub escalations: Vec<AlternateAssignment>,
}

impl ServerState {
    /// Derives every configuration registry from `spec`, replacing what was
    /// there. Completions and escalation history are kept.
    pub fn configure(&mut self, spec: &ValidatedSpec) {
        self.te_registry = spec.tasks.iter().map(|t| (t.task_id.clone(), compute_te(t))).collect();
        self.clock.sync_clocks(spec.tasks.iter().map(|t| &t.task_id));
        self.prefetch = PrefetchRegistry::default();
        for task in &spec.tasks {
            for input in &task.inputs {
                if let Some(producer) = input.source.producer() {
                    self.prefetch.register(producer.clone(), task.task_id.clone(), input.name.clone());
                }
            }
        }
        self.schedule = build_resource_schedule(spec);
    }

    /// Handles an escalation: the first one for a task gets a fresh
    /// alternate resource and resumes the agent at its current offset with
    /// attempts reset; a second one abandons the task.
    pub fn provide_alternate_resource(&mut self, agent: &mut AgentState) -> Result<EscalationResponse, ServerError> {
        if agent.phase() != AgentPhase::Escalated {
            return Err(ServerError::NotEscalated { task: agent.task_id().clone(), phase: agent.phase() });
        }
        let task = agent.task_id().clone();
        let previous = self.escalations.iter().filter(|e| e.task == task).count();
        if previous > 0 || agent.on_alternate() {
            return Ok(EscalationResponse::Abandon);
        }
        let assignment = AlternateAssignment { resource: ResourceId::new(format!("{task}#alt{}", previous + 1)), task };
        self.escalations.push(assignment.clone());
        agent.resume_on_alternate().expect("an escalated agent can always resume");
        Ok(EscalationResponse::Alternate(assignment))
    }

    pub fn record_completion<'a>(
        &mut self,
        process: &ProcessId,
        agents: impl IntoIterator<Item = &'a AgentState>,
    ) -> Result<CompletionAck, ServerError> {
        let pending: Vec<(TaskId, AgentPhase)> = agents
            .into_iter()
            .filter(|a| a.phase() != AgentPhase::Completed)
            .map(|a| (a.task_id().clone(), a.phase()))
            .collect();
        if !pending.is_empty() {
            return Err(ServerError::PrematureCompletion { process: process.clone(), pending });
        }
        self.completions.insert(process.clone());
        Ok(CompletionAck { process: process.clone() })
    }
}

/// A loaded process: its spec, the server's configuration, and one bound
/// agent per task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfiguredProcess {
    pub spec: ValidatedSpec,
    pub server: ServerState,
    pub agents: BTreeMap<TaskId, AgentState>,
    pub max_attempts: u32,
}

impl ConfiguredProcess {
    pub fn process_id(&self) -> &ProcessId {
        &self.spec.process_id
    }

    /// Loads a changed definition, keeping completion and escalation history.
    pub fn reconfigure(self, spec: ValidatedSpec) -> ConfiguredProcess {
        let mut next = load_and_configure_with(spec, self.max_attempts);
        next.server.completions = self.server.completions;
        next.server.escalations = self.server.escalations;
        next
    }
}

pub fn load_and_configure(spec: ValidatedSpec) -> ConfiguredProcess {
    load_and_configure_with(spec, DEFAULT_MAX_ATTEMPTS)
}

pub fn load_and_configure_with(spec: ValidatedSpec, max_attempts: u32) -> ConfiguredProcess {
    let mut server = ServerState::default();
    server.configure(&spec);
    let agents = spec.tasks.iter().map(|t| (t.task_id.clone(), bind_agent(t, max_attempts))).collect();
    ConfiguredProcess { spec, server, agents, max_attempts }
}

#[cfg(test)]
mod tests;
