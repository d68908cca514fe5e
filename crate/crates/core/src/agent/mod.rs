//! The synchronizing agent bound to every workflow activity.
//!
//! An agent validates its task's inputs, executes the task's statements while
//! counting them in `t_exec`, commits the task once `t_exec == t_e` (or
//! resumes at offset `t_exec` after a truncated attempt), escalates after
//! `max_attempts` failed commits, and finally routes outputs to consumers and
//! waits for their acknowledgments.
//!
//! Every phase change goes through [`AgentState::transition`], which rejects
//! moves outside the phase graph.

mod phase;
mod storage;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{DataName, FormatTag, TaskId, TaskSpec};

pub use phase::AgentPhase;
pub use storage::{
    propagate_consistent_copy, select_latest, ConsistencyUpdate, DataItem, LocalStorage, VersionCounter,
};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("task {task}: {op} called in phase {phase}")]
    WrongPhase { task: TaskId, op: &'static str, phase: AgentPhase },
    #[error("task {task}: illegal transition {from} -> {to}")]
    IllegalTransition { task: TaskId, from: AgentPhase, to: AgentPhase },
    #[error("task {task}: t_exec {t_exec} exceeds t_e {t_e}")]
    OffsetOverrun { task: TaskId, t_exec: u32, t_e: u32 },
    #[error("task {task}: registered output {name} was never published")]
    MissingOutput { task: TaskId, name: DataName },
}

/// Identifies one statement execution for fault lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatementSite<'a> {
    pub task: &'a TaskId,
    /// 1-based attempt number on the current resource.
    pub attempt: u32,
    pub on_alternate: bool,
    pub index: u32,
}

/// Decides whether execution truncates before a given statement.
pub trait StatementFaults {
    fn truncates(&self, site: &StatementSite<'_>) -> bool;
}

/// A probe that never fires.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaults;

impl StatementFaults for NoFaults {
    fn truncates(&self, _site: &StatementSite<'_>) -> bool {
        false
    }
}

impl<F> StatementFaults for F
where
    F: Fn(&StatementSite<'_>) -> bool,
{
    fn truncates(&self, site: &StatementSite<'_>) -> bool {
        self(site)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatMismatch {
    pub name: DataName,
    pub predecessor: TaskId,
    pub declared: FormatTag,
    pub found: FormatTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    /// Every input present in its declared format. `propagate` lists, per
    /// input with stale replicas, the selected copy and the stale holders.
    Ready {
        selected: Vec<DataItem>,
        propagate: Vec<(DataItem, BTreeSet<TaskId>)>,
    },
    Waiting(BTreeSet<DataName>),
    FormatError(Vec<FormatMismatch>),
    Bypassed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Executed { index: u32 },
    Truncated { offset: u32 },
}

/// Result of running statements until the task reaches `CommitPending`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Execution {
    pub executed: Vec<u32>,
    pub truncated_at: Option<u32>,
    pub published: Vec<DataItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed,
    Retry { offset: u32 },
    Escalate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routing {
    Transfer { item: DataItem, to: TaskId },
    CompletionSignal { to: TaskId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResendRequest {
    pub name: DataName,
    pub requester: TaskId,
    pub to: TaskId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckOutcome {
    Pending { remaining: usize },
    Completed,
    Unexpected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readiness {
    Unchanged,
    Revalidate,
}

/// Per-task agent state. `t_e` is fixed at binding; `t_exec` counts
/// statements executed so far and is the resume offset after truncation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    task: TaskSpec,
    phase: AgentPhase,
    t_e: u32,
    t_exec: u32,
    attempts: u32,
    max_attempts: u32,
    storage: LocalStorage,
    pending_acks: BTreeSet<TaskId>,
    awaiting_corrections: BTreeSet<DataName>,
    on_alternate: bool,
    statements_executed: u64,
    commit_failures: u32,
    escalations: u32,
    history: Vec<AgentPhase>,
}

/// Payload seeded for a local input.
pub fn local_payload(task: &TaskId, name: &DataName) -> Vec<u8> {
    format!("local:{task}:{name}").into_bytes()
}

/// Payload written by a task's final statement.
pub fn published_payload(task: &TaskId, name: &DataName, version: u32) -> Vec<u8> {
    format!("{task}:{name}:v{version}").into_bytes()
}

pub fn bind_agent(task: &TaskSpec, max_attempts: u32) -> AgentState {
    assert!(max_attempts >= 1, "max_attempts must be positive");
    let mut storage = LocalStorage::new();
    for input in task.inputs.iter().filter(|i| i.source.is_local()) {
        storage.put(DataItem::new(
            input.name.clone(),
            input.format,
            1,
            local_payload(&task.task_id, &input.name),
            task.task_id.clone(),
        ));
    }
    AgentState {
        task: task.clone(),
        phase: AgentPhase::Idle,
        t_e: crate::model::compute_te(task),
        t_exec: 0,
        attempts: 0,
        max_attempts,
        storage,
        pending_acks: BTreeSet::new(),
        awaiting_corrections: BTreeSet::new(),
        on_alternate: false,
        statements_executed: 0,
        commit_failures: 0,
        escalations: 0,
        history: vec![AgentPhase::Idle],
    }
}

impl AgentState {
    pub fn task_id(&self) -> &TaskId {
        &self.task.task_id
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn phase(&self) -> AgentPhase {
        self.phase
    }

    pub fn t_e(&self) -> u32 {
        self.t_e
    }

    pub fn t_exec(&self) -> u32 {
        self.t_exec
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    pub fn storage(&self) -> &LocalStorage {
        &self.storage
    }

    pub fn storage_mut(&mut self) -> &mut LocalStorage {
        &mut self.storage
    }

    pub fn pending_acks(&self) -> &BTreeSet<TaskId> {
        &self.pending_acks
    }

    pub fn awaiting_corrections(&self) -> &BTreeSet<DataName> {
        &self.awaiting_corrections
    }

    pub fn on_alternate(&self) -> bool {
        self.on_alternate
    }

    /// Lifetime count of executed statements, across all attempts.
    pub fn statements_executed(&self) -> u64 {
        self.statements_executed
    }

    pub fn commit_failures(&self) -> u32 {
        self.commit_failures
    }

    pub fn escalations(&self) -> u32 {
        self.escalations
    }

    /// Every phase entered, starting with `Idle`.
    pub fn history(&self) -> &[AgentPhase] {
        &self.history
    }

    pub fn transition(&mut self, to: AgentPhase) -> Result<(), AgentError> {
        if !self.phase.can_transition(to) {
            return Err(AgentError::IllegalTransition { task: self.task_id().clone(), from: self.phase, to });
        }
        self.phase = to;
        self.history.push(to);
        Ok(())
    }

    fn expect_phase(&self, op: &'static str, phases: &[AgentPhase]) -> Result<(), AgentError> {
        if phases.contains(&self.phase) {
            Ok(())
        } else {
            Err(AgentError::WrongPhase { task: self.task_id().clone(), op, phase: self.phase })
        }
    }

    /// Idle, WaitingForData or FormatFault → Validating.
    pub fn begin_validation(&mut self) -> Result<(), AgentError> {
        self.transition(AgentPhase::Validating)
    }

    /// Runs the data validation checks against local storage.
    pub fn validate_inputs(&self) -> Result<ValidationResult, AgentError> {
        self.expect_phase("validate_inputs", &[AgentPhase::Validating])?;
        if self.task.local_only {
            return Ok(ValidationResult::Bypassed);
        }

        let missing: BTreeSet<DataName> =
            self.task.inputs.iter().filter(|i| !self.storage.contains(&i.name)).map(|i| i.name.clone()).collect();
        if !missing.is_empty() {
            return Ok(ValidationResult::Waiting(missing));
        }

        let mismatches: Vec<FormatMismatch> = self
            .task
            .inputs
            .iter()
            .filter_map(|i| {
                let bad = self.storage.replicas(&i.name).find(|r| r.format != i.format)?;
                Some(FormatMismatch {
                    name: i.name.clone(),
                    predecessor: i.source.producer().unwrap_or(self.task_id()).clone(),
                    declared: i.format,
                    found: bad.format,
                })
            })
            .collect();
        if !mismatches.is_empty() {
            return Ok(ValidationResult::FormatError(mismatches));
        }

        let mut selected = Vec::with_capacity(self.task.inputs.len());
        let mut propagate = Vec::new();
        for input in &self.task.inputs {
            let latest = select_latest(self.storage.replicas(&input.name));
            let stale: BTreeSet<TaskId> = self
                .storage
                .replicas(&input.name)
                .filter(|r| r.version < latest.version)
                .map(|r| r.holder.clone())
                .collect();
            if !stale.is_empty() {
                propagate.push((latest.clone(), stale));
            }
            selected.push(latest.clone());
        }
        Ok(ValidationResult::Ready { selected, propagate })
    }

    pub fn wait_for_data(&mut self) -> Result<(), AgentError> {
        self.transition(AgentPhase::WaitingForData)
    }

    /// Validating → Executing with `t_exec` starting at zero.
    pub fn start_execution(&mut self) -> Result<(), AgentError> {
        self.expect_phase("start_execution", &[AgentPhase::Validating])?;
        self.t_exec = 0;
        self.transition(AgentPhase::Executing)
    }

    /// Asks each predecessor for a correctly formatted copy and parks the
    /// agent in `FormatFault` until all of them arrive.
    pub fn signal_format_error(&mut self, mismatches: &[FormatMismatch]) -> Result<Vec<ResendRequest>, AgentError> {
        self.transition(AgentPhase::FormatFault)?;
        self.awaiting_corrections = mismatches.iter().map(|m| m.name.clone()).collect();
        Ok(mismatches
            .iter()
            .map(|m| ResendRequest {
                name: m.name.clone(),
                requester: self.task_id().clone(),
                to: m.predecessor.clone(),
            })
            .collect())
    }

    /// Stores a routed item. Returns `Revalidate` when the arrival moved the
    /// agent back into `Validating`.
    pub fn accept_delivery(&mut self, item: DataItem) -> Result<Readiness, AgentError> {
        let corrected = self.task.input(&item.name).is_some_and(|i| i.format == item.format);
        let name = item.name.clone();
        self.storage.put(item);
        match self.phase {
            AgentPhase::WaitingForData => {
                self.begin_validation()?;
                Ok(Readiness::Revalidate)
            }
            AgentPhase::FormatFault => {
                if corrected {
                    self.awaiting_corrections.remove(&name);
                }
                if self.awaiting_corrections.is_empty() {
                    self.begin_validation()?;
                    Ok(Readiness::Revalidate)
                } else {
                    Ok(Readiness::Unchanged)
                }
            }
            _ => Ok(Readiness::Unchanged),
        }
    }

    /// Executes the statement at offset `t_exec`, unless the probe truncates
    /// the attempt there. The final statement publishes every declared output.
    pub fn step(
        &mut self,
        faults: &dyn StatementFaults,
        versions: &mut VersionCounter,
    ) -> Result<(StepOutcome, Vec<DataItem>), AgentError> {
        self.expect_phase("step", &[AgentPhase::Executing])?;
        if self.t_exec >= self.t_e {
            return Err(AgentError::OffsetOverrun { task: self.task_id().clone(), t_exec: self.t_exec, t_e: self.t_e });
        }
        let site = StatementSite {
            task: &self.task.task_id,
            attempt: self.attempts + 1,
            on_alternate: self.on_alternate,
            index: self.t_exec,
        };
        if faults.truncates(&site) {
            let offset = self.t_exec;
            self.transition(AgentPhase::CommitPending)?;
            return Ok((StepOutcome::Truncated { offset }, Vec::new()));
        }

        let index = self.t_exec;
        self.t_exec += 1;
        self.statements_executed += 1;
        let mut published = Vec::new();
        if self.t_exec == self.t_e {
            for out in &self.task.outputs {
                let version = versions.next(&out.name);
                let item = DataItem::new(
                    out.name.clone(),
                    out.format,
                    version,
                    published_payload(&self.task.task_id, &out.name, version),
                    self.task.task_id.clone(),
                );
                self.storage.put(item.clone());
                published.push(item);
            }
            self.transition(AgentPhase::CommitPending)?;
        }
        Ok((StepOutcome::Executed { index }, published))
    }

    /// Runs statements `t_exec..t_e` until the attempt finishes or truncates.
    pub fn execute_statements(
        &mut self,
        faults: &dyn StatementFaults,
        versions: &mut VersionCounter,
    ) -> Result<Execution, AgentError> {
        let mut run = Execution::default();
        while self.phase == AgentPhase::Executing {
            match self.step(faults, versions)? {
                (StepOutcome::Executed { index }, published) => {
                    run.executed.push(index);
                    run.published.extend(published);
                }
                (StepOutcome::Truncated { offset }, _) => run.truncated_at = Some(offset),
            }
        }
        Ok(run)
    }

    /// The task committer.
    pub fn try_commit(&mut self) -> Result<CommitOutcome, AgentError> {
        self.expect_phase("try_commit", &[AgentPhase::CommitPending])?;
        if self.t_exec > self.t_e {
            return Err(AgentError::OffsetOverrun { task: self.task_id().clone(), t_exec: self.t_exec, t_e: self.t_e });
        }
        if self.t_exec == self.t_e {
            self.transition(AgentPhase::Committed)?;
            return Ok(CommitOutcome::Committed);
        }
        self.attempts += 1;
        self.commit_failures += 1;
        if self.attempts < self.max_attempts {
            self.transition(AgentPhase::Executing)?;
            Ok(CommitOutcome::Retry { offset: self.t_exec })
        } else {
            self.transition(AgentPhase::Escalated)?;
            Ok(CommitOutcome::Escalate)
        }
    }

    /// Escalated → Executing on a fresh resource. Attempts restart; the
    /// offset is kept.
    pub fn resume_on_alternate(&mut self) -> Result<(), AgentError> {
        self.expect_phase("resume_on_alternate", &[AgentPhase::Escalated])?;
        self.attempts = 0;
        self.escalations += 1;
        self.on_alternate = true;
        self.transition(AgentPhase::Executing)
    }

    /// Fulfils pre-fetch requests and signals data-less successors.
    /// `registry` holds `(consumer, data name)` pairs registered with this
    /// task as producer.
    pub fn route_outputs(
        &mut self,
        registry: &[(TaskId, DataName)],
        successors: &BTreeSet<TaskId>,
    ) -> Result<Vec<Routing>, AgentError> {
        self.expect_phase("route_outputs", &[AgentPhase::Committed])?;
        let mut routes = Vec::new();
        let mut recipients = BTreeSet::new();
        for (consumer, name) in registry {
            let item = self
                .storage
                .get(name, self.task_id())
                .ok_or_else(|| AgentError::MissingOutput { task: self.task_id().clone(), name: name.clone() })?;
            routes.push(Routing::Transfer { item: item.clone(), to: consumer.clone() });
            recipients.insert(consumer.clone());
        }
        for s in successors {
            if recipients.insert(s.clone()) {
                routes.push(Routing::CompletionSignal { to: s.clone() });
            }
        }
        self.pending_acks = recipients;
        self.transition(AgentPhase::WaitingForAck)?;
        if self.pending_acks.is_empty() {
            self.transition(AgentPhase::Completed)?;
        }
        Ok(routes)
    }

    pub fn receive_ack(&mut self, from: &TaskId) -> Result<AckOutcome, AgentError> {
        if self.phase != AgentPhase::WaitingForAck || !self.pending_acks.remove(from) {
            return Ok(AckOutcome::Unexpected);
        }
        if self.pending_acks.is_empty() {
            self.transition(AgentPhase::Completed)?;
            Ok(AckOutcome::Completed)
        } else {
            Ok(AckOutcome::Pending { remaining: self.pending_acks.len() })
        }
    }
}
