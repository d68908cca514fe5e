//! Deterministic discrete-event execution of a configured process.
//!
//! Each task's agent reacts to delivered events: routed data, completion
//! signals, acknowledgments, consistency updates, resend requests, and its
//! own `Tick`s, one per executed statement. Emitted events are due one
//! logical step after the event that caused them. Ties are broken by the
//! seeded [`EventQueue`], so `(process, plan, seed)` fixes the whole trace.

mod fault;
mod queue;
mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::agent::{
    propagate_consistent_copy, AckOutcome, AgentError, AgentPhase, AgentState, CommitOutcome, DataItem, Readiness,
    Routing, StepOutcome, ValidationResult, VersionCounter,
};
use crate::model::{DataName, ResourceId, TaskId};
use crate::server::{ConfiguredProcess, EscalationResponse, Grant, ResourceManager, ServerError, ServerState};

pub use fault::{FaultDecision, FaultPlan, FaultSite, FormatCorruption, PlanViolation, StaleReplica, StatementFault};
pub use queue::EventQueue;
pub use trace::{
    parse_trace, trace_to_jsonl, write_trace, DataConsistency, Outcome, TaskStats, TraceEvent, TraceRecord,
    WorkflowReport,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Deliver { item: DataItem, from: TaskId, to: TaskId, resend: bool },
    CompletionSignal { from: TaskId, to: TaskId },
    Ack { from: TaskId, to: TaskId },
    ConsistencyUpdate { item: DataItem, holder: TaskId },
    ResendRequest { name: DataName, from: TaskId, to: TaskId },
    Tick(TaskId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: u64,
    pub kind: EventKind,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("fault plan does not fit the process: {}", join(.0))]
    InvalidPlan(Vec<PlanViolation>),
    #[error("invariant violation: {diagnostic}")]
    Invariant { diagnostic: String, trace: Vec<TraceRecord> },
}

fn join(v: &[PlanViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug)]
enum Abort {
    Agent(AgentError),
    Server(ServerError),
    Stalled(String),
}

impl From<AgentError> for Abort {
    fn from(e: AgentError) -> Self {
        Abort::Agent(e)
    }
}

impl From<ServerError> for Abort {
    fn from(e: ServerError) -> Self {
        Abort::Server(e)
    }
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::Agent(e) => e.fmt(f),
            Abort::Server(e) => e.fmt(f),
            Abort::Stalled(msg) => f.write_str(msg),
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace: Vec<TraceRecord>,
    pub report: WorkflowReport,
    pub agents: BTreeMap<TaskId, AgentState>,
    pub server: ServerState,
}

/// Harness-side bookkeeping for one task.
#[derive(Debug, Default)]
struct TaskRuntime {
    /// Direct predecessors that have not yet signalled or delivered.
    waiting_on: BTreeSet<TaskId>,
    /// Names still expected from each producer.
    expected: BTreeMap<TaskId, BTreeSet<DataName>>,
    tick_pending: bool,
    acquiring: bool,
    to_acquire: VecDeque<ResourceId>,
}

struct Simulation<'a> {
    process: &'a ConfiguredProcess,
    plan: &'a FaultPlan,
    seed: u64,
    agents: BTreeMap<TaskId, AgentState>,
    server: ServerState,
    locks: ResourceManager,
    versions: VersionCounter,
    queue: EventQueue,
    runtime: BTreeMap<TaskId, TaskRuntime>,
    trace: Vec<TraceRecord>,
    now: u64,
    events: u64,
    outcome: Option<Outcome>,
}

/// Runs `process` to quiescence under `plan`.
pub fn run_workflow(process: &ConfiguredProcess, plan: &FaultPlan, seed: u64) -> Result<SimRun, SimError> {
    plan.check(&process.spec).map_err(SimError::InvalidPlan)?;
    let mut sim = Simulation::new(process, plan, seed);
    match sim.run() {
        Ok(()) => Ok(sim.finish()),
        Err(abort) => {
            let diagnostic = abort.to_string();
            sim.record(None, TraceEvent::Warning { message: format!("aborted: {diagnostic}") });
            Err(SimError::Invariant { diagnostic, trace: sim.trace })
        }
    }
}

impl<'a> Simulation<'a> {
    fn new(process: &'a ConfiguredProcess, plan: &'a FaultPlan, seed: u64) -> Self {
        let spec = &process.spec;
        let runtime = spec
            .tasks
            .iter()
            .map(|t| {
                let mut expected: BTreeMap<TaskId, BTreeSet<DataName>> = BTreeMap::new();
                for input in &t.inputs {
                    if let Some(p) = input.source.producer() {
                        expected.entry(p.clone()).or_default().insert(input.name.clone());
                    }
                }
                let rt = TaskRuntime {
                    waiting_on: spec.predecessors_of(&t.task_id).clone(),
                    expected,
                    to_acquire: t.acquisition_order().into(),
                    ..Default::default()
                };
                (t.task_id.clone(), rt)
            })
            .collect();
        Simulation {
            process,
            plan,
            seed,
            agents: process.agents.clone(),
            server: process.server.clone(),
            locks: ResourceManager::new(process.server.schedule.clone()),
            versions: VersionCounter::default(),
            queue: EventQueue::new(seed),
            runtime,
            trace: Vec::new(),
            now: 0,
            events: 0,
            outcome: None,
        }
    }

    fn record(&mut self, task: Option<&TaskId>, event: TraceEvent) {
        let time = self.trace.len() as u64;
        self.trace.push(TraceRecord { time, task: task.cloned(), event });
    }

    fn emit(&mut self, kind: EventKind) {
        self.queue.push(SimEvent { time: self.now + 1, kind });
    }

    fn agent(&mut self, task: &TaskId) -> &mut AgentState {
        self.agents.get_mut(task).expect("events only name configured tasks")
    }

    fn rt(&mut self, task: &TaskId) -> &mut TaskRuntime {
        self.runtime.get_mut(task).expect("events only name configured tasks")
    }

    fn schedule_tick(&mut self, task: &TaskId) {
        let rt = self.rt(task);
        if !rt.tick_pending {
            rt.tick_pending = true;
            self.emit(EventKind::Tick(task.clone()));
        }
    }

    fn seed_stale_replicas(&mut self) {
        let decls = self.process.spec.data_decls();
        for stale in &self.plan.stale_replicas {
            let FaultDecision::SeedStale { version } =
                self.plan.apply_fault(FaultSite::Replica { data: &stale.data, holder: &stale.holder })
            else {
                continue;
            };
            let format = decls.iter().find(|d| d.name == stale.data).expect("plan checked").format;
            let payload = format!("stale:{}:v{version}", stale.data).into_bytes();
            let item = DataItem::new(stale.data.clone(), format, version, payload, stale.holder.clone());
            self.versions.observe(&stale.data, version);
            self.agent(&stale.holder).storage_mut().put(item);
        }
    }

    fn run(&mut self) -> Result<(), Abort> {
        self.seed_stale_replicas();
        let roots: Vec<TaskId> = self
            .process
            .spec
            .topological_order()
            .iter()
            .filter(|t| self.runtime[*t].waiting_on.is_empty())
            .cloned()
            .collect();
        for t in &roots {
            self.schedule_tick(t);
        }

        while self.outcome.is_none() {
            let Some(event) = self.queue.next_event() else { break };
            self.events += 1;
            self.now = self.now.max(event.time);
            self.handle(event.kind)?;
        }

        if self.outcome.is_none() {
            let process = self.process.process_id().clone();
            match self.server.record_completion(&process, self.agents.values()) {
                Ok(ack) => {
                    self.record(None, TraceEvent::ProcessComplete { process: ack.process });
                    self.outcome = Some(Outcome::Completed);
                }
                Err(ServerError::PrematureCompletion { pending, .. }) => {
                    return Err(Abort::Stalled(format!("event queue drained with unfinished tasks {pending:?}")));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), Abort> {
        match kind {
            EventKind::Tick(task) => {
                self.rt(&task).tick_pending = false;
                self.on_tick(&task)
            }
            EventKind::Deliver { item, from, to, resend } => self.on_deliver(item, from, to, resend),
            EventKind::CompletionSignal { from, to } => {
                self.emit(EventKind::Ack { from: to.clone(), to: from.clone() });
                self.predecessor_done(&to, &from);
                Ok(())
            }
            EventKind::Ack { from, to } => {
                self.record(Some(&to), TraceEvent::AckReceived { from: from.clone() });
                if self.agent(&to).receive_ack(&from)? == AckOutcome::Unexpected {
                    self.record(Some(&to), TraceEvent::Warning { message: format!("unexpected ack from {from}") });
                }
                Ok(())
            }
            EventKind::ConsistencyUpdate { item, holder } => {
                let update = crate::agent::ConsistencyUpdate { item, holder: holder.clone() };
                update.deliver(self.agent(&holder).storage_mut());
                self.record(
                    Some(&holder),
                    TraceEvent::ConsistencyUpdated { data: update.item.name.clone(), version: update.item.version },
                );
                Ok(())
            }
            EventKind::ResendRequest { name, from, to } => self.on_resend(name, from, to),
        }
    }

    fn on_tick(&mut self, task: &TaskId) -> Result<(), Abort> {
        match self.agents[task].phase() {
            AgentPhase::Idle if self.runtime[task].waiting_on.is_empty() => {
                self.agent(task).begin_validation()?;
                self.validate(task)
            }
            AgentPhase::Validating if self.runtime[task].acquiring => self.acquire(task),
            AgentPhase::Validating => self.validate(task),
            AgentPhase::Executing => self.step(task),
            _ => Ok(()),
        }
    }

    fn validate(&mut self, task: &TaskId) -> Result<(), Abort> {
        match self.agents[task].validate_inputs()? {
            ValidationResult::Bypassed => {
                self.rt(task).acquiring = true;
                self.acquire(task)
            }
            ValidationResult::Ready { propagate, .. } => {
                for (item, stale) in propagate {
                    for update in propagate_consistent_copy(&item, &stale) {
                        self.emit(EventKind::ConsistencyUpdate { item: update.item, holder: update.holder });
                    }
                }
                self.rt(task).acquiring = true;
                self.acquire(task)
            }
            ValidationResult::Waiting(_) => Ok(self.agent(task).wait_for_data()?),
            ValidationResult::FormatError(mismatches) => {
                for m in &mismatches {
                    self.record(
                        Some(task),
                        TraceEvent::FormatSignaled {
                            data: m.name.clone(),
                            predecessor: m.predecessor.clone(),
                            declared: m.declared,
                            found: m.found,
                        },
                    );
                }
                for req in self.agent(task).signal_format_error(&mismatches)? {
                    self.emit(EventKind::ResendRequest { name: req.name, from: req.requester, to: req.to });
                }
                Ok(())
            }
        }
    }

    /// Takes resources in global order; a queued request parks the task
    /// until the lock table hands the resource over.
    fn acquire(&mut self, task: &TaskId) -> Result<(), Abort> {
        while let Some(resource) = self.runtime[task].to_acquire.front().cloned() {
            match self.locks.grant_resource(&resource, task)? {
                Grant::Granted => {
                    self.rt(task).to_acquire.pop_front();
                }
                Grant::Queued => return Ok(()),
            }
        }
        self.rt(task).acquiring = false;
        self.agent(task).start_execution()?;
        self.schedule_tick(task);
        Ok(())
    }

    fn step(&mut self, task: &TaskId) -> Result<(), Abort> {
        let agent = self.agents.get_mut(task).expect("configured task");
        let attempt = agent.attempts() + 1;
        let (outcome, _published) = agent.step(self.plan, &mut self.versions)?;
        if let StepOutcome::Executed { index } = outcome {
            self.record(Some(task), TraceEvent::StatementExecuted { index, attempt });
        }
        if self.agents[task].phase() == AgentPhase::CommitPending {
            self.commit(task)
        } else {
            self.schedule_tick(task);
            Ok(())
        }
    }

    fn commit(&mut self, task: &TaskId) -> Result<(), Abort> {
        match self.agent(task).try_commit()? {
            CommitOutcome::Committed => {
                let t_exec = self.agents[task].t_exec();
                self.record(Some(task), TraceEvent::Committed { t_exec });
                for (_, next) in self.locks.release_all(task) {
                    self.schedule_tick(&next);
                }
                self.route(task)
            }
            CommitOutcome::Retry { offset } => {
                let attempt = self.agents[task].attempts();
                self.record(Some(task), TraceEvent::CommitFailed { attempt, offset });
                self.schedule_tick(task);
                Ok(())
            }
            CommitOutcome::Escalate => {
                let agent = &self.agents[task];
                let (attempt, offset) = (agent.attempts(), agent.t_exec());
                self.record(Some(task), TraceEvent::CommitFailed { attempt, offset });
                self.record(Some(task), TraceEvent::Escalated { attempts: attempt });
                let agent = self.agents.get_mut(task).expect("configured task");
                match self.server.provide_alternate_resource(agent)? {
                    EscalationResponse::Alternate(assignment) => {
                        self.record(
                            Some(task),
                            TraceEvent::AlternateResourceAssigned { resource: assignment.resource },
                        );
                        self.schedule_tick(task);
                    }
                    EscalationResponse::Abandon => {
                        self.record(
                            Some(task),
                            TraceEvent::Warning {
                                message: format!("task {task} abandoned after failing on its alternate resource"),
                            },
                        );
                        self.outcome = Some(Outcome::TaskAbandoned);
                    }
                }
                Ok(())
            }
        }
    }

    fn route(&mut self, task: &TaskId) -> Result<(), Abort> {
        let registry = self.server.prefetch.entries_for(task).to_vec();
        let successors = self.process.spec.successors_of(task).clone();
        for routing in self.agent(task).route_outputs(&registry, &successors)? {
            match routing {
                Routing::Transfer { mut item, to } => {
                    if let FaultDecision::Corrupt { format, .. } =
                        self.plan.apply_fault(FaultSite::Transfer { data: &item.name })
                    {
                        item.format = format;
                    }
                    self.emit(EventKind::Deliver { item, from: task.clone(), to, resend: false });
                }
                Routing::CompletionSignal { to } => {
                    self.emit(EventKind::CompletionSignal { from: task.clone(), to });
                }
            }
        }
        Ok(())
    }

    fn on_deliver(&mut self, item: DataItem, from: TaskId, to: TaskId, resend: bool) -> Result<(), Abort> {
        self.record(
            Some(&to),
            TraceEvent::DataTransferred {
                data: item.name.clone(),
                from: from.clone(),
                version: item.version,
                format: item.format,
                resend,
            },
        );
        let name = item.name.clone();
        let readiness = self.agent(&to).accept_delivery(item)?;

        let rt = self.rt(&to);
        let all_received = match rt.expected.get_mut(&from) {
            Some(names) => names.remove(&name) && names.is_empty(),
            None => false,
        };
        if all_received {
            self.emit(EventKind::Ack { from: to.clone(), to: from.clone() });
            self.predecessor_done(&to, &from);
        }
        if readiness == Readiness::Revalidate {
            self.schedule_tick(&to);
        }
        Ok(())
    }

    fn predecessor_done(&mut self, task: &TaskId, pred: &TaskId) {
        let rt = self.rt(task);
        rt.waiting_on.remove(pred);
        if rt.waiting_on.is_empty() && self.agents[task].phase() == AgentPhase::Idle {
            self.schedule_tick(task);
        }
    }

    fn on_resend(&mut self, name: DataName, requester: TaskId, producer: TaskId) -> Result<(), Abort> {
        if let FaultDecision::Corrupt { correctable: false, .. } =
            self.plan.apply_fault(FaultSite::Transfer { data: &name })
        {
            self.record(
                Some(&producer),
                TraceEvent::Warning { message: format!("{name} cannot be resent in format required by {requester}") },
            );
            self.outcome = Some(Outcome::FormatUnrecoverable);
            return Ok(());
        }
        let item = self.agents[&producer]
            .storage()
            .get(&name, &producer)
            .cloned()
            .ok_or_else(|| AgentError::MissingOutput { task: producer.clone(), name: name.clone() })?;
        self.emit(EventKind::Deliver { item, from: producer, to: requester, resend: true });
        Ok(())
    }

    fn finish(self) -> SimRun {
        let outcome = self.outcome.expect("a finished run has an outcome");
        let tasks = self
            .agents
            .iter()
            .map(|(id, a)| {
                let committed = u32::from(a.phase().is_committed());
                let stats = TaskStats {
                    t_e: a.t_e(),
                    t_exec: a.t_exec(),
                    attempts_used: a.commit_failures() + committed,
                    commit_failures: a.commit_failures(),
                    statements_executed: a.statements_executed(),
                    escalations: a.escalations(),
                    final_phase: a.phase(),
                };
                (id.clone(), stats)
            })
            .collect();
        let report = WorkflowReport {
            process_id: self.process.process_id().clone(),
            outcome,
            seed: self.seed,
            tasks,
            consistency: consistency_summary(&self.agents),
            total_events: self.events,
            trace_records: self.trace.len(),
        };
        SimRun { trace: self.trace, report, agents: self.agents, server: self.server }
    }
}

/// Per data name: highest version, the tasks holding any replica, and
/// whether every replica agrees on `(version, payload)`.
pub fn consistency_summary(agents: &BTreeMap<TaskId, AgentState>) -> BTreeMap<DataName, DataConsistency> {
    type Replicas = (BTreeSet<TaskId>, BTreeSet<(u32, Vec<u8>)>);
    let mut by_name: BTreeMap<DataName, Replicas> = BTreeMap::new();
    for (id, agent) in agents {
        for item in agent.storage().iter() {
            let entry = by_name.entry(item.name.clone()).or_default();
            entry.0.insert(id.clone());
            entry.1.insert((item.version, item.payload.clone()));
        }
    }
    by_name
        .into_iter()
        .map(|(name, (holders, contents))| {
            let version = contents.iter().map(|(v, _)| *v).max().unwrap_or(0);
            let summary =
                DataConsistency { version, holders: holders.into_iter().collect(), converged: contents.len() == 1 };
            (name, summary)
        })
        .collect()
}
