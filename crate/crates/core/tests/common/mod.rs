//! Shared helpers for the integration and acceptance suites: random workflow
//! and fault-plan generators, a brute-force definition checker, and a trace
//! invariant checker that works only from the trace, the spec and the final
//! agent states.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use syncflow::agent::AgentPhase;
use syncflow::model::{FormatTag, TaskId, TaskSpec, WorkflowSpec};
use syncflow::sim::{FaultPlan, FormatCorruption, Outcome, SimRun, StaleReplica, StatementFault, TraceEvent};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub const RESOURCE_POOL: [&str; 3] = ["R1", "R2", "R3"];

fn random_format(rng: &mut ChaCha8Rng) -> FormatTag {
    *FormatTag::ALL.choose(rng).unwrap()
}

/// A valid workflow of 1..=`max_tasks` tasks. Task `Ti` only ever depends on
/// lower-numbered tasks, so the edge relation is acyclic by construction.
pub fn random_workflow(rng: &mut ChaCha8Rng, max_tasks: usize) -> WorkflowSpec {
    let n = rng.gen_range(1..=max_tasks);
    let ids: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();

    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..j {
            if rng.gen_bool(0.35) {
                edges.push((i, j));
            }
        }
    }
    let mut ancestors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 0..n {
        for &(i, _) in edges.iter().filter(|(_, to)| *to == j) {
            let inherited = ancestors[i].clone();
            ancestors[j].insert(i);
            ancestors[j].extend(inherited);
        }
    }

    let outputs: Vec<Vec<(String, FormatTag)>> = (0..n)
        .map(|i| (0..rng.gen_range(0..=2)).map(|k| (format!("d{i}_{k}"), random_format(rng))).collect())
        .collect();

    let mut spec = WorkflowSpec::new(format!("p{}", rng.gen_range(0..1000)));
    for r in RESOURCE_POOL {
        spec = spec.with_resource(r);
    }
    for j in 0..n {
        let mut task = TaskSpec::new(ids[j].as_str(), rng.gen_range(1..=5));
        let local_only = rng.gen_bool(0.15);
        if !local_only {
            for &i in &ancestors[j] {
                for (name, format) in &outputs[i] {
                    if rng.gen_bool(0.5) {
                        task = task.with_input(name, *format, &ids[i]);
                    }
                }
            }
        }
        if local_only || rng.gen_bool(0.2) {
            task = task.with_input(&format!("l{j}"), random_format(rng), "local");
        }
        if local_only {
            task = task.local_only();
        }
        for (name, format) in &outputs[j] {
            task = task.with_output(name, *format);
        }
        if rng.gen_bool(0.4) {
            let mut used: Vec<&str> = RESOURCE_POOL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            used.shuffle(rng);
            task = task.with_resources(&used);
        }
        spec = spec.with_task(task);
    }
    for (i, j) in edges {
        spec = spec.with_edge(&ids[i], &ids[j]);
    }
    spec
}

/// `(data, consumer)` pairs for every non-local input.
pub fn consumed_pairs(spec: &WorkflowSpec) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for t in &spec.tasks {
        for input in t.inputs.iter().filter(|i| !i.source.is_local()) {
            pairs.push((input.name.to_string(), t.task_id.to_string()));
        }
    }
    pairs
}

/// A plan every run can recover from: at most one escalation per task, and
/// only correctable corruption.
pub fn random_recoverable_plan(rng: &mut ChaCha8Rng, spec: &WorkflowSpec, max_attempts: u32) -> FaultPlan {
    let mut plan = FaultPlan::default();
    for task in &spec.tasks {
        if !rng.gen_bool(0.3) {
            continue;
        }
        let t_e = task.statement_count;
        let escalate = rng.gen_bool(0.3);
        for attempt in 1..=max_attempts {
            if escalate || rng.gen_bool(0.3) {
                plan.statement_faults.push(StatementFault {
                    task: task.task_id.clone(),
                    attempt,
                    statement: rng.gen_range(0..t_e),
                    alternate: false,
                });
            }
        }
        if escalate {
            for attempt in 1..max_attempts {
                if rng.gen_bool(0.3) {
                    plan.statement_faults.push(StatementFault {
                        task: task.task_id.clone(),
                        attempt,
                        statement: rng.gen_range(0..t_e),
                        alternate: true,
                    });
                }
            }
        }
    }
    for (data, holder) in consumed_pairs(spec) {
        if rng.gen_bool(0.3) {
            plan.stale_replicas.push(StaleReplica {
                data: data.as_str().into(),
                holder: holder.as_str().into(),
                version: 1,
            });
        }
    }
    let consumed: BTreeSet<String> = consumed_pairs(spec).into_iter().map(|(d, _)| d).collect();
    for decl in spec.data_decls() {
        if consumed.contains(decl.name.as_str()) && rng.gen_bool(0.15) {
            let others: Vec<FormatTag> = FormatTag::ALL.iter().copied().filter(|f| *f != decl.format).collect();
            plan.format_corruptions.push(FormatCorruption {
                data: decl.name.clone(),
                corrupted: *others.choose(rng).unwrap(),
                correctable: true,
            });
        }
    }
    plan
}

/// Adds one terminal fault: either an uncorrectable corruption or a task
/// that keeps failing on its alternate resource.
pub fn make_terminal(rng: &mut ChaCha8Rng, spec: &WorkflowSpec, plan: &mut FaultPlan, max_attempts: u32) {
    let consumed: BTreeSet<String> = consumed_pairs(spec).into_iter().map(|(d, _)| d).collect();
    let decls: Vec<_> = spec.data_decls().into_iter().filter(|d| consumed.contains(d.name.as_str())).collect();
    if !decls.is_empty() && rng.gen_bool(0.5) {
        let decl = decls.choose(rng).unwrap();
        plan.format_corruptions.retain(|c| c.data != decl.name);
        let corrupted = FormatTag::ALL.iter().copied().find(|f| *f != decl.format).unwrap();
        plan.format_corruptions.push(FormatCorruption { data: decl.name.clone(), corrupted, correctable: false });
        return;
    }
    let task = spec.tasks.choose(rng).unwrap();
    plan.statement_faults.retain(|f| f.task != task.task_id);
    for alternate in [false, true] {
        for attempt in 1..=max_attempts {
            plan.statement_faults.push(StatementFault { task: task.task_id.clone(), attempt, statement: 0, alternate });
        }
    }
}

/// Accepts exactly the definitions the validator should accept, computed
/// the slow way: an explicit reachability matrix and a pairwise comparison
/// of every input against every task.
pub fn brute_force_accepts(spec: &WorkflowSpec) -> bool {
    let tasks = &spec.tasks;
    let n = tasks.len();
    if n == 0 {
        return false;
    }
    for (i, a) in tasks.iter().enumerate() {
        if a.task_id.as_str() == "local" || a.statement_count == 0 {
            return false;
        }
        if tasks[i + 1..].iter().any(|b| b.task_id == a.task_id) {
            return false;
        }
        for (k, x) in a.inputs.iter().enumerate() {
            if a.inputs[k + 1..].iter().any(|y| y.name == x.name) {
                return false;
            }
            if a.local_only && !x.source.is_local() {
                return false;
            }
        }
        for (k, x) in a.outputs.iter().enumerate() {
            if a.outputs[k + 1..].iter().any(|y| y.name == x.name) {
                return false;
            }
        }
    }
    let index = |id: &str| tasks.iter().position(|t| t.task_id.as_str() == id);

    let mut reach = vec![vec![false; n]; n];
    for e in &spec.edges {
        match (index(e.from.as_str()), index(e.to.as_str())) {
            (Some(a), Some(b)) => reach[a][b] = true,
            _ => return false,
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    if (0..n).any(|i| reach[i][i]) {
        return false;
    }

    for (ci, consumer) in tasks.iter().enumerate() {
        for input in &consumer.inputs {
            if input.source.is_local() {
                let clash = tasks.iter().enumerate().any(|(ti, t)| {
                    t.outputs.iter().any(|o| o.name == input.name)
                        || (ti != ci && t.inputs.iter().any(|i| i.source.is_local() && i.name == input.name))
                });
                if clash {
                    return false;
                }
                continue;
            }
            let producer = input.source.producer().unwrap();
            let Some(pi) = index(producer.as_str()) else { return false };
            let Some(out) = tasks[pi].outputs.iter().find(|o| o.name == input.name) else { return false };
            if !reach[pi][ci] || out.format != input.format {
                return false;
            }
        }
    }
    for (i, a) in tasks.iter().enumerate() {
        for b in &tasks[i + 1..] {
            if a.outputs.iter().any(|o| b.outputs.iter().any(|p| p.name == o.name)) {
                return false;
            }
        }
    }
    let declared: BTreeSet<_> = spec.resources.iter().collect();
    tasks.iter().all(|t| t.resource_sequence.iter().all(|r| declared.contains(r)))
}

pub const LEGAL_PHASE_EDGES: [(AgentPhase, AgentPhase); 13] = {
    use AgentPhase::*;
    [
        (Idle, Validating),
        (Validating, WaitingForData),
        (Validating, FormatFault),
        (Validating, Executing),
        (WaitingForData, Validating),
        (FormatFault, Validating),
        (Executing, CommitPending),
        (CommitPending, Executing),
        (CommitPending, Escalated),
        (CommitPending, Committed),
        (Escalated, Executing),
        (Committed, WaitingForAck),
        (WaitingForAck, Completed),
    ]
};

/// Which invariants to check.
#[derive(Debug, Clone, Copy)]
pub struct Checks {
    pub transactional: bool,
    pub convergence: bool,
    pub structural: bool,
}

impl Checks {
    pub const ALL: Checks = Checks { transactional: true, convergence: true, structural: true };
}

/// Checks one run against every trace invariant. Returns a description of
/// each violation found.
pub fn check_run(
    spec: &WorkflowSpec,
    plan: &FaultPlan,
    max_attempts: u32,
    run: &SimRun,
    checks: Checks,
) -> Vec<String> {
    let mut v = Vec::new();
    let trace = &run.trace;
    let preds = spec.predecessors();
    let t_e: BTreeMap<&str, u32> = spec.tasks.iter().map(|t| (t.task_id.as_str(), t.statement_count)).collect();

    let pos = |task: &str, kind: &str| trace.iter().position(|r| r.is_task(task) && r.kind() == kind);
    let exec_count = |task: &str| trace.iter().filter(|r| r.is_task(task) && r.kind() == "StatementExecuted").count();

    if checks.transactional {
        for t in &spec.tasks {
            let id = t.task_id.as_str();
            let Some(first) = pos(id, "StatementExecuted") else { continue };
            for p in preds.get(&t.task_id).into_iter().flatten() {
                match pos(p.as_str(), "Committed") {
                    Some(c) if c < first => {}
                    _ => v.push(format!("precedence: {id} executes at {first} before {p} committed")),
                }
            }
        }
        for t in &spec.tasks {
            let id = t.task_id.as_str();
            if pos(id, "Committed").is_some() && exec_count(id) != t_e[id] as usize {
                v.push(format!("conservation: {id} executed {} statements, t_e = {}", exec_count(id), t_e[id]));
            }
        }
    }

    if checks.structural {
        for (i, r) in trace.iter().enumerate() {
            if r.time != i as u64 || (i > 0 && trace[i - 1].time >= r.time) {
                v.push(format!("time: record {i} has time {}", r.time));
            }
        }
        for t in &spec.tasks {
            let id = t.task_id.as_str();
            let mut executed = 0u32;
            let mut failures = 0u32;
            let mut last_kind = "";
            for r in trace.iter().filter(|r| r.is_task(id)) {
                match &r.event {
                    TraceEvent::StatementExecuted { index, .. } => {
                        if *index != executed {
                            v.push(format!("offset: {id} executed index {index}, expected {executed}"));
                        }
                        executed += 1;
                    }
                    TraceEvent::CommitFailed { offset, attempt } => {
                        failures += 1;
                        if *offset != executed || *offset >= t_e[id] {
                            v.push(format!("commit: {id} failed at offset {offset} after {executed} statements"));
                        }
                        if *attempt != failures || failures > max_attempts {
                            v.push(format!("attempts: {id} failure {failures} reported as attempt {attempt}"));
                        }
                    }
                    TraceEvent::Escalated { attempts } => {
                        if failures != max_attempts || *attempts != max_attempts || last_kind != "CommitFailed" {
                            v.push(format!("escalation: {id} escalated after {failures} failures"));
                        }
                    }
                    TraceEvent::AlternateResourceAssigned { .. } => {
                        if last_kind != "Escalated" {
                            v.push(format!("escalation: {id} got an alternate without escalating"));
                        }
                        failures = 0;
                    }
                    TraceEvent::Committed { t_exec } if *t_exec != t_e[id] || executed != t_e[id] => {
                        v.push(format!("commit: {id} committed with t_exec {t_exec}, executed {executed}"));
                    }
                    _ => {}
                }
                last_kind = r.kind();
            }
        }

        // resources are held at least from a task's first commit-relevant
        // record to its Committed record
        let mut users: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &spec.tasks {
            for r in &t.resource_sequence {
                users.entry(r.as_str()).or_default().push(t.task_id.as_str());
            }
        }
        let span = |id: &str| {
            let start =
                trace.iter().position(|r| r.is_task(id) && matches!(r.kind(), "StatementExecuted" | "CommitFailed"))?;
            Some((start, pos(id, "Committed").unwrap_or(trace.len())))
        };
        for (resource, tasks) in &users {
            for (i, a) in tasks.iter().enumerate() {
                for b in &tasks[i + 1..] {
                    if let (Some(x), Some(y)) = (span(a), span(b)) {
                        if x.0 <= y.1 && y.0 <= x.1 {
                            v.push(format!("mutual exclusion: {a} {x:?} and {b} {y:?} overlap on {resource}"));
                        }
                    }
                }
            }
        }

        for (id, agent) in &run.agents {
            let h = agent.history();
            if h.first() != Some(&AgentPhase::Idle) {
                v.push(format!("phase: {id} did not start Idle"));
            }
            for w in h.windows(2) {
                if !LEGAL_PHASE_EDGES.contains(&(w[0], w[1])) {
                    v.push(format!("phase: {id} moved {:?} -> {:?}", w[0], w[1]));
                }
            }
        }

        let completes: Vec<usize> =
            trace.iter().enumerate().filter(|(_, r)| r.kind() == "ProcessComplete").map(|(i, _)| i).collect();
        let completed = run.report.outcome == Outcome::Completed;
        if completed != (completes.len() == 1) || completes.len() > 1 {
            v.push(format!(
                "completion: outcome {:?} with {} ProcessComplete records",
                run.report.outcome,
                completes.len()
            ));
        }
        if completed && completes.first() != Some(&(trace.len() - 1)) {
            v.push("completion: ProcessComplete is not the final record".into());
        }
        if completed {
            for (id, agent) in &run.agents {
                if agent.phase() != AgentPhase::Completed {
                    v.push(format!("completion: {id} ended in {:?}", agent.phase()));
                }
            }
        }
        if run.report.trace_records != trace.len() {
            v.push("report: trace_records disagrees with the trace".into());
        }
    }

    if checks.convergence {
        let mut replicas: BTreeMap<String, BTreeSet<(u32, Vec<u8>)>> = BTreeMap::new();
        for agent in run.agents.values() {
            for item in agent.storage().iter() {
                replicas.entry(item.name.to_string()).or_default().insert((item.version, item.payload.clone()));
            }
        }
        for (name, copies) in &replicas {
            if copies.len() != 1 {
                v.push(format!("convergence: {name} has {} distinct replicas", copies.len()));
            }
        }
        if run.report.consistency.values().any(|c| !c.converged) {
            v.push("convergence: report lists an unconverged name".into());
        }
        for stale in &plan.stale_replicas {
            let updated = trace.iter().any(|r| {
                r.task.as_ref() == Some(&stale.holder)
                    && matches!(&r.event, TraceEvent::ConsistencyUpdated { data, .. } if *data == stale.data)
            });
            if !updated {
                v.push(format!("convergence: stale {} at {} never updated", stale.data, stale.holder));
            }
        }
    }
    v
}

pub fn task(id: &str) -> TaskId {
    TaskId::new(id)
}
