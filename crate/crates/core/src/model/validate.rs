//! Static checks over a parsed [`WorkflowSpec`].
//!
//! Validation never stops at the first problem: every violation found is
//! reported so a definition can be fixed in one pass.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::Deref;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{DataName, FormatTag, ResourceId, TaskId, WorkflowSpec, LOCAL_SOURCE};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    EmptyProcess,
    DuplicateTaskId { task: TaskId },
    ReservedTaskId { task: TaskId },
    ZeroStatements { task: TaskId },
    DuplicateInput { task: TaskId, input: DataName },
    DuplicateOutput { task: TaskId, output: DataName },
    LocalOnlyRemoteInput { task: TaskId, input: DataName },
    UnknownEdgeEndpoint { from: TaskId, to: TaskId, missing: TaskId },
    Cycle { members: Vec<TaskId> },
    UnknownProducer { task: TaskId, input: DataName, producer: TaskId },
    ProducerLacksOutput { task: TaskId, input: DataName, producer: TaskId },
    ProducerNotPredecessor { task: TaskId, input: DataName, producer: TaskId },
    FormatMismatch { task: TaskId, input: DataName, expected: FormatTag, found: FormatTag },
    MultipleProducers { data: DataName, producers: Vec<TaskId> },
    LocalNameClash { data: DataName, tasks: Vec<TaskId> },
    UndeclaredResource { task: TaskId, resource: ResourceId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyProcess => write!(f, "process has no tasks"),
            DuplicateTaskId { task } => write!(f, "duplicate task id {task}"),
            ReservedTaskId { task } => write!(f, "task id {task} is reserved"),
            ZeroStatements { task } => write!(f, "task {task} has no statements"),
            DuplicateInput { task, input } => write!(f, "task {task} declares input {input} twice"),
            DuplicateOutput { task, output } => write!(f, "task {task} declares output {output} twice"),
            LocalOnlyRemoteInput { task, input } => {
                write!(f, "local-only task {task} has non-local input {input}")
            }
            UnknownEdgeEndpoint { from, to, missing } => {
                write!(f, "edge {from} -> {to} names unknown task {missing}")
            }
            Cycle { members } => {
                let names: Vec<&str> = members.iter().map(TaskId::as_str).collect();
                write!(f, "cycle among tasks {{{}}}", names.join(", "))
            }
            UnknownProducer { task, input, producer } => {
                write!(f, "input {task}.{input} names unknown producer {producer}")
            }
            ProducerLacksOutput { task, input, producer } => {
                write!(f, "input {task}.{input}: producer {producer} has no such output")
            }
            ProducerNotPredecessor { task, input, producer } => {
                write!(f, "input {task}.{input}: producer {producer} is not a predecessor of {task}")
            }
            FormatMismatch { task, input, expected, found } => {
                write!(f, "format mismatch at {task}.{input}: producer declares {expected}, input declares {found}")
            }
            MultipleProducers { data, producers } => {
                let names: Vec<&str> = producers.iter().map(TaskId::as_str).collect();
                write!(f, "data {data} produced by several tasks: {}", names.join(", "))
            }
            LocalNameClash { data, tasks } => {
                let names: Vec<&str> = tasks.iter().map(TaskId::as_str).collect();
                write!(f, "local data {data} also declared or produced by: {}", names.join(", "))
            }
            UndeclaredResource { task, resource } => {
                write!(f, "task {task} uses undeclared resource {resource}")
            }
        }
    }
}

/// A spec that passed [`validate_spec`], with its derived graph structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedSpec {
    spec: WorkflowSpec,
    topo_order: Vec<TaskId>,
    predecessors: BTreeMap<TaskId, BTreeSet<TaskId>>,
    successors: BTreeMap<TaskId, BTreeSet<TaskId>>,
}

impl Deref for ValidatedSpec {
    type Target = WorkflowSpec;

    fn deref(&self) -> &WorkflowSpec {
        &self.spec
    }
}

impl ValidatedSpec {
    pub fn spec(&self) -> &WorkflowSpec {
        &self.spec
    }

    pub fn into_inner(self) -> WorkflowSpec {
        self.spec
    }

    /// Topological order with ties broken by task id.
    pub fn topological_order(&self) -> &[TaskId] {
        &self.topo_order
    }

    pub fn predecessors_of(&self, task: &TaskId) -> &BTreeSet<TaskId> {
        &self.predecessors[task]
    }

    pub fn successors_of(&self, task: &TaskId) -> &BTreeSet<TaskId> {
        &self.successors[task]
    }
}

pub fn validate_spec(spec: WorkflowSpec) -> Result<ValidatedSpec, Vec<Violation>> {
    let mut violations = Vec::new();
    if spec.tasks.is_empty() {
        violations.push(Violation::EmptyProcess);
    }

    let mut ids = BTreeSet::new();
    for task in &spec.tasks {
        if !ids.insert(task.task_id.clone()) {
            violations.push(Violation::DuplicateTaskId { task: task.task_id.clone() });
        }
        if task.task_id.as_str() == LOCAL_SOURCE {
            violations.push(Violation::ReservedTaskId { task: task.task_id.clone() });
        }
        check_task_shape(task, &mut violations);
    }

    for e in &spec.edges {
        for end in [&e.from, &e.to] {
            if !ids.contains(end) {
                violations.push(Violation::UnknownEdgeEndpoint {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    missing: end.clone(),
                });
            }
        }
    }

    let known_edges: Vec<(&TaskId, &TaskId)> =
        spec.edges.iter().filter(|e| ids.contains(&e.from) && ids.contains(&e.to)).map(|e| (&e.from, &e.to)).collect();
    for members in cycles(&ids, &known_edges) {
        violations.push(Violation::Cycle { members });
    }

    let ancestors = ancestors(&ids, &known_edges);
    check_data_flow(&spec, &ids, &ancestors, &mut violations);

    let declared: BTreeSet<&ResourceId> = spec.resources.iter().collect();
    for task in &spec.tasks {
        for r in &task.resource_sequence {
            if !declared.contains(r) {
                violations.push(Violation::UndeclaredResource { task: task.task_id.clone(), resource: r.clone() });
            }
        }
    }

    if !violations.is_empty() {
        violations.sort();
        violations.dedup();
        return Err(violations);
    }

    let predecessors = spec.predecessors();
    let successors = spec.successors();
    let topo_order = topological_order(&predecessors, &successors);
    Ok(ValidatedSpec { spec, topo_order, predecessors, successors })
}

fn check_task_shape(task: &super::TaskSpec, violations: &mut Vec<Violation>) {
    let id = &task.task_id;
    if task.statement_count == 0 {
        violations.push(Violation::ZeroStatements { task: id.clone() });
    }
    let mut seen = BTreeSet::new();
    for i in &task.inputs {
        if !seen.insert(&i.name) {
            violations.push(Violation::DuplicateInput { task: id.clone(), input: i.name.clone() });
        }
        if task.local_only && !i.source.is_local() {
            violations.push(Violation::LocalOnlyRemoteInput { task: id.clone(), input: i.name.clone() });
        }
    }
    let mut seen = BTreeSet::new();
    for o in &task.outputs {
        if !seen.insert(&o.name) {
            violations.push(Violation::DuplicateOutput { task: id.clone(), output: o.name.clone() });
        }
    }
}

fn check_data_flow(
    spec: &WorkflowSpec,
    ids: &BTreeSet<TaskId>,
    ancestors: &BTreeMap<TaskId, BTreeSet<TaskId>>,
    violations: &mut Vec<Violation>,
) {
    let mut producers: BTreeMap<&DataName, BTreeSet<&TaskId>> = BTreeMap::new();
    for t in &spec.tasks {
        for o in &t.outputs {
            producers.entry(&o.name).or_default().insert(&t.task_id);
        }
    }
    for (data, tasks) in &producers {
        if tasks.len() > 1 {
            violations.push(Violation::MultipleProducers {
                data: (*data).clone(),
                producers: tasks.iter().map(|t| (*t).clone()).collect(),
            });
        }
    }

    let mut local_users: BTreeMap<&DataName, BTreeSet<&TaskId>> = BTreeMap::new();
    for t in &spec.tasks {
        for i in t.inputs.iter().filter(|i| i.source.is_local()) {
            local_users.entry(&i.name).or_default().insert(&t.task_id);
        }
    }
    for (data, users) in &local_users {
        let produced_by = producers.get(data).cloned().unwrap_or_default();
        if users.len() > 1 || !produced_by.is_empty() {
            let tasks: BTreeSet<&TaskId> = users.iter().chain(produced_by.iter()).copied().collect();
            violations
                .push(Violation::LocalNameClash { data: (*data).clone(), tasks: tasks.into_iter().cloned().collect() });
        }
    }

    for task in &spec.tasks {
        for input in &task.inputs {
            let Some(producer) = input.source.producer() else { continue };
            let at = |v: fn(TaskId, DataName, TaskId) -> Violation| {
                v(task.task_id.clone(), input.name.clone(), producer.clone())
            };
            if !ids.contains(producer) {
                violations.push(at(|task, input, producer| Violation::UnknownProducer { task, input, producer }));
                continue;
            }
            if !ancestors[&task.task_id].contains(producer) {
                violations.push(at(|task, input, producer| Violation::ProducerNotPredecessor {
                    task,
                    input,
                    producer,
                }));
            }
            let produced = spec.task(producer).and_then(|p| p.output(&input.name));
            match produced {
                None => violations.push(at(|task, input, producer| Violation::ProducerLacksOutput {
                    task,
                    input,
                    producer,
                })),
                Some(out) if out.format != input.format => violations.push(Violation::FormatMismatch {
                    task: task.task_id.clone(),
                    input: input.name.clone(),
                    expected: out.format,
                    found: input.format,
                }),
                Some(_) => {}
            }
        }
    }
}

/// Strongly connected components that contain a cycle, members sorted.
fn cycles(ids: &BTreeSet<TaskId>, edges: &[(&TaskId, &TaskId)]) -> Vec<Vec<TaskId>> {
    let mut graph = DiGraph::<&TaskId, ()>::new();
    let index: BTreeMap<&TaskId, _> = ids.iter().map(|id| (id, graph.add_node(id))).collect();
    for (from, to) in edges {
        graph.add_edge(index[from], index[to], ());
    }
    let mut found: Vec<Vec<TaskId>> = tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || graph.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut members: Vec<TaskId> = scc.into_iter().map(|n| graph[n].clone()).collect();
            members.sort();
            members
        })
        .collect();
    found.sort();
    found
}

/// Transitive predecessors of every task (a task on a cycle is its own ancestor).
fn ancestors(ids: &BTreeSet<TaskId>, edges: &[(&TaskId, &TaskId)]) -> BTreeMap<TaskId, BTreeSet<TaskId>> {
    let mut preds: BTreeMap<&TaskId, Vec<&TaskId>> = BTreeMap::new();
    for (from, to) in edges {
        preds.entry(*to).or_default().push(*from);
    }
    ids.iter()
        .map(|id| {
            let mut seen = BTreeSet::new();
            let mut queue: VecDeque<&TaskId> = VecDeque::from([id]);
            while let Some(cur) = queue.pop_front() {
                for p in preds.get(cur).into_iter().flatten() {
                    if seen.insert((*p).clone()) {
                        queue.push_back(p);
                    }
                }
            }
            (id.clone(), seen)
        })
        .collect()
}

fn topological_order(
    predecessors: &BTreeMap<TaskId, BTreeSet<TaskId>>,
    successors: &BTreeMap<TaskId, BTreeSet<TaskId>>,
) -> Vec<TaskId> {
    let mut indegree: BTreeMap<&TaskId, usize> = predecessors.iter().map(|(t, p)| (t, p.len())).collect();
    let mut ready: BTreeSet<&TaskId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(t, _)| *t).collect();
    let mut order = Vec::with_capacity(predecessors.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.clone());
        for s in &successors[next] {
            let d = indegree.get_mut(s).expect("successor is a known task");
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
    }
    order
}
