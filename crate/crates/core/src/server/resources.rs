//! Resource scheduling: per-resource priority lists and the lock table used
//! at run time.
//!
//! Tasks acquire every resource they use before their first statement, one
//! at a time in the global (lexicographic) resource order, and release all
//! of them at commit. A single global order means no wait-for cycle can form.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ServerError;
use crate::model::{ResourceId, TaskId, ValidatedSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResourceSchedule {
    priority: BTreeMap<ResourceId, Vec<TaskId>>,
    global_order: Vec<ResourceId>,
}

impl ResourceSchedule {
    pub fn priority_list(&self, resource: &ResourceId) -> Option<&[TaskId]> {
        self.priority.get(resource).map(Vec::as_slice)
    }

    pub fn global_order(&self) -> &[ResourceId] {
        &self.global_order
    }

    pub fn resources(&self) -> impl Iterator<Item = (&ResourceId, &[TaskId])> {
        self.priority.iter().map(|(r, l)| (r, l.as_slice()))
    }

    fn rank(&self, resource: &ResourceId, task: &TaskId) -> Option<usize> {
        self.priority.get(resource)?.iter().position(|t| t == task)
    }
}

/// Priority list per resource: its declaring tasks in topological order
/// (ties by task id). The global order is lexicographic on resource id.
pub fn build_resource_schedule(spec: &ValidatedSpec) -> ResourceSchedule {
    let mut priority: BTreeMap<ResourceId, Vec<TaskId>> =
        spec.resources.iter().map(|r| (r.clone(), Vec::new())).collect();
    for id in spec.topological_order() {
        let task = spec.task(id).expect("topological order names known tasks");
        for r in task.acquisition_order() {
            priority.entry(r).or_default().push(id.clone());
        }
    }
    let global_order = priority.keys().cloned().collect();
    ResourceSchedule { priority, global_order }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grant {
    Granted,
    Queued,
}

/// Run-time lock table over a [`ResourceSchedule`].
#[derive(Debug, Clone)]
pub struct ResourceManager {
    schedule: ResourceSchedule,
    holders: BTreeMap<ResourceId, TaskId>,
    waiting: BTreeMap<ResourceId, BTreeSet<TaskId>>,
}

impl ResourceManager {
    pub fn new(schedule: ResourceSchedule) -> Self {
        ResourceManager { schedule, holders: BTreeMap::new(), waiting: BTreeMap::new() }
    }

    pub fn schedule(&self) -> &ResourceSchedule {
        &self.schedule
    }

    pub fn holder(&self, resource: &ResourceId) -> Option<&TaskId> {
        self.holders.get(resource)
    }

    pub fn held_by(&self, task: &TaskId) -> Vec<ResourceId> {
        self.holders.iter().filter(|(_, t)| *t == task).map(|(r, _)| r.clone()).collect()
    }

    pub fn is_waiting(&self, resource: &ResourceId, task: &TaskId) -> bool {
        self.waiting.get(resource).is_some_and(|w| w.contains(task))
    }

    /// Grants a free resource to the requester, otherwise queues it.
    pub fn grant_resource(&mut self, resource: &ResourceId, task: &TaskId) -> Result<Grant, ServerError> {
        if self.schedule.rank(resource, task).is_none() {
            return Err(ServerError::NotScheduled { resource: resource.clone(), task: task.clone() });
        }
        match self.holders.get(resource) {
            Some(h) if h == task => Ok(Grant::Granted),
            Some(_) => {
                self.waiting.entry(resource.clone()).or_default().insert(task.clone());
                Ok(Grant::Queued)
            }
            None => {
                // a free resource never has waiters: release hands it over
                debug_assert!(self.waiting.get(resource).is_none_or(BTreeSet::is_empty));
                self.holders.insert(resource.clone(), task.clone());
                Ok(Grant::Granted)
            }
        }
    }

    /// Releases everything `task` holds. Each freed resource goes to its
    /// highest-priority waiter; the returned pairs are those hand-overs.
    pub fn release_all(&mut self, task: &TaskId) -> Vec<(ResourceId, TaskId)> {
        let mut handoffs = Vec::new();
        for resource in self.held_by(task) {
            self.holders.remove(&resource);
            let next = self
                .waiting
                .get(&resource)
                .and_then(|w| w.iter().min_by_key(|t| self.schedule.rank(&resource, t).unwrap_or(usize::MAX)).cloned());
            if let Some(next) = next {
                self.waiting.get_mut(&resource).expect("waiter set exists").remove(&next);
                self.holders.insert(resource.clone(), next.clone());
                handoffs.push((resource, next));
            }
        }
        handoffs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, TaskSpec, WorkflowSpec};

    fn r(s: &str) -> ResourceId {
        ResourceId::new(s)
    }

    fn t(s: &str) -> TaskId {
        TaskId::new(s)
    }

    fn spec(edges: &[(&str, &str)], tasks: &[(&str, &[&str])]) -> ValidatedSpec {
        let mut w = WorkflowSpec::new("P").with_resource("R1").with_resource("R2");
        for (id, res) in tasks {
            w = w.with_task(TaskSpec::new(*id, 1).with_resources(res));
        }
        for (a, b) in edges {
            w = w.with_edge(a, b);
        }
        validate_spec(w).unwrap()
    }

    #[test]
    fn priority_follows_edges() {
        let s = build_resource_schedule(&spec(&[("A", "B")], &[("B", &["R1"]), ("A", &["R1"])]));
        assert_eq!(s.priority_list(&r("R1")).unwrap(), &[t("A"), t("B")]);
    }

    #[test]
    fn parallel_tasks_ordered_by_id() {
        let s = build_resource_schedule(&spec(&[], &[("C", &["R1"]), ("B", &["R1"])]));
        assert_eq!(s.priority_list(&r("R1")).unwrap(), &[t("B"), t("C")]);
        assert!(s.priority_list(&r("R2")).unwrap().is_empty());
        assert_eq!(s.global_order(), &[r("R1"), r("R2")]);
    }

    #[test]
    fn grant_free_then_queue_then_handoff() {
        let s = build_resource_schedule(&spec(&[], &[("A", &["R1"]), ("B", &["R1"]), ("C", &["R1"])]));
        let mut m = ResourceManager::new(s);
        assert_eq!(m.grant_resource(&r("R1"), &t("A")).unwrap(), Grant::Granted);
        assert_eq!(m.grant_resource(&r("R1"), &t("C")).unwrap(), Grant::Queued);
        assert_eq!(m.grant_resource(&r("R1"), &t("B")).unwrap(), Grant::Queued);
        assert_eq!(m.release_all(&t("A")), vec![(r("R1"), t("B"))]);
        assert_eq!(m.holder(&r("R1")), Some(&t("B")));
        assert_eq!(m.release_all(&t("B")), vec![(r("R1"), t("C"))]);
        assert!(m.release_all(&t("C")).is_empty());
        assert_eq!(m.holder(&r("R1")), None);
    }

    #[test]
    fn request_from_unscheduled_task_is_an_error() {
        let s = build_resource_schedule(&spec(&[], &[("A", &["R1"]), ("B", &[])]));
        let mut m = ResourceManager::new(s);
        assert!(matches!(m.grant_resource(&r("R1"), &t("B")), Err(ServerError::NotScheduled { .. })));
    }
}
