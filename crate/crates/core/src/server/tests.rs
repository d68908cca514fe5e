use super::*;
use crate::agent::{CommitOutcome, StatementSite, VersionCounter};
use crate::model::{validate_spec, FormatTag::*, TaskSpec, WorkflowSpec};

fn t(s: &str) -> TaskId {
    TaskId::new(s)
}

fn chain() -> WorkflowSpec {
    WorkflowSpec::new("P")
        .with_task(TaskSpec::new("A", 2).with_output("x", Int))
        .with_task(TaskSpec::new("B", 3).with_input("x", Int, "A"))
        .with_edge("A", "B")
}

#[test]
fn configure_registers_prefetch_and_te() {
    let p = load_and_configure(validate_spec(chain()).unwrap());
    assert_eq!(p.server.prefetch.entries_for(&t("A")), &[(t("B"), DataName::new("x"))]);
    assert!(p.server.prefetch.entries_for(&t("B")).is_empty());
    assert_eq!(p.server.te_registry, BTreeMap::from([(t("A"), 2), (t("B"), 3)]));
    assert_eq!(p.agents.len(), 2);
    assert!(p.agents.values().all(|a| a.phase() == AgentPhase::Idle && a.max_attempts() == 10));
}

#[test]
fn clock_sync_zeroes_offsets() {
    let mut clock = ClockTable::from_offsets([(t("A"), 5), (t("B"), -3)]);
    assert!(!clock.is_synchronized());
    clock.sync_clocks([&t("A"), &t("B")]);
    assert_eq!((clock.offset(&t("A")), clock.offset(&t("B"))), (Some(0), Some(0)));
    assert!(clock.is_synchronized());
}

#[test]
fn reconfigure_matches_fresh_load() {
    let first = load_and_configure(validate_spec(chain()).unwrap());
    let updated = chain().with_task(TaskSpec::new("C", 1).with_input("x", Int, "A")).with_edge("A", "C");
    let reconfigured = first.reconfigure(validate_spec(updated.clone()).unwrap());
    let fresh = load_and_configure(validate_spec(updated).unwrap());
    assert_eq!(reconfigured, fresh);
    assert_eq!(reconfigured.server.te_registry[&t("C")], 1);
    assert_eq!(reconfigured.server.prefetch.entries_for(&t("A")).len(), 2);
}

fn escalated(p: &mut ConfiguredProcess, task: &str) -> AgentState {
    let mut a = p.agents[&t(task)].clone();
    a.begin_validation().unwrap();
    a.start_execution().unwrap();
    let fail = |s: &StatementSite<'_>| s.index == 0;
    let mut v = VersionCounter::default();
    loop {
        a.execute_statements(&fail, &mut v).unwrap();
        if a.try_commit().unwrap() == CommitOutcome::Escalate {
            return a;
        }
    }
}

#[test]
fn first_escalation_gets_alternate_second_abandons() {
    let mut p = load_and_configure(validate_spec(chain()).unwrap());
    let mut b = escalated(&mut p, "B");
    assert_eq!(b.commit_failures(), 10);
    let resp = p.server.provide_alternate_resource(&mut b).unwrap();
    let EscalationResponse::Alternate(assignment) = resp else { panic!("expected alternate") };
    assert_eq!(assignment.task, t("B"));
    assert_eq!((b.attempts(), b.t_exec(), b.phase()), (0, 0, AgentPhase::Executing));
    assert_eq!(p.server.escalations.len(), 1);

    // keep failing on the alternate until it escalates again
    let fail = |s: &StatementSite<'_>| s.index == 0;
    let mut v = VersionCounter::default();
    loop {
        b.execute_statements(&fail, &mut v).unwrap();
        if b.try_commit().unwrap() == CommitOutcome::Escalate {
            break;
        }
    }
    assert_eq!(p.server.provide_alternate_resource(&mut b).unwrap(), EscalationResponse::Abandon);
}

#[test]
fn escalation_report_for_healthy_task_is_rejected() {
    let mut p = load_and_configure(validate_spec(chain()).unwrap());
    let mut a = p.agents[&t("A")].clone();
    assert!(matches!(
        p.server.provide_alternate_resource(&mut a),
        Err(ServerError::NotEscalated { phase: AgentPhase::Idle, .. })
    ));
}

fn complete(a: &mut AgentState) {
    a.begin_validation().unwrap();
    a.start_execution().unwrap();
    a.execute_statements(&crate::agent::NoFaults, &mut VersionCounter::default()).unwrap();
    a.try_commit().unwrap();
    a.route_outputs(&[], &Default::default()).unwrap();
}

#[test]
fn completion_recorded_only_when_all_tasks_completed() {
    let spec = WorkflowSpec::new("P")
        .with_task(TaskSpec::new("A", 1))
        .with_task(TaskSpec::new("B", 1))
        .with_task(TaskSpec::new("C", 1));
    let mut p = load_and_configure(validate_spec(spec).unwrap());
    let pid = p.process_id().clone();
    for id in ["A", "B"] {
        complete(p.agents.get_mut(&t(id)).unwrap());
    }
    let err = p.server.record_completion(&pid, p.agents.values()).unwrap_err();
    assert_eq!(
        err,
        ServerError::PrematureCompletion { process: pid.clone(), pending: vec![(t("C"), AgentPhase::Idle)] }
    );

    complete(p.agents.get_mut(&t("C")).unwrap());
    assert_eq!(p.server.record_completion(&pid, p.agents.values()).unwrap().process, pid);
    assert!(p.server.completions.contains(&pid));
}
