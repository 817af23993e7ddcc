use super::*;
use crate::bridge::{FaultMatch, FaultPhase, FaultRule};
use crate::model::{EnvType, ProbeState, UnitStrategy};
use crate::store::ResetScope;
use crate::testkit::{conf, pc, probe, target, Rig, RunningExample, CPU, DB, NET};

#[test]
fn fresh_probe_deploys_and_stabilizes() {
    let p = probe("p", &["I1"]);
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[&p], &[&t]);
    rig.submit("op", &t, &["I1"]);
    rig.claims.process_pending();
    let reports = rig.units.tick();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.action, ReconcileAction::Actuated);
    assert_eq!(r.resulting_state, UnitState::Stable);
    let u = rig.api.get_unit(&r.unit_id).unwrap();
    assert_eq!(u.unit.current_conf, u.unit.desired_conf);
    assert!(rig.units.tick().is_empty(), "quiescent");
}

#[test]
fn sharing_a_deployed_probe_needs_no_bridge_call() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    rig.submit("op-B", &ex.target, &[CPU]);
    rig.settle(5);
    let calls = rig.sim.call_log().len();
    rig.submit("op-A", &ex.target, &[CPU]);
    rig.claims.process_pending();
    let reports = rig.units.tick();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].action, ReconcileAction::None);
    assert!(reports[0].change_set.is_empty());
    assert_eq!(rig.sim.call_log().len(), calls, "bridge not called");
    let cpu = rig.unit_for(&ex.p_cpu.id).unwrap();
    assert_eq!(cpu.current_conf, cpu.desired_conf);
    assert_eq!(cpu.current_conf.len(), 2);
}

#[test]
fn emptied_unit_is_dismissed_and_removed() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    rig.submit("op-B", &ex.target, &[DB]);
    rig.settle(5);
    let id = rig.unit_for(&ex.p_db.id).unwrap().id;
    rig.submit("op-B", &ex.target, &[]);
    rig.claims.process_pending();
    let reports = rig.units.tick();
    assert_eq!(reports[0].action, ReconcileAction::Dismissed);
    assert!(rig.api.get_unit_record(&id).is_none());
    assert!(rig.sim.instance(&id).is_none());
    assert!(rig.units.tick().is_empty());
}

#[test]
fn soft_error_is_retried_then_deployed() {
    let (x, y) = (probe("x", &["X"]), probe("y", &["Y"]));
    let t = target("t", EnvType::AccessibleVm);
    let rig = Rig::new(UnitStrategy::MultiProbe, &[&x, &y], &[&t]);
    rig.sim.inject_fault(FaultRule::soft("x-artifact", Some(1))).unwrap();
    rig.submit("op", &t, &["X", "Y"]);
    rig.claims.process_pending();

    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Unsound);
    assert_eq!(r.ledger_writes, 1);
    let view = rig.api.get_unit(&r.unit_id).unwrap();
    assert_eq!(view.unit.state, UnitState::Unsound);
    assert_eq!(view.unit.current_conf, conf([pc(&y, &["Y"], "op")]));
    assert_eq!(view.retries.len(), 1);
    assert_eq!(view.retries[0].count, 1);

    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Stable);
    assert_eq!(r.change_set.to_add.len(), 1, "only the failed probe is retried");
    let view = rig.api.get_unit(&r.unit_id).unwrap();
    assert_eq!(view.unit.current_conf, view.unit.desired_conf);
}

#[test]
fn hard_error_cleans_unit_and_redeploys_working_probe() {
    let (good, bad) = (probe("good", &["G"]), probe("bad", &["B"]));
    let t = target("t", EnvType::AccessibleVm);
    let rig = Rig::new(UnitStrategy::MultiProbe, &[&good, &bad], &[&t]);
    rig.sim.inject_fault(FaultRule::hard("bad-artifact", None)).unwrap();
    rig.submit("op", &t, &["G", "B"]);
    rig.claims.process_pending();

    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Dirty);
    assert!(r.cleaned);
    let br = r.bridge_result.as_ref().unwrap();
    assert_eq!(br.per_probe_state[&bad.id], ProbeState::Broken);
    let view = rig.api.get_unit(&r.unit_id).unwrap();
    assert!(view.unit.current_conf.is_empty(), "dirty unit emptied before redeploy");
    assert_eq!(view.blacklist, vec![pc(&bad, &["B"], "op").key()]);

    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Stable);
    let inst = rig.sim.instance(&r.unit_id).unwrap();
    assert_eq!(inst.processes.keys().collect::<Vec<_>>(), vec![&good.id]);
    assert!(rig.units.tick().is_empty());
    assert_eq!(rig.sim.stats().cleans, 1);

    // Fixing the probe and resetting the tables redeploys it.
    rig.sim.clear_faults();
    rig.api.reset_error_tables(&ResetScope::All).unwrap();
    rig.units.tick();
    assert_eq!(rig.sim.instance(&r.unit_id).unwrap().processes.len(), 2);
}

#[test]
fn failed_clean_is_retried() {
    let bad = probe("bad", &["B"]);
    let t = target("t", EnvType::AccessibleVm);
    let rig = Rig::new(UnitStrategy::MultiProbe, &[&bad], &[&t]);
    rig.sim.inject_fault(FaultRule::hard("bad-artifact", Some(1))).unwrap();
    rig.sim
        .inject_fault(FaultRule::new(FaultPhase::Clean, FaultMatch::default(), Some(1)))
        .unwrap();
    rig.submit("op", &t, &["B"]);
    rig.claims.process_pending();
    let r = rig.units.tick().remove(0);
    assert!(!r.cleaned && r.error.is_some());
    let view = rig.api.get_unit(&r.unit_id).unwrap();
    assert!(view.clean_pending);
    assert!(view.unit.current_conf.is_empty());
    assert_eq!(view.unit.state, UnitState::Dirty);

    let r = rig.units.tick().remove(0);
    assert_eq!(r.action, ReconcileAction::Cleaned);
    assert!(!rig.api.get_unit(&r.unit_id).unwrap().clean_pending);
}

#[test]
fn transport_failure_counts_as_soft_error() {
    let p = probe("p", &["I1"]);
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[&p], &[&t]);
    rig.sim
        .inject_fault(FaultRule::new(FaultPhase::Transport, FaultMatch::default(), Some(1)))
        .unwrap();
    rig.submit("op", &t, &["I1"]);
    rig.claims.process_pending();
    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Unsound);
    assert_eq!(r.bridge_result.unwrap().soft_errors.len(), 1);
    let r = rig.units.tick().remove(0);
    assert_eq!(r.resulting_state, UnitState::Stable);
}

#[test]
fn fully_blacklisted_unit_parks_until_reset() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    rig.sim.inject_fault(FaultRule::hard("p_db-artifact", Some(1))).unwrap();
    rig.submit("op-B", &ex.target, &[DB, NET]);
    rig.claims.process_pending();
    rig.settle(5);
    let db = rig.unit_for(&ex.p_db.id).unwrap();
    let view = rig.api.get_unit(&db.id).unwrap();
    assert!(view.effective_desired.is_empty());
    assert!(!view.provisioned);
    assert!(rig.sim.instance(&db.id).is_none(), "container dismissed");

    rig.api.reset_error_tables(&ResetScope::Unit(db.id.clone())).unwrap();
    rig.settle(5);
    let view = rig.api.get_unit(&db.id).unwrap();
    assert_eq!(view.unit.current_conf, view.unit.desired_conf);
    assert_eq!(rig.sim.instance(&db.id).unwrap().processes.len(), 1);
}

#[test]
fn lost_lease_prevents_writes() {
    let p = probe("p", &["I1"]);
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[&p], &[&t]);
    rig.submit("op", &t, &["I1"]);
    rig.claims.process_pending();
    let id = rig.api.list_units()[0].id.clone();
    assert!(rig.api.acquire_lease(&id, "someone-else", None));
    assert!(rig.units.tick().is_empty(), "leased units are skipped");
    let err = rig.units.reconcile_unit(&id).unwrap_err();
    assert!(matches!(err, ApiError::Store(StoreError::LeaseLost(_))));
    assert!(rig.api.get_unit(&id).unwrap().unit.current_conf.is_empty());
}
