use super::*;
use crate::model::{EnvType, Operator, UnitConfiguration};
use crate::testkit::{conf, pc, probe, target, Rig, RunningExample, CPU, DB, NET, SESSION};

fn op_entries(rig: &Rig, op: &str) -> UnitConfiguration {
    rig.api
        .list_units()
        .iter()
        .flat_map(|u| u.desired_conf.iter().cloned().collect::<Vec<_>>())
        .filter(|pc| pc.operator == Operator::new(op))
        .collect()
}

fn init_conf(rig: &Rig, ex: &RunningExample) {
    rig.submit("op-A", &ex.target, &[NET]);
    rig.submit("op-B", &ex.target, &[NET, CPU, DB]);
    rig.claims.process_pending();
}

#[test]
fn second_claim_touches_cpu_and_session_units_only() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    init_conf(&rig, &ex);
    let net_before = rig.unit_for(&ex.p_net.id).unwrap();

    let id = rig.submit("op-A", &ex.target, &[NET, CPU, SESSION]);
    let report = rig.claims.process_claim(&id).unwrap().unwrap();
    assert_eq!(report.outcome, ClaimOutcome::Updated);
    assert_eq!(report.units_created, 1, "a new unit for the session probe");
    assert_eq!(report.desired_writes, 2);

    let cpu = rig.unit_for(&ex.p_cpu.id).unwrap();
    assert_eq!(
        cpu.desired_conf,
        conf([pc(&ex.p_cpu, &[CPU], "op-B"), pc(&ex.p_cpu, &[CPU], "op-A")])
    );
    let session = rig.unit_for(&ex.p_session.id).unwrap();
    assert_eq!(session.desired_conf, conf([pc(&ex.p_session, &[SESSION], "op-A")]));
    assert_eq!(rig.unit_for(&ex.p_net.id).unwrap(), net_before);
}

#[test]
fn empty_claim_strips_operator_everywhere() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    init_conf(&rig, &ex);
    let id = rig.submit("op-B", &ex.target, &[]);
    let report = rig.claims.process_claim(&id).unwrap().unwrap();
    assert_eq!(report.outcome, ClaimOutcome::Updated);
    assert_eq!(report.swept_units, 3);
    assert!(op_entries(&rig, "op-B").is_empty());
    assert_eq!(op_entries(&rig, "op-A"), conf([pc(&ex.p_net, &[NET], "op-A")]));
    assert_eq!(
        rig.api.get_claim_status(&Operator::new("op-B"), &id).unwrap().status,
        ClaimStatus::Fulfilled
    );
}

#[test]
fn resubmission_is_a_noop() {
    let ex = RunningExample::new(EnvType::AccessibleVm);
    for strategy in [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe] {
        let rig = Rig::new(strategy, &ex.probes(), &[&ex.target]);
        init_conf(&rig, &ex);
        let before = rig.api.list_units();
        let id = rig.submit("op-B", &ex.target, &[NET, CPU, DB]);
        let report = rig.claims.process_claim(&id).unwrap().unwrap();
        assert_eq!(report.outcome, ClaimOutcome::Noop, "{strategy}");
        assert_eq!(report.desired_writes, 0);
        assert_eq!(rig.api.list_units(), before);
    }
}

#[test]
fn multi_probe_claim_replaces_operator_entries() {
    let p1 = probe("p1", &["I1", "I2"]);
    let t = target("t", EnvType::AccessibleVm);
    let rig = Rig::new(UnitStrategy::MultiProbe, &[&p1], &[&t]);
    rig.submit("opA", &t, &["I1"]);
    rig.claims.process_pending();
    rig.submit("opA", &t, &["I2"]);
    rig.claims.process_pending();
    let units = rig.api.list_units();
    assert_eq!(units.len(), 1);
    assert_eq!(
        units[0].desired_conf,
        conf([pc(&p1, &["I2"], "opA")]),
        "replacement, not merge"
    );
}

#[test]
fn unmatched_indicator_aborts_without_touching_units() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    init_conf(&rig, &ex);
    let before = rig.api.list_units();
    let id = rig.submit("op-A", &ex.target, &[NET, "DISK_IO"]);
    let report = rig.claims.process_claim(&id).unwrap().unwrap();
    assert_eq!(report.outcome, ClaimOutcome::Aborted);
    let view = rig.api.get_claim_status(&Operator::new("op-A"), &id).unwrap();
    assert_eq!(view.status, ClaimStatus::Aborted);
    assert!(view.cause.unwrap().contains("no matching probe"));
    assert_eq!(rig.api.list_units(), before);
    let kinds: Vec<_> = rig.api.bus().since(0).into_iter().map(|e| e.kind).collect();
    assert!(kinds.contains(&crate::events::EventKind::ClaimAborted));
}

#[test]
fn work_bound_holds_per_claim() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    for (op, names) in [
        ("op-A", vec![NET]),
        ("op-B", vec![NET, CPU, DB]),
        ("op-A", vec![NET, CPU, SESSION]),
        ("op-B", vec![]),
    ] {
        let before = rig.api.store_metrics();
        let id = rig.submit(op, &ex.target, &names);
        let r = rig.claims.process_claim(&id).unwrap().unwrap();
        let after = rig.api.store_metrics();
        assert_eq!(after.desired_writes - before.desired_writes, r.desired_writes as u64);
        let commits = after.desired_commits - before.desired_commits;
        assert!(
            commits <= 1 + r.probe_configs as u64,
            "{op}: {commits} commits for {r:?}"
        );
    }
}

#[test]
fn superseded_claim_is_requeued() {
    let t = target("t", EnvType::Container);
    let p = probe("p", &["I1"]);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[&p], &[&t]);
    let id = rig.submit("op", &t, &["I1"]);
    let rec = rig.api.begin_claim(&id).unwrap().unwrap();
    rig.submit("op", &t, &[]);
    assert!(!rig.api.finish_claim(&rec, ClaimStatus::Fulfilled, None).unwrap());
    assert_eq!(rig.api.pending_claims(), vec![id.clone()]);
    let r = rig.claims.process_claim(&id).unwrap().unwrap();
    assert!(!r.superseded);
}
