use std::time::Duration;

use super::*;
use crate::bridge::FaultPhase;
use crate::model::EnvType;
use crate::testkit::{indicators, probe, target, Rig, RunningExample, CPU, NET, SESSION};

fn doc(op: &str, claims: Vec<(&Target, Vec<&str>)>) -> RequestDoc {
    RequestDoc {
        operator: Operator::new(op),
        claims: claims
            .into_iter()
            .map(|(t, names)| ClaimDoc {
                indicators: indicators(&names),
                target: t.key(),
            })
            .collect(),
    }
}

#[test]
fn submission_stores_claim_and_announces_it() {
    let ex = RunningExample::new(EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &ex.probes(), &[&ex.target]);
    let op = Operator::new("op-A");
    let resp = rig
        .api
        .submit_monitoring_request(&op, &doc("op-A", vec![(&ex.target, vec![NET, CPU, SESSION])]))
        .unwrap();
    assert_eq!(resp.claim_ids().len(), 1);
    let id = &resp.claim_ids()[0];
    assert_eq!(
        rig.api.get_claim_status(&op, id).unwrap().status,
        ClaimStatus::Submitted
    );
    let evs = rig.api.events_since(0, Duration::ZERO);
    assert_eq!(evs.len(), 1);
    assert_eq!(evs[0].kind, EventKind::ClaimSubmitted);
    assert_eq!(evs[0].subject, id.as_str());
    assert!(rig.sim.call_log().is_empty(), "no actuation during submission");
    assert!(rig.api.list_units().is_empty());
}

#[test]
fn malformed_requests_are_rejected() {
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[&t]);
    let op = Operator::new("op");
    let dup = doc("op", vec![(&t, vec!["A"]), (&t, vec![])]);
    assert!(matches!(
        rig.api.submit_monitoring_request(&op, &dup),
        Err(ApiError::BadRequest(_))
    ));
    assert!(matches!(
        rig.api.submit_monitoring_request(&op, &doc("op", vec![])),
        Err(ApiError::BadRequest(_))
    ));
    assert!(matches!(
        rig.api
            .submit_monitoring_request(&Operator::new("other"), &doc("op", vec![(&t, vec![])])),
        Err(ApiError::Forbidden(_))
    ));
    assert!(rig.api.store_metrics().claim_upserts == 0);
}

#[test]
fn unknown_target_fails_alone() {
    let t = target("t", EnvType::Container);
    let ghost = target("ghost", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[&t]);
    let resp = rig
        .api
        .submit_monitoring_request(&Operator::new("op"), &doc("op", vec![(&ghost, vec![]), (&t, vec![])]))
        .unwrap();
    assert_eq!(resp.claims.len(), 2);
    let failed = resp.claims.iter().find(|c| c.target == ghost.key()).unwrap();
    assert!(failed.error.as_ref().unwrap().contains("unknown target"));
    assert_eq!(resp.claim_ids().len(), 1);
}

#[test]
fn claims_are_private_to_their_operator() {
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[&t]);
    let id = rig.submit("op-A", &t, &[]);
    assert!(matches!(
        rig.api.get_claim_status(&Operator::new("op-B"), &id),
        Err(ApiError::Forbidden(_))
    ));
    assert!(matches!(
        rig.api.get_claim_status(&Operator::new("op-A"), &ClaimId::new("nope")),
        Err(ApiError::NotFound(_))
    ));
}

#[test]
fn fulfilled_status_and_unit_view() {
    let p = probe("p", &["I1"]);
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[&p], &[&t]);
    rig.sim.inject_fault(FaultRule::soft("p-artifact", None)).unwrap();
    let id = rig.submit("op", &t, &["I1"]);
    rig.claims.process_pending();
    assert_eq!(
        rig.api.get_claim_status(&Operator::new("op"), &id).unwrap().status,
        ClaimStatus::Fulfilled
    );
    rig.units.tick();
    let unit = rig.api.list_units()[0].id.clone();
    let view = rig.api.get_unit(&unit).unwrap();
    assert_eq!(view.unit.state, crate::model::UnitState::Unsound);
    assert_eq!(view.retries[0].count, 1);
    let json = serde_json::to_value(&view).unwrap();
    for field in ["currentConf", "desiredConf", "state", "retries", "blacklist"] {
        assert!(json.get(field).is_some(), "{field}");
    }
    assert!(matches!(
        rig.api.get_unit(&UnitId::new("mu-9999")),
        Err(ApiError::NotFound(_))
    ));
}

#[test]
fn reset_of_unknown_unit_is_not_found() {
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[]);
    let err = rig
        .api
        .reset_error_tables(&ResetScope::Unit(UnitId::new("mu-1")))
        .unwrap_err();
    assert!(matches!(err, ApiError::NotFound(_)));
    rig.api.reset_error_tables(&ResetScope::All).unwrap();
}

#[test]
fn invalid_fault_rule_is_a_bad_request() {
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[]);
    let mut rule = FaultRule::soft("a", None);
    rule.phase = FaultPhase::Apply;
    assert!(matches!(rig.api.inject_fault(rule), Err(ApiError::BadRequest(_))));
}

#[test]
fn target_listing_is_cached_briefly() {
    let t = target("t", EnvType::Container);
    let rig = Rig::new(UnitStrategy::SingleProbe, &[], &[&t]);
    assert_eq!(rig.api.list_targets().unwrap().len(), 1);
    rig.sim.add_target(target("u", EnvType::Container));
    assert_eq!(rig.api.list_targets().unwrap().len(), 1);
    rig.clock.advance(Duration::from_secs(3));
    assert_eq!(rig.api.list_targets().unwrap().len(), 2);
}
