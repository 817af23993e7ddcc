//! Reconciliation loop: moves each monitoring unit from its current to its
//! effective desired configuration through the bridge, then books errors
//! in the retry table and the blacklist.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;

use crate::api::ApiService;
use crate::error::{ApiError, StoreError};
use crate::events::EventKind;
use crate::model::{
    classify_unit, diff_configurations, BridgeResult, ChangeSet, ProbeId, UnitConfiguration, UnitId, UnitState,
};
use crate::store::{UnitOutcome, UnitRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReconcileAction {
    None,
    Actuated,
    Dismissed,
    Cleaned,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconcileReport {
    #[serde(rename = "unitId")]
    pub unit_id: UnitId,
    #[serde(rename = "changeSet")]
    pub change_set: ChangeSet,
    #[serde(rename = "bridgeResult", skip_serializing_if = "Option::is_none")]
    pub bridge_result: Option<BridgeResult>,
    #[serde(rename = "resultingState")]
    pub resulting_state: UnitState,
    pub action: ReconcileAction,
    /// Retry-table and blacklist writes issued by the error routine.
    #[serde(rename = "ledgerWrites")]
    pub ledger_writes: u32,
    /// The unit was cleaned after a hard error.
    pub cleaned: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReconcileReport {
    fn new(unit_id: UnitId, state: UnitState, action: ReconcileAction) -> Self {
        Self {
            unit_id,
            change_set: ChangeSet::default(),
            bridge_result: None,
            resulting_state: state,
            action,
            ledger_writes: 0,
            cleaned: false,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnitController {
    api: Arc<ApiService>,
    holder: String,
    lease_ttl: Option<Duration>,
}

impl UnitController {
    pub fn new(api: Arc<ApiService>, holder: impl Into<String>) -> Self {
        Self {
            api,
            holder: holder.into(),
            lease_ttl: None,
        }
    }

    pub fn with_lease_ttl(mut self, ttl: Duration) -> Self {
        self.lease_ttl = Some(ttl);
        self
    }

    pub fn holder(&self) -> &str {
        &self.holder
    }

    /// One pass over the divergent units. Units leased by someone else or
    /// settled since the listing are skipped; a failure on one unit never
    /// stops the pass.
    pub fn tick(&self) -> Vec<ReconcileReport> {
        let mut reports = Vec::new();
        for rec in self.api.list_divergent_units() {
            let id = rec.id().clone();
            if !self.api.acquire_lease_if_divergent(&id, &self.holder, self.lease_ttl) {
                continue;
            }
            match self.reconcile_unit(&id) {
                Ok(report) => reports.push(report),
                Err(e) => tracing::warn!(unit = %id, holder = %self.holder, "reconcile failed: {e}"),
            }
            self.api.release_lease(&id, &self.holder);
        }
        reports
    }

    /// Ticks until `shutdown` is set, waking on every store change or
    /// after `interval`.
    pub fn run_control_loop(&self, interval: Duration, shutdown: &AtomicBool) {
        while !shutdown.load(Ordering::Relaxed) {
            let seen = self.api.generation();
            self.tick();
            self.api.wait_for_change(seen, interval);
        }
    }

    /// Reconciles one unit. The caller must hold its lease.
    pub fn reconcile_unit(&self, id: &UnitId) -> Result<ReconcileReport, ApiError> {
        let rec = self
            .api
            .get_unit_record(id)
            .ok_or_else(|| StoreError::UnknownUnit(id.clone()))?;
        if self.api.lease_holder(id).as_deref() != Some(self.holder.as_str()) {
            return Err(StoreError::LeaseLost(id.clone()).into());
        }
        let report = if rec.clean_pending {
            self.finish_clean(&rec)?
        } else {
            let effective = self
                .api
                .effective_desired(id)
                .ok_or_else(|| StoreError::UnknownUnit(id.clone()))?;
            if effective.is_empty() {
                self.dismiss(&rec)?
            } else {
                self.actuate(&rec, effective)?
            }
        };
        self.emit(&report);
        Ok(report)
    }

    fn emit(&self, report: &ReconcileReport) {
        let payload = serde_json::to_value(report).unwrap_or_else(|_| json!({}));
        let subject = report.unit_id.as_str();
        if report.error.is_some() {
            self.api.publish(EventKind::UnitError, subject, payload.clone());
        }
        if report.cleaned || report.action == ReconcileAction::Cleaned {
            self.api.publish(EventKind::UnitCleaned, subject, payload.clone());
        }
        let kind = match report.action {
            ReconcileAction::Dismissed => EventKind::UnitDismissed,
            _ => EventKind::UnitReconciled,
        };
        self.api.publish(kind, subject, payload);
    }

    fn outcome(&self, id: &UnitId, outcome: UnitOutcome) -> Result<(), ApiError> {
        Ok(self.api.record_outcome(id, &self.holder, outcome)?)
    }

    /// Retries a clean that failed earlier.
    fn finish_clean(&self, rec: &UnitRecord) -> Result<ReconcileReport, ApiError> {
        let unit = &rec.unit;
        match self.api.bridge().clean_unit(unit) {
            Ok(()) => {
                self.outcome(
                    &unit.id,
                    UnitOutcome {
                        current: UnitConfiguration::new(),
                        state: UnitState::Dirty,
                        provisioned: true,
                        clean_pending: false,
                    },
                )?;
                let mut r = ReconcileReport::new(unit.id.clone(), UnitState::Dirty, ReconcileAction::Cleaned);
                r.cleaned = true;
                Ok(r)
            }
            Err(e) => {
                let mut r = ReconcileReport::new(unit.id.clone(), UnitState::Dirty, ReconcileAction::None);
                r.error = Some(e.to_string());
                Ok(r)
            }
        }
    }

    /// Nothing left to run: release the bridge instance, then drop the
    /// record if no operator wants anything from it any more. A unit whose
    /// entries are all blacklisted stays parked so a table reset can bring
    /// it back.
    fn dismiss(&self, rec: &UnitRecord) -> Result<ReconcileReport, ApiError> {
        let unit = &rec.unit;
        if rec.provisioned || !unit.current_conf.is_empty() {
            if let Err(e) = self.api.bridge().dismiss_unit(unit) {
                let mut r = ReconcileReport::new(unit.id.clone(), unit.state, ReconcileAction::None);
                r.error = Some(e.to_string());
                return Ok(r);
            }
        }
        let removed =
            unit.desired_conf.is_empty() && self.api.remove_unit(&unit.id, &self.holder, rec.desired_version)?;
        if !removed {
            self.outcome(
                &unit.id,
                UnitOutcome {
                    current: UnitConfiguration::new(),
                    state: unit.state,
                    provisioned: false,
                    clean_pending: false,
                },
            )?;
        }
        Ok(ReconcileReport::new(
            unit.id.clone(),
            unit.state,
            ReconcileAction::Dismissed,
        ))
    }

    fn actuate(&self, rec: &UnitRecord, effective: UnitConfiguration) -> Result<ReconcileReport, ApiError> {
        let unit = &rec.unit;
        let changes = diff_configurations(&unit.current_conf, &effective);
        let result = if changes.is_empty() {
            BridgeResult::empty()
        } else {
            match self.api.bridge().do_changes(unit, &changes) {
                Ok(r) => r,
                // Nothing is known about the unit, so every attempted
                // change counts as a retriable failure.
                Err(e) => {
                    tracing::warn!(unit = %unit.id, "bridge unavailable: {e}");
                    let mut r = BridgeResult::empty();
                    for c in changes
                        .to_drop
                        .values()
                        .chain(changes.to_update.values())
                        .chain(changes.to_add.values())
                    {
                        r.mark_failed(&c.probe.id, &c.entries);
                    }
                    r
                }
            }
        };
        let mut report = ReconcileReport::new(
            unit.id.clone(),
            classify_unit(&result),
            if changes.is_empty() {
                ReconcileAction::None
            } else {
                ReconcileAction::Actuated
            },
        );
        self.update_configuration(rec, &effective, &changes, &result, &mut report)?;
        report.change_set = changes;
        report.bridge_result = (!report.change_set.is_empty()).then_some(result);
        Ok(report)
    }

    /// Error routine: count soft failures, blacklist hard ones, clean a
    /// dirty unit, and record what is actually running.
    fn update_configuration(
        &self,
        rec: &UnitRecord,
        effective: &UnitConfiguration,
        changes: &ChangeSet,
        result: &BridgeResult,
        report: &mut ReconcileReport,
    ) -> Result<(), ApiError> {
        let unit = &rec.unit;
        for pc in &result.soft_errors {
            self.api.inc_retry(&unit.id, pc)?;
            report.ledger_writes += 1;
        }
        for pc in &result.hard_errors {
            self.api.blacklist_add(&unit.id, pc)?;
            report.ledger_writes += 1;
        }
        let state = classify_unit(result);
        let provisioned = rec.provisioned || !changes.is_empty();

        if !result.hard_errors.is_empty() {
            let cleaned = self.api.bridge().clean_unit(unit);
            report.cleaned = cleaned.is_ok();
            if let Err(e) = &cleaned {
                report.error = Some(e.to_string());
            }
            return self.outcome(
                &unit.id,
                UnitOutcome {
                    current: UnitConfiguration::new(),
                    state,
                    provisioned,
                    clean_pending: cleaned.is_err(),
                },
            );
        }

        // Probes whose change failed softly keep running as they were.
        let failed: BTreeSet<&ProbeId> = result.soft_errors.iter().map(|pc| &pc.probe.id).collect();
        let mut current: UnitConfiguration = effective
            .iter()
            .filter(|pc| !failed.contains(&pc.probe.id))
            .cloned()
            .collect();
        for p in failed {
            if changes.to_update.contains_key(p) || changes.to_drop.contains_key(p) {
                for pc in unit.current_conf.entries_for(p) {
                    current.insert(pc.clone());
                }
            }
        }
        self.outcome(
            &unit.id,
            UnitOutcome {
                current,
                state,
                provisioned,
                clean_pending: false,
            },
        )
    }
}

#[cfg(test)]
mod tests;
