//! The gateway in front of the repositories, the catalog and the bridge.
//!
//! Operators use the public methods. The claim and unit controllers use
//! the controller-facing methods further down; nothing outside this module
//! holds a reference to the [`StateStore`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bridge::{CloudBridge, FaultRule, SimulatedCloud};
use crate::catalog::{ExecutionConstraints, ProbeCatalog, ProbeResolution};
use crate::clock::{Clock, Millis};
use crate::error::{ApiError, BridgeError, CatalogError, StoreError};
use crate::events::{EventBus, EventKind, StatusEvent};
use crate::model::{
    effective_desired, ClaimId, ClaimStatus, ConfigKey, Indicator, MonitoringClaim, MonitoringRequest, MonitoringUnit,
    Operator, Probe, ProbeConfiguration, ProbeId, Target, TargetKey, UnitConfiguration, UnitId, UnitStrategy,
};
use crate::store::{
    ClaimRecord, ConfUpdate, ResetScope, RetryOutcome, StateStore, StoreMetrics, UnitOutcome, UnitRecord,
};

pub const DEFAULT_DATA_OUTPUT: &str = "ELASTICSEARCH";

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub strategy: UnitStrategy,
    /// Where probes ship their data; part of the matching constraints.
    pub data_output: String,
    /// How long a target listing fetched from the bridge is reused.
    pub target_cache_ttl: Duration,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            strategy: UnitStrategy::MultiProbe,
            data_output: DEFAULT_DATA_OUTPUT.to_owned(),
            target_cache_ttl: Duration::from_secs(2),
        }
    }
}

/// A request as operators send it: targets are referenced by key and
/// resolved against the bridge inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDoc {
    pub operator: Operator,
    pub claims: Vec<ClaimDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimDoc {
    #[serde(default)]
    pub indicators: BTreeSet<Indicator>,
    pub target: TargetKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSubmission {
    pub target: TargetKey,
    #[serde(rename = "claimId", skip_serializing_if = "Option::is_none")]
    pub claim_id: Option<ClaimId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    #[serde(rename = "requestId")]
    pub request_id: String,
    pub claims: Vec<ClaimSubmission>,
}

impl SubmitResponse {
    pub fn claim_ids(&self) -> Vec<ClaimId> {
        self.claims.iter().filter_map(|c| c.claim_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimView {
    pub id: ClaimId,
    pub status: ClaimStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    pub operator: Operator,
    pub target: TargetKey,
    pub indicators: BTreeSet<Indicator>,
}

impl From<&ClaimRecord> for ClaimView {
    fn from(rec: &ClaimRecord) -> Self {
        Self {
            id: rec.id.clone(),
            status: rec.claim.status,
            cause: rec.cause.clone(),
            operator: rec.claim.operator.clone(),
            target: rec.claim.target.key(),
            indicators: rec.claim.indicators.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryView {
    pub config: ConfigKey,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitView {
    #[serde(flatten)]
    pub unit: MonitoringUnit,
    #[serde(rename = "effectiveDesiredConf")]
    pub effective_desired: UnitConfiguration,
    pub provisioned: bool,
    #[serde(rename = "cleanPending")]
    pub clean_pending: bool,
    #[serde(rename = "leaseHolder", skip_serializing_if = "Option::is_none")]
    pub lease_holder: Option<String>,
    pub retries: Vec<RetryView>,
    pub blacklist: Vec<ConfigKey>,
}

#[derive(Debug, Default)]
struct TargetCache {
    fetched_at: Option<Millis>,
    /// Target and the platform hosting it.
    targets: BTreeMap<TargetKey, (String, Target)>,
}

#[derive(Debug)]
pub struct ApiService {
    store: StateStore,
    catalog: Arc<ProbeCatalog>,
    bridge: Arc<CloudBridge>,
    bus: Arc<EventBus>,
    config: ApiConfig,
    cache: Mutex<TargetCache>,
    next_request: AtomicU64,
}

impl ApiService {
    pub fn new(
        store: StateStore,
        catalog: Arc<ProbeCatalog>,
        bridge: Arc<CloudBridge>,
        bus: Arc<EventBus>,
        config: ApiConfig,
    ) -> Self {
        Self {
            store,
            catalog,
            bridge,
            bus,
            config,
            cache: Mutex::new(TargetCache::default()),
            next_request: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    pub fn strategy(&self) -> UnitStrategy {
        self.config.strategy
    }

    pub fn catalog(&self) -> &ProbeCatalog {
        &self.catalog
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        self.store.clock()
    }

    /// Operation counters of the repositories.
    pub fn store_metrics(&self) -> StoreMetrics {
        self.store.metrics()
    }

    fn inventory(&self) -> Result<BTreeMap<TargetKey, (String, Target)>, ApiError> {
        let now = self.clock().now_ms();
        let ttl = self.config.target_cache_ttl.as_millis() as u64;
        let mut cache = self.cache.lock();
        let fresh = cache.fetched_at.is_some_and(|t| now.saturating_sub(t) < ttl);
        if !fresh {
            cache.targets = self
                .bridge
                .all_targets()?
                .into_iter()
                .map(|(platform, t)| (t.key(), (platform, t)))
                .collect();
            cache.fetched_at = Some(now);
        }
        Ok(cache.targets.clone())
    }

    fn invalidate_targets(&self) {
        self.cache.lock().fetched_at = None;
    }

    /// Target document and hosting platform for `key`.
    pub fn resolve_target(&self, key: &TargetKey) -> Result<Option<(String, Target)>, ApiError> {
        Ok(self.inventory()?.get(key).cloned())
    }

    // ---- public API ---------------------------------------------------

    /// Stores every claim of the request and announces it on the bus.
    /// Returns before any actuation. Claims for unknown targets fail
    /// individually; the others proceed.
    pub fn submit_monitoring_request(&self, caller: &Operator, doc: &RequestDoc) -> Result<SubmitResponse, ApiError> {
        if &doc.operator != caller {
            return Err(ApiError::Forbidden(format!(
                "operator `{caller}` cannot submit on behalf of `{}`",
                doc.operator
            )));
        }
        if doc.claims.is_empty() {
            return Err(ApiError::BadRequest("request carries no claims".into()));
        }
        let mut keys = BTreeSet::new();
        for c in &doc.claims {
            if !keys.insert(&c.target) {
                return Err(ApiError::BadRequest(format!(
                    "more than one claim for target {}",
                    c.target
                )));
            }
        }
        doc.operator.validate()?;

        let inventory = self.inventory()?;
        let mut claims = Vec::new();
        let mut resolved = Vec::new();
        for c in &doc.claims {
            match inventory.get(&c.target) {
                Some((_, target)) => {
                    resolved.push(MonitoringClaim::new(
                        c.indicators.clone(),
                        doc.operator.clone(),
                        target.clone(),
                    ));
                }
                None => claims.push(ClaimSubmission {
                    target: c.target.clone(),
                    claim_id: None,
                    error: Some(StoreError::UnknownTarget(c.target.clone()).to_string()),
                }),
            }
        }
        MonitoringRequest {
            operator: doc.operator.clone(),
            claims: resolved.clone(),
        }
        .validate()?;

        for claim in resolved {
            let key = claim.target.key();
            let submission = match self.store.upsert_claim(claim, |k| inventory.contains_key(k)) {
                Ok(id) => {
                    self.announce_submitted(&id);
                    ClaimSubmission {
                        target: key,
                        claim_id: Some(id),
                        error: None,
                    }
                }
                Err(e) => ClaimSubmission {
                    target: key,
                    claim_id: None,
                    error: Some(e.to_string()),
                },
            };
            claims.push(submission);
        }
        let n = self.next_request.fetch_add(1, Ordering::Relaxed) + 1;
        Ok(SubmitResponse {
            request_id: format!("req-{n}"),
            claims,
        })
    }

    fn announce_submitted(&self, id: &ClaimId) {
        if let Some(rec) = self.store.get_claim(id) {
            self.bus.publish(
                EventKind::ClaimSubmitted,
                id.as_str(),
                json!({
                    "claimId": id,
                    "operator": rec.claim.operator,
                    "target": rec.claim.target.key(),
                    "indicators": rec.claim.indicators,
                    "version": rec.version,
                }),
            );
        }
    }

    pub fn get_claim_status(&self, caller: &Operator, id: &ClaimId) -> Result<ClaimView, ApiError> {
        let rec = self
            .store
            .get_claim(id)
            .ok_or_else(|| ApiError::NotFound(format!("claim {id}")))?;
        if &rec.claim.operator != caller {
            return Err(ApiError::Forbidden(format!("claim {id} belongs to another operator")));
        }
        Ok(ClaimView::from(&rec))
    }

    pub fn get_unit(&self, id: &UnitId) -> Result<UnitView, ApiError> {
        let rec = self
            .store
            .get_unit(id)
            .ok_or_else(|| ApiError::NotFound(format!("monitoring unit {id}")))?;
        let ledger = self.store.ledger();
        let blacklist = ledger.blacklist_for(id);
        Ok(UnitView {
            effective_desired: effective_desired(&rec.unit.desired_conf, &blacklist),
            provisioned: rec.provisioned,
            clean_pending: rec.clean_pending,
            lease_holder: self.store.lease_holder(id),
            retries: ledger
                .retries_for(id)
                .into_iter()
                .map(|(config, count)| RetryView { config, count })
                .collect(),
            blacklist: blacklist.into_iter().collect(),
            unit: rec.unit,
        })
    }

    pub fn list_units(&self) -> Vec<MonitoringUnit> {
        self.store.list_units().into_iter().map(|r| r.unit).collect()
    }

    pub fn list_targets(&self) -> Result<Vec<Target>, ApiError> {
        Ok(self.inventory()?.into_values().map(|(_, t)| t).collect())
    }

    pub fn upload_probe(&self, probe: Probe) -> Result<ProbeId, ApiError> {
        Ok(self.catalog.register_probe(probe)?)
    }

    pub fn list_probes(&self) -> Vec<Probe> {
        self.catalog.list()
    }

    pub fn reset_error_tables(&self, scope: &ResetScope) -> Result<(), ApiError> {
        self.store.reset_tables(scope).map_err(|e| match e {
            StoreError::UnknownUnit(u) => ApiError::NotFound(format!("monitoring unit {u}")),
            other => other.into(),
        })
    }

    fn simulated(&self) -> Result<Arc<SimulatedCloud>, ApiError> {
        self.bridge
            .simulated()
            .ok_or_else(|| BridgeError::Unsupported("no simulated plug-in registered".into()).into())
    }

    pub fn inject_fault(&self, rule: FaultRule) -> Result<(), ApiError> {
        self.simulated()?.inject_fault(rule).map_err(|e| match e {
            BridgeError::InvalidRule(m) => ApiError::BadRequest(m),
            other => other.into(),
        })
    }

    /// Re-reads the simulated plug-in's seed files.
    pub fn reload_seed(&self) -> Result<(), ApiError> {
        self.simulated()?.reload()?;
        self.invalidate_targets();
        Ok(())
    }

    /// Events after `since`, waiting up to `wait` for one to arrive.
    pub fn events_since(&self, since: u64, wait: Duration) -> Vec<StatusEvent> {
        if wait.is_zero() {
            self.bus.since(since)
        } else {
            self.bus.wait_since(since, wait)
        }
    }

    // ---- controller API -----------------------------------------------

    /// Submitted claims nobody is working on.
    pub fn pending_claims(&self) -> Vec<ClaimId> {
        self.store
            .list_claims()
            .into_iter()
            .filter(|r| r.claim.status == ClaimStatus::Submitted && !r.in_flight)
            .map(|r| r.id)
            .collect()
    }

    pub fn begin_claim(&self, id: &ClaimId) -> Result<Option<ClaimRecord>, StoreError> {
        self.store.begin_claim(id)
    }

    /// Records the outcome of a processed claim and emits the matching
    /// event. A claim re-submitted meanwhile is announced again instead.
    pub fn finish_claim(
        &self,
        rec: &ClaimRecord,
        status: ClaimStatus,
        cause: Option<String>,
    ) -> Result<bool, StoreError> {
        let applied = self.store.finish_claim(&rec.id, rec.version, status, cause.clone())?;
        if applied {
            let kind = match status {
                ClaimStatus::Aborted => EventKind::ClaimAborted,
                _ => EventKind::ClaimFulfilled,
            };
            self.bus.publish(
                kind,
                rec.id.as_str(),
                json!({
                    "claimId": rec.id,
                    "operator": rec.claim.operator,
                    "target": rec.claim.target.key(),
                    "status": status,
                    "cause": cause,
                }),
            );
        } else {
            self.announce_submitted(&rec.id);
        }
        Ok(applied)
    }

    pub fn constraints_for(&self, target: &Target) -> ExecutionConstraints {
        ExecutionConstraints::for_target(target, &self.config.data_output, self.config.strategy)
    }

    pub fn get_probe_configs(&self, claim: &MonitoringClaim) -> Result<ProbeResolution, CatalogError> {
        self.catalog
            .get_probe_configs(&claim.indicators, &claim.operator, &self.constraints_for(&claim.target))
    }

    pub fn get_monitoring_unit(
        &self,
        target: &TargetKey,
        configs: &[ProbeConfiguration],
    ) -> Result<Option<UnitRecord>, StoreError> {
        self.store.get_monitoring_unit(target, self.config.strategy, configs)
    }

    pub fn units_for_target(&self, target: &TargetKey) -> Vec<UnitRecord> {
        self.store.units_for_target(target)
    }

    /// Writes `restrict(desired, op) ∪ entries` on the unit serving
    /// `entries`, creating the unit on the target's platform when needed.
    pub fn update_conf_unit(
        &self,
        target: &Target,
        op: &Operator,
        entries: &[ProbeConfiguration],
    ) -> Result<Option<ConfUpdate>, ApiError> {
        let host = match self.resolve_target(&target.key())? {
            Some((host, _)) => host,
            None => target.platform.clone(),
        };
        Ok(self
            .store
            .apply_operator_entries(target, self.config.strategy, &host, op, entries)?)
    }

    pub fn replace_operator_entries(
        &self,
        unit: &UnitId,
        op: &Operator,
        entries: &[ProbeConfiguration],
    ) -> Result<bool, StoreError> {
        self.store.replace_operator_entries(unit, op, entries)
    }

    /// Strips `op` from every unit of `target` running a probe outside
    /// `keep`, atomically. Returns the units changed.
    pub fn sweep_operator_entries(
        &self,
        target: &TargetKey,
        op: &Operator,
        keep: &BTreeSet<ProbeId>,
    ) -> Result<Vec<UnitId>, StoreError> {
        self.store.sweep_operator_entries(target, op, keep)
    }

    pub fn list_divergent_units(&self) -> Vec<UnitRecord> {
        self.store.list_divergent_units()
    }

    pub fn get_unit_record(&self, id: &UnitId) -> Option<UnitRecord> {
        self.store.get_unit(id)
    }

    pub fn effective_desired(&self, id: &UnitId) -> Option<UnitConfiguration> {
        self.store.effective_desired(id)
    }

    pub fn acquire_lease(&self, id: &UnitId, holder: &str, ttl: Option<Duration>) -> bool {
        self.store.acquire_lease(id, holder, ttl)
    }

    pub fn acquire_lease_if_divergent(&self, id: &UnitId, holder: &str, ttl: Option<Duration>) -> bool {
        self.store.acquire_lease_if_divergent(id, holder, ttl)
    }

    pub fn lease_holder(&self, id: &UnitId) -> Option<String> {
        self.store.lease_holder(id)
    }

    pub fn release_lease(&self, id: &UnitId, holder: &str) {
        self.store.release_lease(id, holder)
    }

    pub fn record_outcome(&self, id: &UnitId, holder: &str, outcome: UnitOutcome) -> Result<(), StoreError> {
        self.store.record_outcome(id, holder, outcome)
    }

    pub fn remove_unit(&self, id: &UnitId, holder: &str, desired_version: u64) -> Result<bool, StoreError> {
        self.store.remove_unit(id, holder, desired_version)
    }

    pub fn inc_retry(&self, id: &UnitId, pc: &ProbeConfiguration) -> Result<RetryOutcome, StoreError> {
        self.store.inc_retry(id, pc)
    }

    pub fn blacklist_add(&self, id: &UnitId, pc: &ProbeConfiguration) -> Result<(), StoreError> {
        self.store.blacklist_add(id, pc)
    }

    pub fn bridge(&self) -> &CloudBridge {
        &self.bridge
    }

    pub fn publish(&self, kind: EventKind, subject: &str, payload: Value) -> u64 {
        self.bus.publish(kind, subject, payload)
    }

    /// Change generation of the repositories, for controllers that sleep
    /// until there is something new to look at.
    pub fn generation(&self) -> u64 {
        self.store.generation()
    }

    pub fn wait_for_change(&self, seen: u64, timeout: Duration) -> u64 {
        self.store.wait_for_change(seen, timeout)
    }
}

#[cfg(test)]
mod tests;
