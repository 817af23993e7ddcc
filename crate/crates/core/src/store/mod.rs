//! Repositories for monitoring claims, monitoring units and the error
//! ledger.
//!
//! Every operation runs under one lock and is therefore atomic and
//! linearizable. When a state directory is configured, each mutation
//! rewrites the affected snapshot (`claims.json`, `units.json`,
//! `ledger.json`) through an atomic rename.

mod ledger;

pub use ledger::{ErrorLedger, ResetScope, RetryOutcome};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, MutexGuard};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Millis};
use crate::error::StoreError;
use crate::fsutil::write_atomic;
use crate::model::{
    effective_desired, probes_of, restrict_configuration, ClaimId, ClaimStatus, ConfigKey, MonitoringClaim,
    MonitoringUnit, Operator, ProbeConfiguration, ProbeId, Target, TargetKey, UnitConfiguration, UnitId, UnitState,
    UnitStrategy,
};

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_RETRY_THRESHOLD: u32 = 3;
pub const DEFAULT_LEASE_TTL: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub retry_threshold: u32,
    pub lease_ttl: Duration,
    pub state_dir: Option<PathBuf>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            retry_threshold: DEFAULT_RETRY_THRESHOLD,
            lease_ttl: DEFAULT_LEASE_TTL,
            state_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: ClaimId,
    pub claim: MonitoringClaim,
    /// Bumped on every upsert; lets a controller detect that the claim
    /// changed while it was being processed.
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    #[serde(rename = "inFlight", default)]
    pub in_flight: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub holder: String,
    #[serde(rename = "expiresAt")]
    pub expires_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: MonitoringUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease: Option<Lease>,
    /// The bridge holds an instance for this unit.
    #[serde(default)]
    pub provisioned: bool,
    /// Number of desired-configuration writes so far.
    #[serde(rename = "desiredVersion", default)]
    pub desired_version: u64,
    /// A clean was requested but has not succeeded yet.
    #[serde(rename = "cleanPending", default)]
    pub clean_pending: bool,
}

impl UnitRecord {
    pub fn id(&self) -> &UnitId {
        &self.unit.id
    }

    fn lease_active(&self, now: Millis) -> Option<&Lease> {
        self.lease.as_ref().filter(|l| l.expires_at > now)
    }
}

/// What the unit controller writes back after acting on a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitOutcome {
    pub current: UnitConfiguration,
    pub state: UnitState,
    pub provisioned: bool,
    pub clean_pending: bool,
}

/// Result of [`StateStore::apply_operator_entries`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfUpdate {
    pub unit: UnitId,
    pub created: bool,
    /// The desired configuration changed.
    pub written: bool,
}

/// Operation counters, used to check the work bounds of the controllers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreMetrics {
    pub claim_upserts: u64,
    pub claim_status_writes: u64,
    pub units_created: u64,
    /// Desired configurations replaced, counted per unit.
    pub desired_writes: u64,
    /// Store transactions that replaced at least one desired configuration.
    pub desired_commits: u64,
    pub outcome_writes: u64,
    pub units_removed: u64,
    pub retry_writes: u64,
    pub blacklist_writes: u64,
    pub divergence_notices: u64,
}

impl StoreMetrics {
    pub fn ledger_writes(&self) -> u64 {
        self.retry_writes + self.blacklist_writes
    }
}

#[derive(Debug, Default)]
struct Inner {
    claims: BTreeMap<ClaimId, ClaimRecord>,
    claim_index: BTreeMap<(Operator, TargetKey), ClaimId>,
    units: BTreeMap<UnitId, UnitRecord>,
    ledger: ErrorLedger,
    next_claim: u64,
    next_unit: u64,
    metrics: StoreMetrics,
    generation: u64,
}

#[derive(Debug)]
pub struct StateStore {
    inner: Mutex<Inner>,
    changed: Condvar,
    config: StoreConfig,
    clock: Arc<dyn Clock>,
}

#[derive(Serialize, Deserialize)]
struct ClaimsDoc {
    #[serde(rename = "schemaVersion")]
    schema_version: u64,
    #[serde(rename = "nextId")]
    next_id: u64,
    claims: Vec<ClaimRecord>,
}

#[derive(Serialize, Deserialize)]
struct UnitsDoc {
    #[serde(rename = "schemaVersion")]
    schema_version: u64,
    #[serde(rename = "nextId")]
    next_id: u64,
    units: Vec<UnitRecord>,
}

#[derive(Serialize, Deserialize)]
struct LedgerFile {
    #[serde(rename = "schemaVersion")]
    schema_version: u64,
    #[serde(flatten)]
    ledger: ledger::LedgerDoc,
}

#[derive(Clone, Copy)]
enum Repo {
    Claims,
    Units,
    Ledger,
}

impl StateStore {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::with_config(StoreConfig::default(), clock)
    }

    /// A store without persistence using `config` thresholds.
    pub fn with_config(config: StoreConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            config,
            clock,
        }
    }

    /// Opens a persistent store, loading any snapshots already present in
    /// `config.state_dir`.
    pub fn open(config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let mut inner = Inner::default();
        if let Some(dir) = &config.state_dir {
            if let Some(doc) = load_doc::<ClaimsDoc>(&dir.join("claims.json"), |d| d.schema_version)? {
                inner.next_claim = doc.next_id;
                for rec in doc.claims {
                    inner
                        .claim_index
                        .insert((rec.claim.operator.clone(), rec.claim.target.key()), rec.id.clone());
                    inner.claims.insert(rec.id.clone(), rec);
                }
            }
            if let Some(doc) = load_doc::<UnitsDoc>(&dir.join("units.json"), |d| d.schema_version)? {
                inner.next_unit = doc.next_id;
                inner.units = doc.units.into_iter().map(|r| (r.unit.id.clone(), r)).collect();
            }
            if let Some(doc) = load_doc::<LedgerFile>(&dir.join("ledger.json"), |d| d.schema_version)? {
                inner.ledger = ErrorLedger::from_doc(doc.ledger);
            }
        }
        Ok(Self {
            inner: Mutex::new(inner),
            changed: Condvar::new(),
            config,
            clock,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn persist(&self, inner: &Inner, repos: &[Repo]) -> Result<(), StoreError> {
        let Some(dir) = &self.config.state_dir else {
            return Ok(());
        };
        for repo in repos {
            let (name, bytes) = match repo {
                Repo::Claims => (
                    "claims.json",
                    serde_json::to_vec_pretty(&ClaimsDoc {
                        schema_version: SCHEMA_VERSION,
                        next_id: inner.next_claim,
                        claims: inner.claims.values().cloned().collect(),
                    }),
                ),
                Repo::Units => (
                    "units.json",
                    serde_json::to_vec_pretty(&UnitsDoc {
                        schema_version: SCHEMA_VERSION,
                        next_id: inner.next_unit,
                        units: inner.units.values().cloned().collect(),
                    }),
                ),
                Repo::Ledger => (
                    "ledger.json",
                    serde_json::to_vec_pretty(&LedgerFile {
                        schema_version: SCHEMA_VERSION,
                        ledger: inner.ledger.to_doc(),
                    }),
                ),
            };
            let path = dir.join(name);
            let bytes = bytes.expect("snapshot serializes");
            write_atomic(&path, &bytes).map_err(|source| StoreError::Io { path, source })?;
        }
        Ok(())
    }

    /// Finishes a mutation: persists, bumps the change generation and wakes
    /// waiters.
    fn commit(&self, mut inner: MutexGuard<'_, Inner>, repos: &[Repo]) -> Result<(), StoreError> {
        self.persist(&inner, repos)?;
        inner.generation += 1;
        drop(inner);
        self.changed.notify_all();
        Ok(())
    }

    /// Current change generation; see [`wait_for_change`](Self::wait_for_change).
    pub fn generation(&self) -> u64 {
        self.inner.lock().generation
    }

    /// Blocks until the store changes past `seen` or `timeout` elapses.
    pub fn wait_for_change(&self, seen: u64, timeout: Duration) -> u64 {
        let deadline = std::time::Instant::now() + timeout;
        let mut inner = self.inner.lock();
        while inner.generation <= seen {
            if self.changed.wait_until(&mut inner, deadline).timed_out() {
                break;
            }
        }
        inner.generation
    }

    pub fn metrics(&self) -> StoreMetrics {
        self.inner.lock().metrics
    }

    // ---- claims -------------------------------------------------------

    /// Stores `claim`, replacing any claim of the same operator for the same
    /// target, and marks it SUBMITTED.
    pub fn upsert_claim(
        &self,
        mut claim: MonitoringClaim,
        is_known_target: impl Fn(&TargetKey) -> bool,
    ) -> Result<ClaimId, StoreError> {
        let key = claim.target.key();
        if !is_known_target(&key) {
            return Err(StoreError::UnknownTarget(key));
        }
        claim.status = ClaimStatus::Submitted;
        let mut inner = self.inner.lock();
        let index_key = (claim.operator.clone(), key);
        let id = match inner.claim_index.get(&index_key) {
            Some(id) => id.clone(),
            None => {
                inner.next_claim += 1;
                let id = ClaimId::new(format!("claim-{}", inner.next_claim));
                inner.claim_index.insert(index_key, id.clone());
                id
            }
        };
        match inner.claims.get_mut(&id) {
            Some(rec) => {
                rec.claim = claim;
                rec.version += 1;
                rec.cause = None;
            }
            None => {
                inner.claims.insert(
                    id.clone(),
                    ClaimRecord {
                        id: id.clone(),
                        claim,
                        version: 1,
                        cause: None,
                        in_flight: false,
                    },
                );
            }
        }
        inner.metrics.claim_upserts += 1;
        self.commit(inner, &[Repo::Claims])?;
        Ok(id)
    }

    pub fn get_claim(&self, id: &ClaimId) -> Option<ClaimRecord> {
        self.inner.lock().claims.get(id).cloned()
    }

    pub fn list_claims(&self) -> Vec<ClaimRecord> {
        self.inner.lock().claims.values().cloned().collect()
    }

    /// Claims a SUBMITTED record for processing. Returns `None` when the
    /// claim is not submitted or another worker is already on it, which
    /// keeps processing serial per (operator, target).
    pub fn begin_claim(&self, id: &ClaimId) -> Result<Option<ClaimRecord>, StoreError> {
        let mut inner = self.inner.lock();
        let Some(rec) = inner.claims.get_mut(id) else {
            return Err(StoreError::UnknownClaim(id.clone()));
        };
        if rec.in_flight || rec.claim.status != ClaimStatus::Submitted {
            return Ok(None);
        }
        rec.in_flight = true;
        rec.claim.status = ClaimStatus::Processing;
        let snapshot = rec.clone();
        inner.metrics.claim_status_writes += 1;
        self.commit(inner, &[Repo::Claims])?;
        Ok(Some(snapshot))
    }

    /// Records the terminal status of a processed claim. Returns `false`
    /// when the claim was re-submitted meanwhile; it then stays SUBMITTED.
    pub fn finish_claim(
        &self,
        id: &ClaimId,
        version: u64,
        status: ClaimStatus,
        cause: Option<String>,
    ) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let Some(rec) = inner.claims.get_mut(id) else {
            return Err(StoreError::UnknownClaim(id.clone()));
        };
        rec.in_flight = false;
        let current = rec.version == version;
        if current {
            rec.claim.status = status;
            rec.cause = cause;
        }
        inner.metrics.claim_status_writes += 1;
        self.commit(inner, &[Repo::Claims])?;
        Ok(current)
    }

    // ---- units --------------------------------------------------------

    pub fn get_unit(&self, id: &UnitId) -> Option<UnitRecord> {
        self.inner.lock().units.get(id).cloned()
    }

    pub fn list_units(&self) -> Vec<UnitRecord> {
        self.inner.lock().units.values().cloned().collect()
    }

    pub fn units_for_target(&self, target: &TargetKey) -> Vec<UnitRecord> {
        self.inner
            .lock()
            .units
            .values()
            .filter(|r| &r.unit.target.key() == target)
            .cloned()
            .collect()
    }

    /// Finds the unit that should receive `configs` for `target`.
    ///
    /// MULTI_PROBE: the unit of the target. SINGLE_PROBE: the unit whose
    /// desired configuration references the (single) probe of `configs`,
    /// falling back to a unit still running it.
    pub fn get_monitoring_unit(
        &self,
        target: &TargetKey,
        strategy: UnitStrategy,
        configs: &[ProbeConfiguration],
    ) -> Result<Option<UnitRecord>, StoreError> {
        let inner = self.inner.lock();
        Ok(Self::lookup(&inner, target, strategy, configs)?.cloned())
    }

    fn lookup<'a>(
        inner: &'a Inner,
        target: &TargetKey,
        strategy: UnitStrategy,
        configs: &[ProbeConfiguration],
    ) -> Result<Option<&'a UnitRecord>, StoreError> {
        let for_target = || inner.units.values().filter(move |r| &r.unit.target.key() == target);
        match strategy {
            UnitStrategy::MultiProbe => Ok(for_target().find(|r| r.unit.strategy == UnitStrategy::MultiProbe)),
            UnitStrategy::SingleProbe => {
                let probes: BTreeSet<&ProbeId> = configs.iter().map(|pc| &pc.probe.id).collect();
                if probes.len() != 1 {
                    return Err(StoreError::StrategyViolation(format!(
                        "single-probe lookup needs exactly one probe, got {}",
                        probes.len()
                    )));
                }
                let probe = *probes.iter().next().unwrap();
                let single = || for_target().filter(|r| r.unit.strategy == UnitStrategy::SingleProbe);
                let by_desired = single().find(|r| probes_of(&r.unit.desired_conf).contains(probe));
                let by_current = || {
                    single().find(|r| r.unit.desired_conf.is_empty() && probes_of(&r.unit.current_conf).contains(probe))
                };
                Ok(by_desired.or_else(by_current))
            }
        }
    }

    pub fn create_empty_unit(
        &self,
        target: &Target,
        strategy: UnitStrategy,
        host: &str,
    ) -> Result<UnitRecord, StoreError> {
        let mut inner = self.inner.lock();
        let rec = Self::insert_unit(&mut inner, target, strategy, host)?;
        self.commit(inner, &[Repo::Units])?;
        Ok(rec)
    }

    /// Locates the unit for `entries` (creating it when missing) and swaps
    /// the entries of `op` in its desired configuration, as one atomic
    /// step so concurrent claim workers can neither duplicate a unit nor
    /// lose each other's entries. With no unit and no entries nothing is
    /// created and `None` is returned.
    pub fn apply_operator_entries(
        &self,
        target: &Target,
        strategy: UnitStrategy,
        host: &str,
        op: &Operator,
        entries: &[ProbeConfiguration],
    ) -> Result<Option<ConfUpdate>, StoreError> {
        if let Some(pc) = entries.iter().find(|pc| &pc.operator != op) {
            return Err(StoreError::StrategyViolation(format!(
                "entry {pc} does not belong to operator {op}"
            )));
        }
        let mut inner = self.inner.lock();
        let found = Self::lookup(&inner, &target.key(), strategy, entries)?.map(|r| r.id().clone());
        let (unit, created) = match found {
            Some(id) => (id, false),
            None if entries.is_empty() => return Ok(None),
            None => (
                Self::insert_unit(&mut inner, target, strategy, host)?.id().clone(),
                true,
            ),
        };
        let current = &inner.units[&unit].unit.desired_conf;
        let mut next = restrict_configuration(current, op);
        for pc in entries {
            next.insert(pc.clone());
        }
        let written = &next != current;
        if written {
            Self::write_desired(&mut inner, &unit, next)?;
            inner.metrics.desired_commits += 1;
        }
        if created || written {
            self.commit(inner, &[Repo::Units])?;
        }
        Ok(Some(ConfUpdate { unit, created, written }))
    }

    fn insert_unit(
        inner: &mut Inner,
        target: &Target,
        strategy: UnitStrategy,
        host: &str,
    ) -> Result<UnitRecord, StoreError> {
        let key = target.key();
        let clash = inner.units.values().any(|r| {
            r.unit.target.key() == key
                && (strategy == UnitStrategy::MultiProbe || r.unit.strategy == UnitStrategy::MultiProbe)
        });
        if clash {
            return Err(StoreError::StrategyViolation(format!(
                "target {key} already has a monitoring unit"
            )));
        }
        inner.next_unit += 1;
        let id = UnitId::new(format!("mu-{:04}", inner.next_unit));
        let rec = UnitRecord {
            unit: MonitoringUnit::empty(id.clone(), target.clone(), host.to_owned(), strategy),
            lease: None,
            provisioned: false,
            desired_version: 0,
            clean_pending: false,
        };
        inner.units.insert(id, rec.clone());
        inner.metrics.units_created += 1;
        Ok(rec)
    }

    /// Replaces the desired configuration. Returns whether the unit now
    /// diverges from its current configuration.
    pub fn update_desired_conf(&self, id: &UnitId, conf: UnitConfiguration) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let diverged = Self::write_desired(&mut inner, id, conf)?;
        inner.metrics.desired_commits += 1;
        self.commit(inner, &[Repo::Units])?;
        Ok(diverged)
    }

    /// Swaps the entries of `op` in the desired configuration of `id` for
    /// `entries`, leaving every other operator untouched. Nothing is written
    /// when the result equals the stored configuration; the return value
    /// tells whether a write happened.
    pub fn replace_operator_entries(
        &self,
        id: &UnitId,
        op: &Operator,
        entries: &[ProbeConfiguration],
    ) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let rec = inner.units.get(id).ok_or_else(|| StoreError::UnknownUnit(id.clone()))?;
        let mut next = restrict_configuration(&rec.unit.desired_conf, op);
        for pc in entries {
            if &pc.operator != op {
                return Err(StoreError::StrategyViolation(format!(
                    "entry {pc} does not belong to operator {op}"
                )));
            }
            next.insert(pc.clone());
        }
        if next == rec.unit.desired_conf {
            return Ok(false);
        }
        Self::write_desired(&mut inner, id, next)?;
        inner.metrics.desired_commits += 1;
        self.commit(inner, &[Repo::Units])?;
        Ok(true)
    }

    /// Removes every entry of `op` from the units of `target` that run a
    /// probe outside `keep`, in one transaction. Returns the units changed.
    pub fn sweep_operator_entries(
        &self,
        target: &TargetKey,
        op: &Operator,
        keep: &BTreeSet<ProbeId>,
    ) -> Result<Vec<UnitId>, StoreError> {
        let mut inner = self.inner.lock();
        let stale: Vec<UnitId> = inner
            .units
            .values()
            .filter(|r| &r.unit.target.key() == target)
            .filter(|r| {
                let desired = &r.unit.desired_conf;
                desired
                    .iter()
                    .any(|pc| &pc.operator == op && !keep.contains(&pc.probe.id))
            })
            .map(|r| r.id().clone())
            .collect();
        if stale.is_empty() {
            return Ok(stale);
        }
        for id in &stale {
            let next = restrict_configuration(&inner.units[id].unit.desired_conf, op);
            Self::write_desired(&mut inner, id, next)?;
        }
        inner.metrics.desired_commits += 1;
        self.commit(inner, &[Repo::Units])?;
        Ok(stale)
    }

    fn write_desired(inner: &mut Inner, id: &UnitId, conf: UnitConfiguration) -> Result<bool, StoreError> {
        let rec = inner
            .units
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownUnit(id.clone()))?;
        if rec.unit.strategy == UnitStrategy::SingleProbe && probes_of(&conf).len() > 1 {
            return Err(StoreError::StrategyViolation(format!(
                "single-probe unit {id} cannot host {} probes",
                probes_of(&conf).len()
            )));
        }
        let diverged = conf != rec.unit.current_conf;
        rec.unit.desired_conf = conf;
        rec.desired_version += 1;
        inner.metrics.desired_writes += 1;
        if diverged {
            inner.metrics.divergence_notices += 1;
        }
        Ok(diverged)
    }

    /// Unleased units with work to do: the effective desired configuration
    /// differs from the current one, an emptied unit still holds resources,
    /// or a clean is pending.
    pub fn list_divergent_units(&self) -> Vec<UnitRecord> {
        let now = self.clock.now_ms();
        let inner = self.inner.lock();
        inner
            .units
            .values()
            .filter(|r| r.lease_active(now).is_none())
            .filter(|r| needs_work(r, &inner.ledger.blacklist_for(&r.unit.id)))
            .cloned()
            .collect()
    }

    /// The desired configuration of `id` minus its blacklisted entries.
    pub fn effective_desired(&self, id: &UnitId) -> Option<UnitConfiguration> {
        let inner = self.inner.lock();
        let rec = inner.units.get(id)?;
        Some(effective_desired(
            &rec.unit.desired_conf,
            &inner.ledger.blacklist_for(id),
        ))
    }

    pub fn acquire_lease(&self, id: &UnitId, holder: &str, ttl: Option<Duration>) -> bool {
        self.lease_when(id, holder, ttl, |_, _| true)
    }

    /// Leases `id` only if it still needs work, so a replica that listed
    /// the unit before another one reconciled it does not run it again.
    pub fn acquire_lease_if_divergent(&self, id: &UnitId, holder: &str, ttl: Option<Duration>) -> bool {
        self.lease_when(id, holder, ttl, needs_work)
    }

    fn lease_when(
        &self,
        id: &UnitId,
        holder: &str,
        ttl: Option<Duration>,
        pred: fn(&UnitRecord, &BTreeSet<ConfigKey>) -> bool,
    ) -> bool {
        let now = self.clock.now_ms();
        let ttl = ttl.unwrap_or(self.config.lease_ttl);
        let mut inner = self.inner.lock();
        let blacklist = inner.ledger.blacklist_for(id);
        let Some(rec) = inner.units.get_mut(id) else {
            return false;
        };
        if !pred(rec, &blacklist) {
            return false;
        }
        if let Some(l) = rec.lease_active(now) {
            if l.holder != holder {
                return false;
            }
        }
        rec.lease = Some(Lease {
            holder: holder.to_owned(),
            expires_at: now + ttl.as_millis() as u64,
        });
        self.commit(inner, &[Repo::Units]).is_ok()
    }

    pub fn release_lease(&self, id: &UnitId, holder: &str) {
        let mut inner = self.inner.lock();
        let Some(rec) = inner.units.get_mut(id) else {
            return;
        };
        if rec.lease.as_ref().is_some_and(|l| l.holder == holder) {
            rec.lease = None;
            if let Err(e) = self.commit(inner, &[Repo::Units]) {
                tracing::warn!("persisting lease release failed: {e}");
            }
        }
    }

    pub fn lease_holder(&self, id: &UnitId) -> Option<String> {
        let now = self.clock.now_ms();
        let inner = self.inner.lock();
        inner
            .units
            .get(id)
            .and_then(|r| r.lease_active(now))
            .map(|l| l.holder.clone())
    }

    fn held_unit<'a>(inner: &'a mut Inner, id: &UnitId, holder: &str) -> Result<&'a mut UnitRecord, StoreError> {
        let rec = inner
            .units
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownUnit(id.clone()))?;
        if rec.lease.as_ref().is_none_or(|l| l.holder != holder) {
            return Err(StoreError::LeaseLost(id.clone()));
        }
        Ok(rec)
    }

    /// Writes the result of an actuation. Never touches the desired
    /// configuration.
    pub fn record_outcome(&self, id: &UnitId, holder: &str, outcome: UnitOutcome) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let rec = Self::held_unit(&mut inner, id, holder)?;
        rec.unit.current_conf = outcome.current;
        rec.unit.state = outcome.state;
        rec.provisioned = outcome.provisioned;
        rec.clean_pending = outcome.clean_pending;
        inner.metrics.outcome_writes += 1;
        self.commit(inner, &[Repo::Units])
    }

    /// Deletes a dismissed unit and its ledger rows, unless its desired
    /// configuration changed since `desired_version` was read.
    pub fn remove_unit(&self, id: &UnitId, holder: &str, desired_version: u64) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let rec = Self::held_unit(&mut inner, id, holder)?;
        if rec.desired_version != desired_version || !rec.unit.desired_conf.is_empty() {
            return Ok(false);
        }
        inner.units.remove(id);
        inner.ledger.reset(&ResetScope::Unit(id.clone()));
        inner.metrics.units_removed += 1;
        self.commit(inner, &[Repo::Units, Repo::Ledger])?;
        Ok(true)
    }

    // ---- error ledger -------------------------------------------------

    /// Counts one more soft failure of `pc`; reaching the retry threshold
    /// moves it to the blacklist.
    pub fn inc_retry(&self, id: &UnitId, pc: &ProbeConfiguration) -> Result<RetryOutcome, StoreError> {
        let mut inner = self.inner.lock();
        let threshold = self.config.retry_threshold;
        let out = inner.ledger.inc_retry(id, pc.key(), threshold);
        inner.metrics.retry_writes += 1;
        self.commit(inner, &[Repo::Ledger])?;
        Ok(out)
    }

    pub fn blacklist_add(&self, id: &UnitId, pc: &ProbeConfiguration) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        inner.ledger.blacklist_add(id, pc.key());
        inner.metrics.blacklist_writes += 1;
        self.commit(inner, &[Repo::Ledger])
    }

    pub fn reset_tables(&self, scope: &ResetScope) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        if let ResetScope::Unit(u) = scope {
            if !inner.units.contains_key(u) {
                return Err(StoreError::UnknownUnit(u.clone()));
            }
        }
        inner.ledger.reset(scope);
        self.commit(inner, &[Repo::Ledger])
    }

    pub fn ledger(&self) -> ErrorLedger {
        self.inner.lock().ledger.clone()
    }

    pub fn retry_count(&self, id: &UnitId, key: &ConfigKey) -> u32 {
        self.inner.lock().ledger.retry_count(id, key)
    }

    pub fn blacklist_for(&self, id: &UnitId) -> BTreeSet<ConfigKey> {
        self.inner.lock().ledger.blacklist_for(id)
    }
}

fn needs_work(rec: &UnitRecord, blacklist: &BTreeSet<ConfigKey>) -> bool {
    let unit = &rec.unit;
    let eff = effective_desired(&unit.desired_conf, blacklist);
    rec.clean_pending
        || eff != unit.current_conf
        || (eff.is_empty() && rec.provisioned)
        || (unit.desired_conf.is_empty() && rec.desired_version > 0)
}

fn load_doc<T: DeserializeOwned>(path: &Path, version_of: impl Fn(&T) -> u64) -> Result<Option<T>, StoreError> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    let doc: T = serde_json::from_slice(&bytes).map_err(|source| StoreError::Decode {
        path: path.to_owned(),
        source,
    })?;
    let found = version_of(&doc);
    if found != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            path: path.to_owned(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(Some(doc))
}
