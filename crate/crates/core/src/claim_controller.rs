//! Turns submitted claims into desired configurations.
//!
//! The controller is stateless: any number of instances may run against
//! the same gateway. A claim is handled by one worker at a time because
//! `begin_claim` only hands out claims that are not already in flight.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::api::ApiService;
use crate::error::ApiError;
use crate::model::{ClaimId, ClaimStatus, MonitoringClaim, ProbeConfiguration, UnitStrategy};
use crate::store::ClaimRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimOutcome {
    /// At least one desired configuration changed.
    Updated,
    /// No probe serves some indicator, or resolution failed.
    Aborted,
    /// The claim was already reflected in the desired configurations.
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClaimReport {
    #[serde(rename = "claimId")]
    pub claim_id: ClaimId,
    pub outcome: ClaimOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    /// Desired-configuration writes issued for this claim.
    #[serde(rename = "desiredWrites")]
    pub desired_writes: u32,
    #[serde(rename = "unitsCreated")]
    pub units_created: u32,
    /// Units that only lost entries of probes the claim no longer needs.
    #[serde(rename = "sweptUnits")]
    pub swept_units: u32,
    /// Number of probe configurations the claim resolved to.
    #[serde(rename = "probeConfigs")]
    pub probe_configs: u32,
    /// The claim was re-submitted while being processed and stays queued.
    pub superseded: bool,
}

#[derive(Debug, Clone)]
pub struct ClaimController {
    api: Arc<ApiService>,
}

#[derive(Default)]
struct Tally {
    writes: u32,
    created: u32,
    swept: u32,
}

impl ClaimController {
    pub fn new(api: Arc<ApiService>) -> Self {
        Self { api }
    }

    /// Processes every claim waiting in SUBMITTED state.
    pub fn process_pending(&self) -> Vec<ClaimReport> {
        self.api
            .pending_claims()
            .into_iter()
            .filter_map(|id| match self.process_claim(&id) {
                Ok(report) => report,
                Err(e) => {
                    tracing::warn!(claim = %id, "claim processing failed: {e}");
                    None
                }
            })
            .collect()
    }

    /// Processes one claim. `None` when another worker holds it or it is
    /// not submitted.
    pub fn process_claim(&self, id: &ClaimId) -> Result<Option<ClaimReport>, ApiError> {
        let Some(rec) = self.api.begin_claim(id)? else {
            return Ok(None);
        };
        let mut tally = Tally::default();
        let resolved = self.resolve(&rec.claim);
        let (outcome, cause, n_configs) = match resolved {
            Err(cause) => (ClaimOutcome::Aborted, Some(cause), 0),
            Ok(configs) => match self.apply(&rec.claim, &configs, &mut tally) {
                Ok(()) if tally.writes > 0 => (ClaimOutcome::Updated, None, configs.len()),
                Ok(()) => (ClaimOutcome::Noop, None, configs.len()),
                Err(e) => (ClaimOutcome::Aborted, Some(e.to_string()), configs.len()),
            },
        };
        let status = match outcome {
            ClaimOutcome::Aborted => ClaimStatus::Aborted,
            _ => ClaimStatus::Fulfilled,
        };
        let applied = self.finish(&rec, status, cause.clone())?;
        Ok(Some(ClaimReport {
            claim_id: rec.id,
            outcome,
            cause,
            desired_writes: tally.writes,
            units_created: tally.created,
            swept_units: tally.swept,
            probe_configs: n_configs as u32,
            superseded: !applied,
        }))
    }

    fn finish(&self, rec: &ClaimRecord, status: ClaimStatus, cause: Option<String>) -> Result<bool, ApiError> {
        Ok(self.api.finish_claim(rec, status, cause)?)
    }

    fn resolve(&self, claim: &MonitoringClaim) -> Result<Vec<ProbeConfiguration>, String> {
        let res = self.api.get_probe_configs(claim).map_err(|e| e.to_string())?;
        if res.is_aborted() {
            let names: Vec<&str> = res.unmatched.iter().map(|i| i.as_str()).collect();
            return Err(format!("no matching probe for {}", names.join(", ")));
        }
        Ok(res.configs)
    }

    fn apply(
        &self,
        claim: &MonitoringClaim,
        configs: &[ProbeConfiguration],
        tally: &mut Tally,
    ) -> Result<(), ApiError> {
        let (target, op) = (&claim.target, &claim.operator);
        let mut record = |update: Option<crate::store::ConfUpdate>| {
            if let Some(u) = update {
                tally.writes += u.written as u32;
                tally.created += u.created as u32;
            }
        };
        match self.api.strategy() {
            UnitStrategy::MultiProbe => {
                record(self.api.update_conf_unit(target, op, configs)?);
            }
            UnitStrategy::SingleProbe => {
                for pc in configs {
                    record(self.api.update_conf_unit(target, op, std::slice::from_ref(pc))?);
                }
                // A claim replaces all earlier ones for the target: strip the operator
                // from units whose probe it no longer asks for.
                let wanted: BTreeSet<_> = configs.iter().map(|pc| pc.probe.id.clone()).collect();
                let swept = self.api.sweep_operator_entries(&target.key(), op, &wanted)?.len() as u32;
                tally.writes += swept;
                tally.swept += swept;
            }
        }
        Ok(())
    }

    /// Processes claims until `shutdown` is set, waking on every store
    /// change or after `interval`.
    pub fn run(&self, interval: Duration, shutdown: &AtomicBool) {
        while !shutdown.load(Ordering::Relaxed) {
            let seen = self.api.generation();
            self.process_pending();
            self.api.wait_for_change(seen, interval);
        }
    }
}

#[cfg(test)]
mod tests;
