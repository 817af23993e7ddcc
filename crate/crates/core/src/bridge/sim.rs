//! Deterministic in-memory cloud.
//!
//! Every monitoring unit maps to an instance holding a process table
//! (probe → artifact, indicator → operators served). Fault rules turn
//! individual probe changes into soft or hard errors, and a seeded latency
//! model attaches a simulated duration to every call.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::fault::{FaultBook, FaultPhase, FaultRule};
use super::latency::{LatencyModel, Phase};
use super::{BridgePlugin, PluginDescriptor};
use crate::error::BridgeError;
use crate::model::{
    BridgeResult, ChangeSet, ConfigKey, EnvType, Indicator, MonitoringUnit, Operator, ProbeChange, ProbeId, Target,
    TargetKey, UnitId, UnitStrategy,
};

/// One running probe inside a simulated instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Process {
    #[serde(rename = "artifactId")]
    pub artifact_id: String,
    pub indicators: BTreeMap<Indicator, BTreeSet<Operator>>,
    /// Left behind by a failed apply; its real state is unknown.
    pub broken: bool,
}

impl Process {
    fn from_change(change: &ProbeChange, broken: bool) -> Self {
        let mut indicators: BTreeMap<Indicator, BTreeSet<Operator>> = BTreeMap::new();
        for pc in &change.entries {
            for i in &pc.indicators {
                indicators.entry(i.clone()).or_default().insert(pc.operator.clone());
            }
        }
        Self {
            artifact_id: change.probe.artifact_id.clone(),
            indicators,
            broken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub handle: String,
    pub strategy: UnitStrategy,
    pub processes: BTreeMap<ProbeId, Process>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChangeKind {
    Add,
    Update,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChangeOutcome {
    Applied,
    SoftError,
    HardError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub kind: ChangeKind,
    pub probe: ProbeId,
    #[serde(rename = "artifactId")]
    pub artifact_id: String,
    pub entries: Vec<ConfigKey>,
    pub outcome: ChangeOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CallOp {
    DoChanges { changes: Vec<ChangeRecord> },
    Transport,
    Clean { ok: bool },
    Dismiss { stopped: Vec<ProbeId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeCall {
    pub seq: u64,
    pub unit: UnitId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    #[serde(flatten)]
    pub op: CallOp,
    /// Simulated duration of the call.
    #[serde(rename = "simMs")]
    pub sim_ms: u64,
}

impl BridgeCall {
    pub fn changes(&self) -> &[ChangeRecord] {
        match &self.op {
            CallOp::DoChanges { changes } => changes,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    #[serde(rename = "doChangesCalls")]
    pub do_changes_calls: u64,
    pub adds: u64,
    pub updates: u64,
    pub drops: u64,
    #[serde(rename = "softErrors")]
    pub soft_errors: u64,
    #[serde(rename = "hardErrors")]
    pub hard_errors: u64,
    pub cleans: u64,
    #[serde(rename = "cleanFailures")]
    pub clean_failures: u64,
    pub dismissals: u64,
    #[serde(rename = "transportFailures")]
    pub transport_failures: u64,
    /// Calls that entered a unit while another call on it was in progress.
    #[serde(rename = "reentrancyViolations")]
    pub reentrancy_violations: u64,
}

impl SimStats {
    /// Probe changes attempted, whatever their outcome.
    pub fn changes(&self) -> u64 {
        self.adds + self.updates + self.drops
    }

    /// Attempted adds and updates.
    pub fn deploys(&self) -> u64 {
        self.adds + self.updates
    }
}

#[derive(Debug, Default)]
struct SimState {
    targets: BTreeMap<TargetKey, Target>,
    instances: BTreeMap<UnitId, Instance>,
    generations: BTreeMap<UnitId, u64>,
    call_seq: BTreeMap<UnitId, u64>,
    faults: FaultBook,
    latency: LatencyModel,
    log: Vec<BridgeCall>,
    stats: SimStats,
}

impl SimState {
    fn next_call(&mut self, unit: &UnitId) -> u64 {
        let n = self.call_seq.entry(unit.clone()).or_insert(0);
        *n += 1;
        *n
    }

    fn new_instance(&mut self, unit: &UnitId, strategy: UnitStrategy) -> Instance {
        let g = self.generations.entry(unit.clone()).or_insert(0);
        *g += 1;
        Instance {
            handle: format!("{unit}-i{g}"),
            strategy,
            processes: BTreeMap::new(),
        }
    }

    fn push_log(&mut self, unit: &UnitId, op: CallOp, sim_ms: u64) {
        let instance = self.instances.get(unit).map(|i| i.handle.clone());
        let seq = self.log.len() as u64 + 1;
        self.log.push(BridgeCall {
            seq,
            unit: unit.clone(),
            instance,
            op,
            sim_ms,
        });
    }
}

#[derive(Debug)]
pub struct SimulatedCloud {
    platform: String,
    state: Mutex<SimState>,
    active: Mutex<BTreeSet<UnitId>>,
    source_dir: Option<PathBuf>,
}

/// Marks a unit busy for the lifetime of a call.
struct ActiveGuard<'a> {
    cloud: &'a SimulatedCloud,
    unit: UnitId,
    owned: bool,
}

impl Drop for ActiveGuard<'_> {
    fn drop(&mut self) {
        if self.owned {
            self.cloud.active.lock().remove(&self.unit);
        }
    }
}

impl SimulatedCloud {
    pub fn new(platform: &str) -> Self {
        Self {
            platform: platform.to_owned(),
            state: Mutex::new(SimState::default()),
            active: Mutex::new(BTreeSet::new()),
            source_dir: None,
        }
    }

    pub fn with_targets(platform: &str, targets: impl IntoIterator<Item = Target>) -> Self {
        let sim = Self::new(platform);
        for t in targets {
            sim.add_target(t);
        }
        sim
    }

    /// Seeds the inventory from `dir/targets.json` and the fault rules from
    /// `dir/faults.json`; both files are optional.
    pub fn from_dir(platform: &str, dir: &Path) -> Result<Self, BridgeError> {
        let mut sim = Self::new(platform);
        sim.source_dir = Some(dir.to_owned());
        sim.reload()?;
        Ok(sim)
    }

    /// Re-reads the seed files given to [`from_dir`](Self::from_dir).
    /// Running instances are kept.
    pub fn reload(&self) -> Result<(), BridgeError> {
        let Some(dir) = &self.source_dir else {
            return Err(BridgeError::Unsupported("no seed directory configured".into()));
        };
        let targets: Vec<Target> = read_json(&dir.join("targets.json"))?.unwrap_or_default();
        let rules: Vec<FaultRule> = read_json(&dir.join("faults.json"))?.unwrap_or_default();
        let mut faults = FaultBook::default();
        for r in rules {
            faults.push(r)?;
        }
        let mut st = self.state.lock();
        st.targets = targets.into_iter().map(|t| (t.key(), t)).collect();
        st.faults = faults;
        Ok(())
    }

    pub fn add_target(&self, target: Target) {
        self.state.lock().targets.insert(target.key(), target);
    }

    pub fn inject_fault(&self, rule: FaultRule) -> Result<(), BridgeError> {
        self.state.lock().faults.push(rule)
    }

    pub fn clear_faults(&self) {
        self.state.lock().faults.clear();
    }

    pub fn fault_rules(&self) -> Vec<FaultRule> {
        self.state.lock().faults.rules().to_vec()
    }

    pub fn set_latency_model(&self, model: LatencyModel) {
        self.state.lock().latency = model;
    }

    pub fn latency_model(&self) -> LatencyModel {
        self.state.lock().latency.clone()
    }

    pub fn instance(&self, unit: &UnitId) -> Option<Instance> {
        self.state.lock().instances.get(unit).cloned()
    }

    pub fn instances(&self) -> BTreeMap<UnitId, Instance> {
        self.state.lock().instances.clone()
    }

    pub fn call_log(&self) -> Vec<BridgeCall> {
        self.state.lock().log.clone()
    }

    /// Calls logged after the first `from` ones.
    pub fn call_log_since(&self, from: usize) -> Vec<BridgeCall> {
        self.state.lock().log.iter().skip(from).cloned().collect()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().log.len()
    }

    pub fn stats(&self) -> SimStats {
        self.state.lock().stats
    }

    fn enter(&self, unit: &UnitId) -> ActiveGuard<'_> {
        let owned = self.active.lock().insert(unit.clone());
        if !owned {
            self.state.lock().stats.reentrancy_violations += 1;
            tracing::error!(%unit, "concurrent bridge calls on one unit");
        }
        ActiveGuard {
            cloud: self,
            unit: unit.clone(),
            owned,
        }
    }

    fn sleep(&self, sim_ms: u64) {
        let d = self.state.lock().latency.realtime(sim_ms);
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }

    fn check_admitted(unit: &MonitoringUnit, changes: &ChangeSet) -> Result<(), BridgeError> {
        for c in changes.to_add.values().chain(changes.to_update.values()) {
            let m = &c.probe.metadata;
            if !m.supported_strategies.contains(&unit.strategy)
                || !m.supported_env_types.contains(&unit.target.env_type)
            {
                return Err(BridgeError::Unsupported(format!(
                    "probe `{}` cannot run on {:?} under {}",
                    c.probe.id, unit.target.env_type, unit.strategy
                )));
            }
        }
        Ok(())
    }

    fn apply(&self, unit: &MonitoringUnit, changes: &ChangeSet) -> Result<(BridgeResult, u64), BridgeError> {
        let mut st = self.state.lock();
        let st = &mut *st;
        let call = st.next_call(&unit.id);
        st.stats.do_changes_calls += 1;
        if st.faults.fire(FaultPhase::Transport, &unit.id, None) {
            st.stats.transport_failures += 1;
            st.push_log(&unit.id, CallOp::Transport, 0);
            return Err(BridgeError::Transport(format!("{} unreachable", self.platform)));
        }
        Self::check_admitted(unit, changes)?;
        if !st.instances.contains_key(&unit.id) {
            let inst = st.new_instance(&unit.id, unit.strategy);
            st.instances.insert(unit.id.clone(), inst);
        }
        if unit.strategy == UnitStrategy::SingleProbe {
            let inst = &st.instances[&unit.id];
            let after: BTreeSet<&ProbeId> = inst
                .processes
                .keys()
                .filter(|p| !changes.to_drop.contains_key(*p))
                .chain(changes.to_add.keys())
                .collect();
            if after.len() > 1 {
                return Err(BridgeError::Unsupported(format!(
                    "single-probe unit {} would host {} probes",
                    unit.id,
                    after.len()
                )));
            }
        }

        let ordered = changes
            .to_drop
            .values()
            .map(|c| (ChangeKind::Drop, c))
            .chain(changes.to_update.values().map(|c| (ChangeKind::Update, c)))
            .chain(changes.to_add.values().map(|c| (ChangeKind::Add, c)));
        let mut result = BridgeResult::empty();
        let mut records = Vec::new();
        let mut sim_ms = 0;
        for (nth, (kind, change)) in ordered.enumerate() {
            let nth = nth as u32;
            match kind {
                ChangeKind::Add => st.stats.adds += 1,
                ChangeKind::Update => st.stats.updates += 1,
                ChangeKind::Drop => st.stats.drops += 1,
            }
            let probe = &change.probe;
            let who = Some((&probe.id, probe.artifact_id.as_str()));
            sim_ms += st.latency.sample(&unit.id, call, Phase::Prepare, nth);
            let outcome = if st.faults.fire(FaultPhase::Prepare, &unit.id, who) {
                st.stats.soft_errors += 1;
                result.mark_failed(&probe.id, &change.entries);
                ChangeOutcome::SoftError
            } else {
                sim_ms += st.latency.sample(&unit.id, call, Phase::Apply, nth);
                let hard = st.faults.fire(FaultPhase::Apply, &unit.id, who);
                let inst = st.instances.get_mut(&unit.id).expect("instance exists");
                match (kind, hard) {
                    (ChangeKind::Drop, false) => {
                        inst.processes.remove(&probe.id);
                    }
                    (ChangeKind::Drop, true) => {
                        if let Some(p) = inst.processes.get_mut(&probe.id) {
                            p.broken = true;
                        }
                    }
                    (_, broken) => {
                        inst.processes
                            .insert(probe.id.clone(), Process::from_change(change, broken));
                    }
                }
                if hard {
                    st.stats.hard_errors += 1;
                    result.mark_broken(&probe.id, &change.entries);
                    ChangeOutcome::HardError
                } else {
                    result.mark_stable(&probe.id);
                    ChangeOutcome::Applied
                }
            };
            records.push(ChangeRecord {
                kind,
                probe: probe.id.clone(),
                artifact_id: probe.artifact_id.clone(),
                entries: change.entries.iter().map(|pc| pc.key()).collect(),
                outcome,
            });
        }
        st.push_log(&unit.id, CallOp::DoChanges { changes: records }, sim_ms);
        Ok((result, sim_ms))
    }
}

impl BridgePlugin for SimulatedCloud {
    fn descriptor(&self) -> PluginDescriptor {
        PluginDescriptor {
            platform: self.platform.clone(),
            supported_strategies: [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe].into(),
            supported_env_types: [EnvType::AccessibleVm, EnvType::InaccessibleVm, EnvType::Container].into(),
        }
    }

    fn do_changes(&self, unit: &MonitoringUnit, changes: &ChangeSet) -> Result<BridgeResult, BridgeError> {
        let _guard = self.enter(&unit.id);
        let (result, sim_ms) = self.apply(unit, changes)?;
        self.sleep(sim_ms);
        Ok(result)
    }

    fn clean_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        let _guard = self.enter(&unit.id);
        let sim_ms = {
            let mut st = self.state.lock();
            let call = st.next_call(&unit.id);
            let sim_ms = st.latency.sample(&unit.id, call, Phase::Clean, 0);
            if st.faults.fire(FaultPhase::Clean, &unit.id, None) {
                st.stats.clean_failures += 1;
                st.push_log(&unit.id, CallOp::Clean { ok: false }, sim_ms);
                return Err(BridgeError::CleanFailed {
                    unit: unit.id.clone(),
                    reason: "injected clean fault".into(),
                });
            }
            st.stats.cleans += 1;
            let fresh = match (unit.strategy, st.instances.get(&unit.id)) {
                // Containers are replaced, never repaired.
                (UnitStrategy::SingleProbe, _) | (_, None) => st.new_instance(&unit.id, unit.strategy),
                (UnitStrategy::MultiProbe, Some(inst)) => Instance {
                    processes: BTreeMap::new(),
                    ..inst.clone()
                },
            };
            st.instances.insert(unit.id.clone(), fresh);
            st.push_log(&unit.id, CallOp::Clean { ok: true }, sim_ms);
            sim_ms
        };
        self.sleep(sim_ms);
        Ok(())
    }

    fn dismiss_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        let _guard = self.enter(&unit.id);
        let sim_ms = {
            let mut st = self.state.lock();
            let call = st.next_call(&unit.id);
            let sim_ms = st.latency.sample(&unit.id, call, Phase::Dismiss, 0);
            // Probes are stopped before the instance goes away.
            let stopped: Vec<ProbeId> = st
                .instances
                .get(&unit.id)
                .map(|i| i.processes.keys().cloned().collect())
                .unwrap_or_default();
            st.push_log(&unit.id, CallOp::Dismiss { stopped }, sim_ms);
            if st.instances.remove(&unit.id).is_some() {
                st.stats.dismissals += 1;
            }
            sim_ms
        };
        self.sleep(sim_ms);
        Ok(())
    }

    fn list_targets(&self) -> Result<Vec<Target>, BridgeError> {
        Ok(self.state.lock().targets.values().cloned().collect())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, BridgeError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| BridgeError::Seed(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| BridgeError::Seed(format!("{}: {e}", path.display())))
}
