//! Executes scenario steps against an in-process control plane.
//!
//! Each tick runs one claim-processing pass followed by one pass of every
//! unit controller replica, the replicas in parallel threads. In simulated
//! clock mode the tick duration is derived from the latency model: claim
//! work costs gateway round trips, each reconciled unit costs round trips
//! plus the simulated duration of its bridge calls, and units are spread
//! over the replicas longest job first.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use maas_core::api::{ApiConfig, ApiService, ClaimDoc, RequestDoc, DEFAULT_DATA_OUTPUT};
use maas_core::bridge::sim::{BridgeCall, CallOp, ChangeKind};
use maas_core::bridge::{CloudBridge, LatencyModel, Phase, Profile, SimulatedCloud};
use maas_core::catalog::ProbeCatalog;
use maas_core::claim_controller::{ClaimController, ClaimReport};
use maas_core::clock::{Clock, ManualClock, SystemClock};
use maas_core::events::EventBus;
use maas_core::model::{
    probes_of, ClaimId, ConfigKey, EnvType, Indicator, MonitoringUnit, Operator, Probe, ProbeId, ProbeMetadata,
    TargetKey, UnitConfiguration, UnitStrategy,
};
use maas_core::store::{ResetScope, StateStore, StoreConfig};
use maas_core::unit_controller::{ReconcileAction, ReconcileReport, UnitController};

use crate::report::{Measure, RunReport, ScenarioReport};
use crate::script::{CountSince, DeploysSince, Expect, ScenarioScript, StatsExpect, Step, UnitExpect};
use crate::HarnessError;

/// Platform id of the simulated cloud.
pub const PLATFORM: &str = "sim";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    /// Time advances by the modelled duration of each tick.
    #[default]
    Sim,
    /// Bridge calls sleep for their scaled simulated duration and stages
    /// are timed with the wall clock.
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(ClockMode::Sim),
            "wall" => Ok(ClockMode::Wall),
            other => Err(format!("unknown clock mode `{other}` (sim|wall)")),
        }
    }
}

/// Command-line overrides of the script settings.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub strategy: Option<UnitStrategy>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub repetitions: Option<usize>,
    pub clock: ClockMode,
    /// Real seconds slept per simulated second in wall-clock mode.
    pub time_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            strategy: None,
            profile: None,
            seed: None,
            replicas: None,
            repetitions: None,
            clock: ClockMode::Sim,
            time_scale: 0.001,
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub strategy: UnitStrategy,
    pub profile: Profile,
    pub seed: u64,
    pub retry_threshold: u32,
    pub replicas: usize,
    pub clock: ClockMode,
    pub time_scale: f64,
}

impl Settings {
    pub fn new(strategy: UnitStrategy, profile: Profile, seed: u64) -> Self {
        Self {
            strategy,
            profile,
            seed,
            retry_threshold: maas_core::store::DEFAULT_RETRY_THRESHOLD,
            replicas: 1,
            clock: ClockMode::Sim,
            time_scale: 0.001,
        }
    }

    fn resolve(script: &ScenarioScript, opts: &RunOptions) -> Self {
        Self {
            strategy: opts.strategy.unwrap_or(script.strategy),
            profile: opts.profile.unwrap_or(script.profile),
            seed: opts.seed.unwrap_or(script.seed),
            retry_threshold: script.retry_threshold,
            replicas: opts.replicas.unwrap_or(script.replicas).max(1),
            clock: opts.clock,
            time_scale: opts.time_scale,
        }
    }
}

/// Runs every sweep value and repetition of `script`. Repetition `r` uses
/// seed `seed + r`.
pub fn run_scenario(script: &ScenarioScript, opts: &RunOptions) -> Result<ScenarioReport, HarnessError> {
    let settings = Settings::resolve(script, opts);
    let repetitions = opts.repetitions.unwrap_or(script.repetitions).max(1);
    let mut runs = Vec::new();
    for value in script.sweep_values() {
        let steps = script.steps_for(value)?;
        for rep in 0..repetitions {
            let mut runner = Runner::new(Settings {
                seed: settings.seed + rep as u64,
                ..settings.clone()
            });
            runner.execute(&steps)?;
            runs.push(runner.finish(script.run_name(value), value, rep));
        }
    }
    Ok(ScenarioReport {
        scenario: script.name.clone(),
        profile: settings.profile,
        strategy: settings.strategy,
        seed: settings.seed,
        replicas: settings.replicas,
        runs,
    })
}

/// Position in the run recorded at a submission.
#[derive(Debug, Clone)]
struct Mark {
    claim: ClaimId,
    operator: Operator,
    log_pos: usize,
    reconcile_pos: usize,
}

/// What one tick did.
#[derive(Debug, Clone, Default)]
pub struct TickSummary {
    pub claims: Vec<ClaimReport>,
    pub reconciles: Vec<ReconcileReport>,
    pub calls: Vec<BridgeCall>,
    /// Run-clock duration of the tick in milliseconds.
    pub duration_ms: f64,
}

impl TickSummary {
    pub fn is_idle(&self) -> bool {
        self.claims.is_empty() && self.reconciles.is_empty()
    }
}

pub struct Runner {
    settings: Settings,
    api: Arc<ApiService>,
    sim: Arc<SimulatedCloud>,
    clock: ManualClock,
    latency: LatencyModel,
    claims: ClaimController,
    units: Vec<UnitController>,
    marks: BTreeMap<String, Mark>,
    measures: Vec<Measure>,
    open: Vec<usize>,
    reconciles: Vec<ReconcileReport>,
    ticks: u64,
    submissions: usize,
    assertions: usize,
    elapsed_ms: f64,
}

impl Runner {
    pub fn new(settings: Settings) -> Self {
        let manual = ManualClock::new(0);
        let clock: Arc<dyn Clock> = match settings.clock {
            ClockMode::Sim => Arc::new(manual.clone()),
            ClockMode::Wall => Arc::new(SystemClock),
        };
        let store = StateStore::with_config(
            StoreConfig {
                retry_threshold: settings.retry_threshold,
                ..Default::default()
            },
            clock.clone(),
        );
        let sim = Arc::new(SimulatedCloud::new(PLATFORM));
        let mut latency = LatencyModel::profile(settings.profile, settings.seed);
        if settings.clock == ClockMode::Wall {
            latency.realtime_scale = settings.time_scale;
        }
        sim.set_latency_model(latency.clone());
        let bridge = Arc::new(CloudBridge::new());
        bridge
            .register_simulated(sim.clone())
            .expect("fresh registry accepts the simulated plug-in");
        let api = Arc::new(ApiService::new(
            store,
            Arc::new(ProbeCatalog::in_memory()),
            bridge,
            Arc::new(EventBus::new(clock)),
            ApiConfig {
                strategy: settings.strategy,
                // Scripts add targets between submissions.
                target_cache_ttl: Duration::ZERO,
                ..Default::default()
            },
        ));
        let units = (0..settings.replicas)
            .map(|i| UnitController::new(api.clone(), format!("uc-{i}")))
            .collect();
        Self {
            claims: ClaimController::new(api.clone()),
            units,
            api,
            sim,
            clock: manual,
            latency,
            settings,
            marks: BTreeMap::new(),
            measures: Vec::new(),
            open: Vec::new(),
            reconciles: Vec::new(),
            ticks: 0,
            submissions: 0,
            assertions: 0,
            elapsed_ms: 0.0,
        }
    }

    pub fn api(&self) -> &Arc<ApiService> {
        &self.api
    }

    pub fn sim(&self) -> &Arc<SimulatedCloud> {
        &self.sim
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    /// Run-clock time since the start of the run, in milliseconds.
    pub fn elapsed_ms(&self) -> f64 {
        self.elapsed_ms
    }

    pub fn measures(&self) -> &[Measure] {
        &self.measures
    }

    /// Every reconciliation so far, in tick order.
    pub fn reconciles(&self) -> &[ReconcileReport] {
        &self.reconciles
    }

    pub fn execute(&mut self, steps: &[Step]) -> Result<(), HarnessError> {
        for (i, step) in steps.iter().enumerate() {
            self.step(i + 1, step)?;
        }
        Ok(())
    }

    fn step(&mut self, n: usize, step: &Step) -> Result<(), HarnessError> {
        let fail = |reason: String| HarnessError::Step {
            step: n,
            op: op_name(step).to_owned(),
            reason,
        };
        match step {
            Step::SeedTargets { targets } => {
                for t in targets {
                    self.sim.add_target(t.clone());
                }
            }
            Step::RegisterProbes { probes } => {
                for p in probes {
                    self.api.upload_probe(p.clone()).map_err(|e| fail(e.to_string()))?;
                }
            }
            Step::GenerateProbes {
                prefix,
                indicator_prefix,
                count,
            } => {
                for i in 0..*count {
                    let p =
                        generated_probe(&format!("{prefix}{i}"), &format!("{indicator_prefix}_{i}")).map_err(fail)?;
                    self.api.upload_probe(p).map_err(|e| fail(e.to_string()))?;
                }
            }
            Step::Submit {
                label,
                operator,
                target,
                indicators,
                generated,
            } => {
                let mut names = indicators.clone();
                if let Some(g) = generated {
                    names.extend((0..g.count).map(|i| format!("{}_{i}", g.prefix)));
                }
                self.submit(label.as_deref(), operator, target, &names).map_err(fail)?;
            }
            Step::SubmitEach {
                label_prefix,
                operator_prefix,
                count,
                target,
                indicators,
                settle_each,
            } => {
                for i in 0..*count {
                    let label = format!("{label_prefix}-{i}");
                    self.submit(Some(&label), &format!("{operator_prefix}{i}"), target, indicators)
                        .map_err(fail)?;
                    if *settle_each {
                        self.settle(DEFAULT_SETTLE_TICKS).map_err(fail)?;
                    }
                }
                if !settle_each {
                    self.settle(DEFAULT_SETTLE_TICKS).map_err(fail)?;
                }
            }
            Step::InjectFault { rule } => {
                self.api.inject_fault(rule.clone()).map_err(|e| fail(e.to_string()))?;
            }
            Step::ClearFaults => self.sim.clear_faults(),
            Step::ResetErrors { probe } => {
                let scopes = match probe {
                    None => vec![ResetScope::All],
                    Some(p) => {
                        let hosting = self.units_hosting(p);
                        if hosting.is_empty() {
                            return Err(fail(format!("no unit hosts probe {p}")));
                        }
                        hosting.into_iter().map(|u| ResetScope::Unit(u.id)).collect()
                    }
                };
                for scope in scopes {
                    self.api.reset_error_tables(&scope).map_err(|e| fail(e.to_string()))?;
                }
            }
            Step::Advance { ticks } => {
                for _ in 0..*ticks {
                    self.tick();
                }
            }
            Step::Settle { max_ticks } => {
                self.settle(*max_ticks).map_err(fail)?;
            }
            Step::Assert { label, expect } => {
                self.assertions += 1;
                let problems = self.check(expect);
                if !problems.is_empty() {
                    return Err(HarnessError::Assertion {
                        step: n,
                        label: label.clone().unwrap_or_else(|| format!("#{}", self.assertions)),
                        diff: problems.join("\n"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Submits one single-claim request and opens a measure for it.
    pub fn submit(
        &mut self,
        label: Option<&str>,
        operator: &str,
        target: &str,
        indicators: &[String],
    ) -> Result<ClaimId, String> {
        self.submissions += 1;
        let label = label.map_or_else(|| format!("submit-{}", self.submissions), str::to_owned);
        if self.marks.contains_key(&label) {
            return Err(format!("duplicate label `{label}`"));
        }
        let indicators = indicators
            .iter()
            .map(|n| Indicator::new(n).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let op = Operator::new(operator);
        let doc = RequestDoc {
            operator: op.clone(),
            claims: vec![ClaimDoc {
                indicators,
                target: self.target_key(target)?,
            }],
        };
        let resp = self
            .api
            .submit_monitoring_request(&op, &doc)
            .map_err(|e| e.to_string())?;
        let claim = &resp.claims[0];
        let id = match (&claim.claim_id, &claim.error) {
            (Some(id), _) => id.clone(),
            (None, e) => return Err(e.clone().unwrap_or_else(|| "claim rejected".into())),
        };
        self.marks.insert(
            label.clone(),
            Mark {
                claim: id.clone(),
                operator: op,
                log_pos: self.sim.call_count(),
                reconcile_pos: self.reconciles.len(),
            },
        );
        self.open.push(self.measures.len());
        self.measures.push(Measure {
            label,
            ..Default::default()
        });
        Ok(id)
    }

    /// One claim pass and one pass of every unit controller.
    pub fn tick(&mut self) -> TickSummary {
        let log_pos = self.sim.call_count();
        let started = Instant::now();
        let claims = self.claims.process_pending();
        let claim_wall = started.elapsed();
        let started = Instant::now();
        let mut reconciles = self.unit_pass();
        let unit_wall = started.elapsed();
        reconciles.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        let calls = self.sim.call_log_since(log_pos);

        let api_ms = self.latency.mean_ms(Phase::ApiCall);
        let claim_ms: f64 = claims
            .iter()
            .map(|r| api_ms * f64::from(3 + r.probe_configs + r.desired_writes))
            .sum();
        let mut overhead: BTreeMap<&str, f64> = BTreeMap::new();
        let mut deploy: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &reconciles {
            *overhead.entry(r.unit_id.as_str()).or_default() += api_ms * f64::from(5 + r.ledger_writes);
        }
        for c in &calls {
            *deploy.entry(c.unit.as_str()).or_default() += c.sim_ms as f64;
        }
        let listing = if reconciles.is_empty() { 0.0 } else { api_ms };
        let jobs: Vec<f64> = overhead
            .keys()
            .chain(deploy.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|u| overhead.get(u).unwrap_or(&0.0) + deploy.get(u).unwrap_or(&0.0))
            .collect();
        let overhead_total = listing + overhead.values().sum::<f64>();
        let deploy_total: f64 = deploy.values().sum();

        let (claim_ms, unit_ms) = match self.settings.clock {
            ClockMode::Sim => (claim_ms, listing + lpt_makespan(&jobs, self.units.len())),
            ClockMode::Wall => (ms(claim_wall), ms(unit_wall)),
        };
        let deploy_share = if deploy_total + overhead_total > 0.0 {
            unit_ms * deploy_total / (deploy_total + overhead_total)
        } else {
            0.0
        };
        let duration_ms = claim_ms + unit_ms;
        if self.settings.clock == ClockMode::Sim {
            self.clock.advance(Duration::from_millis(duration_ms.ceil() as u64));
        }
        self.elapsed_ms += duration_ms;

        let bridge_ops: u64 = calls.iter().map(op_count).sum();
        let deploys: u64 = calls.iter().map(deploy_count).sum();
        let zero_ops = reconciles.iter().filter(|r| is_zero_op(r)).count() as u64;
        for &i in &self.open {
            let m = &mut self.measures[i];
            m.claim_processing += claim_ms;
            m.unit_processing += unit_ms - deploy_share;
            m.probes_deployment += deploy_share;
            m.total += duration_ms;
            m.bridge_op_count += bridge_ops;
            m.deploys += deploys;
            m.zero_op_reconciles += zero_ops;
            m.reconciles += reconciles.len() as u64;
        }
        self.reconciles.extend(reconciles.iter().cloned());
        self.ticks += 1;
        TickSummary {
            claims,
            reconciles,
            calls,
            duration_ms,
        }
    }

    fn unit_pass(&self) -> Vec<ReconcileReport> {
        if let [only] = self.units.as_slice() {
            return only.tick();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = self.units.iter().map(|u| s.spawn(move || u.tick())).collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("controller replica panicked"))
                .collect()
        })
    }

    /// Ticks until one does nothing. Returns the number of busy ticks and
    /// closes the open measures.
    pub fn settle(&mut self, max_ticks: u32) -> Result<u32, String> {
        for busy in 0..=max_ticks {
            if self.tick().is_idle() {
                self.open.clear();
                return Ok(busy);
            }
        }
        Err(format!("still busy after {max_ticks} ticks"))
    }

    pub fn finish(mut self, name: String, sweep_value: Option<i64>, repetition: usize) -> RunReport {
        self.open.clear();
        RunReport {
            name,
            sweep_value,
            repetition,
            seed: self.settings.seed,
            ticks: self.ticks,
            assertions: self.assertions,
            measures: self.measures,
            stats: self.sim.stats(),
            store_metrics: self.api.store_metrics(),
            final_units: self.api.list_units(),
        }
    }

    /// `platform/id`, or a bare id known to exactly one platform.
    pub fn target_key(&self, s: &str) -> Result<TargetKey, String> {
        if let Some((platform, id)) = s.split_once('/') {
            return Ok(TargetKey::new(platform, id));
        }
        let found: Vec<TargetKey> = self
            .api
            .list_targets()
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|t| t.platform_id == s)
            .map(|t| t.key())
            .collect();
        match found.as_slice() {
            [one] => Ok(one.clone()),
            [] => Err(format!("unknown target `{s}`")),
            _ => Err(format!("target id `{s}` exists on several platforms")),
        }
    }

    fn units_hosting(&self, probe: &ProbeId) -> Vec<MonitoringUnit> {
        self.api
            .list_units()
            .into_iter()
            .filter(|u| probes_of(&u.desired_conf).contains(probe) || probes_of(&u.current_conf).contains(probe))
            .collect()
    }

    fn mark(&self, label: &str) -> Result<&Mark, String> {
        self.marks
            .get(label)
            .ok_or_else(|| format!("no submission labelled `{label}`"))
    }

    /// Every mismatch between `expect` and the current state, one line
    /// each as `what: expected …, got …`.
    pub fn check(&self, expect: &Expect) -> Vec<String> {
        let mut out = Vec::new();
        let units = self.api.list_units();
        if let Some(n) = expect.unit_count {
            if units.len() != n {
                out.push(format!("unitCount: expected {n}, got {}", units.len()));
            }
        }
        for (i, ue) in expect.units.iter().enumerate() {
            self.check_unit(i, ue, &units, &mut out);
        }
        for op in &expect.absent_operators {
            let op = Operator::new(op.as_str());
            for u in &units {
                if u.desired_conf.operators().contains(&op) || u.current_conf.operators().contains(&op) {
                    out.push(format!("absentOperators: {op} still has entries on {}", u.id));
                }
            }
        }
        for (op, targets) in &expect.operator_indicators {
            let op = Operator::new(op.as_str());
            for (t, want) in targets {
                match self.target_key(t) {
                    Err(e) => out.push(format!("operatorIndicators.{op}.{t}: {e}")),
                    Ok(key) => {
                        let got: BTreeSet<String> = units
                            .iter()
                            .filter(|u| u.target.key() == key)
                            .flat_map(|u| u.desired_conf.iter())
                            .filter(|pc| pc.operator == op)
                            .flat_map(|pc| pc.indicators.iter().map(|i| i.as_str().to_owned()))
                            .collect();
                        let want: BTreeSet<String> = want.iter().cloned().collect();
                        if got != want {
                            out.push(format!("operatorIndicators.{op}.{t}: expected {want:?}, got {got:?}"));
                        }
                    }
                }
            }
        }
        for (t, want) in &expect.running_probes {
            match self.target_key(t) {
                Err(e) => out.push(format!("runningProbes.{t}: {e}")),
                Ok(key) => {
                    let got: BTreeSet<ProbeId> = units
                        .iter()
                        .filter(|u| u.target.key() == key)
                        .flat_map(|u| self.running(u))
                        .collect();
                    let want: BTreeSet<ProbeId> = want.iter().cloned().collect();
                    if got != want {
                        out.push(format!(
                            "runningProbes.{t}: expected {}, got {}",
                            list(&want),
                            list(&got)
                        ));
                    }
                }
            }
        }
        if let Some(want) = &expect.blacklist {
            let got: BTreeSet<ConfigKey> = units
                .iter()
                .filter_map(|u| self.api.get_unit(&u.id).ok())
                .flat_map(|v| v.blacklist)
                .collect();
            let want = normalize(want);
            if got != want {
                out.push(format!("blacklist: expected {}, got {}", list(&want), list(&got)));
            }
        }
        if let Some(s) = &expect.stats {
            self.check_stats(s, &mut out);
        }
        for (label, want) in &expect.claims {
            match self.mark(label) {
                Err(e) => out.push(format!("claims.{label}: {e}")),
                Ok(m) => match self.api.get_claim_status(&m.operator, &m.claim) {
                    Ok(v) if v.status == *want => {}
                    Ok(v) => out.push(format!("claims.{label}: expected {want:?}, got {:?}", v.status)),
                    Err(e) => out.push(format!("claims.{label}: {e}")),
                },
            }
        }
        if let Some(want) = expect.converged {
            let got = self.is_converged();
            if got != want {
                out.push(format!("converged: expected {want}, got {got}"));
            }
        }
        if let Some(d) = &expect.deploys_since {
            self.check_deploys(d, &mut out);
        }
        if let Some(CountSince { label, count }) = &expect.zero_op_reconciles_since {
            match self.mark(label) {
                Err(e) => out.push(format!("zeroOpReconcilesSince: {e}")),
                Ok(m) => {
                    let got = self.reconciles[m.reconcile_pos..]
                        .iter()
                        .filter(|r| is_zero_op(r))
                        .count() as u64;
                    if got != *count {
                        out.push(format!("zeroOpReconcilesSince.{label}: expected {count}, got {got}"));
                    }
                }
            }
        }
        if let Some(CountSince { label, count }) = &expect.bridge_calls_since {
            match self.mark(label) {
                Err(e) => out.push(format!("bridgeCallsSince: {e}")),
                Ok(m) => {
                    let got = self.sim.call_log_since(m.log_pos).len() as u64;
                    if got != *count {
                        out.push(format!("bridgeCallsSince.{label}: expected {count}, got {got}"));
                    }
                }
            }
        }
        out
    }

    /// No claim waits and every unit runs its effective desired
    /// configuration with nothing left to clean or dismiss.
    pub fn is_converged(&self) -> bool {
        self.api.pending_claims().is_empty() && self.api.list_divergent_units().is_empty()
    }

    fn running(&self, u: &MonitoringUnit) -> BTreeSet<ProbeId> {
        self.sim
            .instance(&u.id)
            .map(|i| i.processes.keys().cloned().collect())
            .unwrap_or_default()
    }

    fn check_unit(&self, i: usize, ue: &UnitExpect, units: &[MonitoringUnit], out: &mut Vec<String>) {
        let mut what = format!("units[{i}]");
        if let Some(p) = &ue.probe {
            what = format!("{what}(probe {p})");
        }
        let key = match ue.target.as_deref().map(|t| self.target_key(t)).transpose() {
            Ok(k) => k,
            Err(e) => return out.push(format!("{what}: {e}")),
        };
        let selected: Vec<&MonitoringUnit> = units
            .iter()
            .filter(|u| key.as_ref().is_none_or(|k| &u.target.key() == k))
            .filter(|u| {
                ue.probe
                    .as_ref()
                    .is_none_or(|p| probes_of(&u.desired_conf).contains(p) || probes_of(&u.current_conf).contains(p))
            })
            .collect();
        if !ue.present {
            for u in selected {
                out.push(format!(
                    "{what}: expected no unit, got {} desired {} current {}",
                    u.id,
                    keys_text(&u.desired_conf),
                    keys_text(&u.current_conf)
                ));
            }
            return;
        }
        let u = match selected.as_slice() {
            [u] => *u,
            [] => return out.push(format!("{what}: expected a unit, got none")),
            many => {
                let ids: Vec<&str> = many.iter().map(|u| u.id.as_str()).collect();
                return out.push(format!(
                    "{what}: selector matches {} units: {}",
                    ids.len(),
                    ids.join(", ")
                ));
            }
        };
        let what = format!("{what} {}", u.id);
        let compare = |field: &str, want: &Option<Vec<ConfigKey>>, conf: &UnitConfiguration, out: &mut Vec<String>| {
            if let Some(want) = want {
                let want = normalize(want);
                let got: BTreeSet<ConfigKey> = conf.iter().map(|pc| pc.key()).collect();
                if got != want {
                    out.push(format!("{what} {field}: expected {}, got {}", list(&want), list(&got)));
                }
            }
        };
        compare("desired", &ue.desired, &u.desired_conf, out);
        compare("current", &ue.current, &u.current_conf, out);
        if let Some(want) = ue.state {
            if u.state != want {
                out.push(format!("{what} state: expected {want:?}, got {:?}", u.state));
            }
        }
        if let Some(want) = &ue.running {
            let want: BTreeSet<ProbeId> = want.iter().cloned().collect();
            let got = self.running(u);
            if got != want {
                out.push(format!("{what} running: expected {}, got {}", list(&want), list(&got)));
            }
        }
    }

    fn check_stats(&self, want: &StatsExpect, out: &mut Vec<String>) {
        let got = self.sim.stats();
        let pairs = [
            ("doChangesCalls", want.do_changes_calls, got.do_changes_calls),
            ("adds", want.adds, got.adds),
            ("updates", want.updates, got.updates),
            ("drops", want.drops, got.drops),
            ("softErrors", want.soft_errors, got.soft_errors),
            ("hardErrors", want.hard_errors, got.hard_errors),
            ("cleans", want.cleans, got.cleans),
            ("dismissals", want.dismissals, got.dismissals),
            (
                "reentrancyViolations",
                want.reentrancy_violations,
                got.reentrancy_violations,
            ),
        ];
        for (name, want, got) in pairs {
            if let Some(want) = want {
                if want != got {
                    out.push(format!("stats.{name}: expected {want}, got {got}"));
                }
            }
        }
    }

    fn check_deploys(&self, d: &DeploysSince, out: &mut Vec<String>) {
        let m = match self.mark(&d.label) {
            Ok(m) => m,
            Err(e) => return out.push(format!("deploysSince: {e}")),
        };
        let calls = self.sim.call_log_since(m.log_pos);
        let mut per_probe: BTreeMap<&ProbeId, u64> = BTreeMap::new();
        for c in calls.iter().flat_map(|c| c.changes()) {
            if c.kind != ChangeKind::Drop {
                *per_probe.entry(&c.probe).or_default() += 1;
            }
        }
        let total: u64 = per_probe.values().sum();
        if let Some(want) = d.total {
            if want != total {
                out.push(format!("deploysSince.{}.total: expected {want}, got {total}", d.label));
            }
        }
        for (p, want) in &d.probes {
            let got = per_probe.get(p).copied().unwrap_or(0);
            if got != *want {
                out.push(format!("deploysSince.{}.{p}: expected {want}, got {got}", d.label));
            }
        }
    }
}

const DEFAULT_SETTLE_TICKS: u32 = 20;

fn op_name(step: &Step) -> &'static str {
    match step {
        Step::SeedTargets { .. } => "seedTargets",
        Step::RegisterProbes { .. } => "registerProbes",
        Step::GenerateProbes { .. } => "generateProbes",
        Step::Submit { .. } => "submit",
        Step::SubmitEach { .. } => "submitEach",
        Step::InjectFault { .. } => "injectFault",
        Step::ClearFaults => "clearFaults",
        Step::ResetErrors { .. } => "resetErrors",
        Step::Advance { .. } => "advance",
        Step::Settle { .. } => "settle",
        Step::Assert { .. } => "assert",
    }
}

/// A single-indicator probe deployable under every strategy and env type.
pub fn generated_probe(id: &str, indicator: &str) -> Result<Probe, String> {
    let indicator = Indicator::new(indicator).map_err(|e| e.to_string())?;
    Ok(Probe {
        id: ProbeId::new(id),
        artifact_id: format!("{id}-artifact"),
        metadata: ProbeMetadata {
            supported_indicators: [indicator].into(),
            supported_data_outputs: [DEFAULT_DATA_OUTPUT.to_owned()].into(),
            supported_strategies: [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe].into(),
            supported_env_types: [EnvType::AccessibleVm, EnvType::InaccessibleVm, EnvType::Container].into(),
        },
        artifact: serde_json::Value::Null,
        extra: Default::default(),
    })
}

/// A reconciliation that found nothing to send to the bridge.
pub fn is_zero_op(r: &ReconcileReport) -> bool {
    r.action == ReconcileAction::None && r.change_set.is_empty() && r.error.is_none() && !r.cleaned
}

fn op_count(c: &BridgeCall) -> u64 {
    match &c.op {
        CallOp::DoChanges { changes } => changes.len() as u64,
        CallOp::Clean { .. } | CallOp::Dismiss { .. } => 1,
        CallOp::Transport => 0,
    }
}

fn deploy_count(c: &BridgeCall) -> u64 {
    c.changes().iter().filter(|r| r.kind != ChangeKind::Drop).count() as u64
}

/// Longest-processing-time-first schedule length of `jobs` on `machines`.
pub fn lpt_makespan(jobs: &[f64], machines: usize) -> f64 {
    let mut sorted = jobs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut load = vec![0.0_f64; machines.max(1)];
    for j in sorted {
        let min = load
            .iter_mut()
            .min_by(|a, b| a.total_cmp(b))
            .expect("at least one machine");
        *min += j;
    }
    load.into_iter().fold(0.0, f64::max)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1_000.0
}

fn normalize(keys: &[ConfigKey]) -> BTreeSet<ConfigKey> {
    keys.iter()
        .map(|k| {
            let mut k = k.clone();
            k.indicators.sort();
            k.indicators.dedup();
            k
        })
        .collect()
}

fn list<T: std::fmt::Display>(items: &BTreeSet<T>) -> String {
    let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
    format!("{{{}}}", parts.join(", "))
}

fn keys_text(conf: &UnitConfiguration) -> String {
    list(&conf.iter().map(|pc| pc.key()).collect())
}
