//! Builders for probes, targets and configurations shared by the test
//! suites of this workspace.

use std::collections::BTreeSet;

use serde_json::Value;

use crate::model::{
    EnvType, Indicator, Operator, Probe, ProbeConfiguration, ProbeId, ProbeMetadata, Target, UnitConfiguration,
    UnitStrategy,
};

pub const DATA_OUTPUT: &str = "ELASTICSEARCH";
pub const SIM_PLATFORM: &str = "sim";

pub fn indicators(names: &[&str]) -> BTreeSet<Indicator> {
    names
        .iter()
        .map(|n| Indicator::new(n).expect("valid indicator"))
        .collect()
}

/// A probe deployable under every strategy and env type.
pub fn probe(id: &str, names: &[&str]) -> Probe {
    Probe {
        id: ProbeId::new(id),
        artifact_id: format!("{id}-artifact"),
        metadata: ProbeMetadata {
            supported_indicators: indicators(names),
            supported_data_outputs: [DATA_OUTPUT.to_owned()].into(),
            supported_strategies: [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe].into(),
            supported_env_types: [EnvType::AccessibleVm, EnvType::InaccessibleVm, EnvType::Container].into(),
        },
        artifact: Value::Null,
        extra: Default::default(),
    }
}

pub fn pc(p: &Probe, names: &[&str], op: &str) -> ProbeConfiguration {
    ProbeConfiguration::new(p.clone(), indicators(names), Operator::new(op)).expect("valid probe configuration")
}

pub fn conf(entries: impl IntoIterator<Item = ProbeConfiguration>) -> UnitConfiguration {
    UnitConfiguration::from_entries(entries).expect("no duplicate slots")
}

pub fn target(id: &str, env: EnvType) -> Target {
    Target::new(SIM_PLATFORM, id, env)
}

/// The PostgreSQL target and the four single-indicator probes of the
/// running example: network, cpu, database metrics and user sessions.
pub struct RunningExample {
    pub target: Target,
    pub p_net: Probe,
    pub p_cpu: Probe,
    pub p_db: Probe,
    pub p_session: Probe,
}

pub const NET: &str = "NETWORK_CONSUMPTION";
pub const CPU: &str = "CPU_CONSUMPTION";
pub const DB: &str = "DB_METRICS";
pub const SESSION: &str = "USER_SESSION_DATA";

impl RunningExample {
    pub fn new(env: EnvType) -> Self {
        Self {
            target: target("target-PSQL", env),
            p_net: probe("p_net", &[NET]),
            p_cpu: probe("p_cpu", &[CPU]),
            p_db: probe("p_db", &[DB]),
            p_session: probe("p_session", &[SESSION]),
        }
    }

    pub fn probes(&self) -> [&Probe; 4] {
        [&self.p_net, &self.p_cpu, &self.p_db, &self.p_session]
    }
}

/// A complete in-process control plane over a simulated cloud, driven by
/// explicit controller steps.
pub struct Rig {
    pub api: std::sync::Arc<crate::api::ApiService>,
    pub sim: std::sync::Arc<crate::bridge::SimulatedCloud>,
    pub clock: crate::clock::ManualClock,
    pub claims: crate::claim_controller::ClaimController,
    pub units: crate::unit_controller::UnitController,
}

impl Rig {
    pub fn new(strategy: UnitStrategy, probes: &[&Probe], targets: &[&Target]) -> Self {
        Self::with_threshold(strategy, probes, targets, crate::store::DEFAULT_RETRY_THRESHOLD)
    }

    pub fn with_threshold(
        strategy: UnitStrategy,
        probes: &[&Probe],
        targets: &[&Target],
        retry_threshold: u32,
    ) -> Self {
        use std::sync::Arc;

        let clock = crate::clock::ManualClock::new(0);
        let shared: Arc<dyn crate::clock::Clock> = Arc::new(clock.clone());
        let store = crate::store::StateStore::with_config(
            crate::store::StoreConfig {
                retry_threshold,
                ..Default::default()
            },
            shared.clone(),
        );
        let catalog = Arc::new(crate::catalog::ProbeCatalog::in_memory());
        for p in probes {
            catalog.register_probe((*p).clone()).expect("probe registers");
        }
        let sim = Arc::new(crate::bridge::SimulatedCloud::with_targets(
            SIM_PLATFORM,
            targets.iter().map(|t| (*t).clone()),
        ));
        let bridge = Arc::new(crate::bridge::CloudBridge::new());
        bridge.register_simulated(sim.clone()).expect("fresh registry");
        let bus = Arc::new(crate::events::EventBus::new(shared));
        let api = Arc::new(crate::api::ApiService::new(
            store,
            catalog,
            bridge,
            bus,
            crate::api::ApiConfig {
                strategy,
                data_output: DATA_OUTPUT.to_owned(),
                ..Default::default()
            },
        ));
        Self {
            claims: crate::claim_controller::ClaimController::new(api.clone()),
            units: crate::unit_controller::UnitController::new(api.clone(), "uc-0"),
            api,
            sim,
            clock,
        }
    }

    /// Submits one claim and returns its id.
    pub fn submit(&self, op: &str, target: &Target, names: &[&str]) -> crate::model::ClaimId {
        let doc = crate::api::RequestDoc {
            operator: Operator::new(op),
            claims: vec![crate::api::ClaimDoc {
                indicators: indicators(names),
                target: target.key(),
            }],
        };
        let resp = self
            .api
            .submit_monitoring_request(&Operator::new(op), &doc)
            .expect("request accepted");
        resp.claim_ids().pop().expect("claim stored")
    }

    /// Runs claim processing and unit ticks until nothing changes, at most
    /// `max_ticks` unit ticks. Returns the number of ticks that did work.
    pub fn settle(&self, max_ticks: usize) -> usize {
        self.claims.process_pending();
        let mut busy = 0;
        for _ in 0..max_ticks {
            if self.units.tick().is_empty() {
                break;
            }
            busy += 1;
            self.claims.process_pending();
        }
        busy
    }

    pub fn unit_for(&self, probe: &ProbeId) -> Option<crate::model::MonitoringUnit> {
        self.api.list_units().into_iter().find(|u| {
            crate::model::probes_of(&u.desired_conf).contains(probe)
                || crate::model::probes_of(&u.current_conf).contains(probe)
        })
    }
}
