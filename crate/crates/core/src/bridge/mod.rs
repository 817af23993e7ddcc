//! Cloud bridge: actuates change sets on concrete platforms through
//! plug-ins and reports per-configuration soft and hard errors.

pub mod fault;
pub mod latency;
#[cfg(feature = "local-exec")]
pub mod local_exec;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::BridgeError;
use crate::model::{BridgeResult, ChangeSet, EnvType, MonitoringUnit, Target, UnitStrategy};

pub use fault::{FaultEffect, FaultMatch, FaultPhase, FaultRule};
pub use latency::{Delay, LatencyModel, Phase, Profile};
pub use sim::SimulatedCloud;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginDescriptor {
    pub platform: String,
    #[serde(rename = "supportedMUStrategies")]
    pub supported_strategies: BTreeSet<UnitStrategy>,
    #[serde(rename = "supportedEnvTypes")]
    pub supported_env_types: BTreeSet<EnvType>,
}

/// One hosting platform.
///
/// Implementations must accept concurrent calls for different units and
/// report every configuration of a failed probe change in the matching
/// error set of the result.
pub trait BridgePlugin: Send + Sync + Debug {
    fn descriptor(&self) -> PluginDescriptor;

    /// Applies all changes of `unit` at once. `Err` means nothing is known
    /// about the outcome (e.g. the platform was unreachable).
    fn do_changes(&self, unit: &MonitoringUnit, changes: &ChangeSet) -> Result<BridgeResult, BridgeError>;

    /// Brings a dirty unit back to an empty, known state.
    fn clean_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError>;

    /// Releases every resource of the unit. Idempotent.
    fn dismiss_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError>;

    fn list_targets(&self) -> Result<Vec<Target>, BridgeError>;
}

/// Registry of plug-ins keyed by platform id. Units are routed by their
/// `host` field.
#[derive(Debug, Default)]
pub struct CloudBridge {
    plugins: RwLock<BTreeMap<String, Arc<dyn BridgePlugin>>>,
    simulated: RwLock<Option<Arc<SimulatedCloud>>>,
}

impl CloudBridge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_plugin(&self, plugin: Arc<dyn BridgePlugin>) -> Result<(), BridgeError> {
        let platform = plugin.descriptor().platform;
        let mut plugins = self.plugins.write();
        if plugins.contains_key(&platform) {
            return Err(BridgeError::DuplicatePlatform(platform));
        }
        plugins.insert(platform, plugin);
        Ok(())
    }

    /// Registers the simulated plug-in and keeps a handle for the admin
    /// operations (faults, latency, reload).
    pub fn register_simulated(&self, sim: Arc<SimulatedCloud>) -> Result<(), BridgeError> {
        self.register_plugin(sim.clone())?;
        *self.simulated.write() = Some(sim);
        Ok(())
    }

    pub fn simulated(&self) -> Option<Arc<SimulatedCloud>> {
        self.simulated.read().clone()
    }

    pub fn platforms(&self) -> Vec<PluginDescriptor> {
        self.plugins.read().values().map(|p| p.descriptor()).collect()
    }

    fn plugin(&self, platform: &str) -> Result<Arc<dyn BridgePlugin>, BridgeError> {
        self.plugins
            .read()
            .get(platform)
            .cloned()
            .ok_or_else(|| BridgeError::UnknownPlatform(platform.to_owned()))
    }

    pub fn do_changes(&self, unit: &MonitoringUnit, changes: &ChangeSet) -> Result<BridgeResult, BridgeError> {
        if changes.is_empty() {
            return Ok(BridgeResult::empty());
        }
        self.plugin(&unit.host)?.do_changes(unit, changes)
    }

    pub fn clean_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        self.plugin(&unit.host)?.clean_unit(unit)
    }

    pub fn dismiss_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        self.plugin(&unit.host)?.dismiss_unit(unit)
    }

    pub fn list_targets(&self, platform: &str) -> Result<Vec<Target>, BridgeError> {
        self.plugin(platform)?.list_targets()
    }

    /// Inventory of every plug-in, paired with the platform hosting it.
    pub fn all_targets(&self) -> Result<Vec<(String, Target)>, BridgeError> {
        let plugins: Vec<(String, Arc<dyn BridgePlugin>)> = self
            .plugins
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut out = Vec::new();
        for (platform, plugin) in plugins {
            out.extend(plugin.list_targets()?.into_iter().map(|t| (platform.clone(), t)));
        }
        Ok(out)
    }
}
