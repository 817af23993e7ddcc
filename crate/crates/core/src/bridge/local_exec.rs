//! Plug-in that runs every probe as a stub process on the local host.
//!
//! A probe's `artifact.command` array names the program and arguments; it
//! defaults to a long `sleep`. The collected indicators are passed in the
//! `MAAS_INDICATORS` environment variable as a comma-separated list, so an
//! update restarts the process. A command that cannot be spawned is a soft
//! error; a process that exits with a failure status right after start is a
//! hard error.

use std::collections::BTreeMap;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use parking_lot::Mutex;

use super::{BridgePlugin, PluginDescriptor};
use crate::error::BridgeError;
use crate::model::{
    BridgeResult, ChangeSet, EnvType, MonitoringUnit, Probe, ProbeChange, ProbeId, ProbeState, Target, UnitId,
    UnitStrategy,
};

const DEFAULT_COMMAND: [&str; 2] = ["sleep", "86400"];

#[derive(Debug)]
pub struct LocalExec {
    platform: String,
    targets: Vec<Target>,
    /// Time a fresh process gets to fail before it counts as started.
    startup_grace: Duration,
    processes: Mutex<BTreeMap<UnitId, BTreeMap<ProbeId, Child>>>,
}

impl LocalExec {
    pub fn new(platform: impl Into<String>, targets: Vec<Target>) -> Self {
        Self {
            platform: platform.into(),
            targets,
            startup_grace: Duration::from_millis(50),
            processes: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_startup_grace(mut self, grace: Duration) -> Self {
        self.startup_grace = grace;
        self
    }

    /// OS process ids of the running probes of a unit.
    pub fn pids(&self, unit: &UnitId) -> BTreeMap<ProbeId, u32> {
        self.processes
            .lock()
            .get(unit)
            .map(|m| m.iter().map(|(p, c)| (p.clone(), c.id())).collect())
            .unwrap_or_default()
    }

    fn command(probe: &Probe) -> Vec<String> {
        probe
            .artifact
            .get("command")
            .and_then(|c| c.as_array())
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str().map(str::to_owned))
                    .collect::<Vec<_>>()
            })
            .filter(|a| !a.is_empty())
            .unwrap_or_else(|| DEFAULT_COMMAND.iter().map(|s| s.to_string()).collect())
    }

    fn spawn(&self, unit: &MonitoringUnit, change: &ProbeChange) -> Result<Child, ProbeState> {
        let argv = Self::command(&change.probe);
        let indicators: Vec<String> = change.indicators().iter().map(|i| i.as_str().to_owned()).collect();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .env("MAAS_UNIT_ID", unit.id.as_str())
            .env("MAAS_TARGET", &unit.target.platform_id)
            .env("MAAS_INDICATORS", indicators.join(","))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|_| ProbeState::Failed)?;
        std::thread::sleep(self.startup_grace);
        match child.try_wait() {
            Ok(Some(status)) if !status.success() => Err(ProbeState::Broken),
            Ok(_) => Ok(child),
            Err(_) => {
                stop(&mut child);
                Err(ProbeState::Broken)
            }
        }
    }
}

fn stop(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

impl BridgePlugin for LocalExec {
    fn descriptor(&self) -> PluginDescriptor {
        PluginDescriptor {
            platform: self.platform.clone(),
            supported_strategies: [UnitStrategy::SingleProbe, UnitStrategy::MultiProbe].into(),
            supported_env_types: [EnvType::AccessibleVm, EnvType::Container].into(),
        }
    }

    fn do_changes(&self, unit: &MonitoringUnit, changes: &ChangeSet) -> Result<BridgeResult, BridgeError> {
        let mut result = BridgeResult::empty();
        let mut procs = self.processes.lock();
        let running = procs.entry(unit.id.clone()).or_default();
        for id in changes.to_drop.keys() {
            if let Some(mut child) = running.remove(id) {
                stop(&mut child);
            }
        }
        for (id, change) in changes.to_update.iter().chain(&changes.to_add) {
            if let Some(mut old) = running.remove(id) {
                stop(&mut old);
            }
            match self.spawn(unit, change) {
                Ok(child) => {
                    running.insert(id.clone(), child);
                    result.per_probe_state.insert(id.clone(), ProbeState::Stable);
                }
                Err(state) => {
                    let errors = match state {
                        ProbeState::Failed => &mut result.soft_errors,
                        _ => &mut result.hard_errors,
                    };
                    errors.extend(change.entries.iter().cloned());
                    result.per_probe_state.insert(id.clone(), state);
                }
            }
        }
        Ok(result)
    }

    fn clean_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        if let Some(running) = self.processes.lock().get_mut(&unit.id) {
            running.values_mut().for_each(stop);
            running.clear();
        }
        Ok(())
    }

    fn dismiss_unit(&self, unit: &MonitoringUnit) -> Result<(), BridgeError> {
        if let Some(mut running) = self.processes.lock().remove(&unit.id) {
            running.values_mut().for_each(stop);
        }
        Ok(())
    }

    fn list_targets(&self) -> Result<Vec<Target>, BridgeError> {
        Ok(self.targets.clone())
    }
}

impl Drop for LocalExec {
    fn drop(&mut self) {
        for running in self.processes.get_mut().values_mut() {
            running.values_mut().for_each(stop);
        }
    }
}
