//! Wires the gateway, the simulated plug-in and the controller threads.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use maas_core::api::{ApiConfig, ApiService};
use maas_core::bridge::{CloudBridge, SimulatedCloud};
use maas_core::catalog::ProbeCatalog;
use maas_core::claim_controller::ClaimController;
use maas_core::clock::{Clock, SystemClock};
use maas_core::error::{BridgeError, CatalogError, StoreError};
use maas_core::events::EventBus;
use maas_core::store::{StateStore, StoreConfig};
use maas_core::unit_controller::UnitController;
use thiserror::Error;

use crate::config::ServerConfig;

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("event log: {0}")]
    EventLog(#[from] std::io::Error),
}

/// A running control plane. Dropping it stops the controller threads.
pub struct ControlPlane {
    api: Arc<ApiService>,
    sim: Arc<SimulatedCloud>,
    shutdown: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ControlPlane {
    /// Builds the gateway and starts the claim workers and unit controller
    /// replicas.
    pub fn start(cfg: &ServerConfig) -> Result<Self, StartError> {
        let plane = Self::build(cfg)?;
        Ok(plane.spawn_controllers(cfg))
    }

    /// Builds the gateway without any controller threads.
    pub fn build(cfg: &ServerConfig) -> Result<Self, StartError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let store = StateStore::open(
            StoreConfig {
                retry_threshold: cfg.retry_threshold,
                state_dir: cfg.state_dir.clone(),
                ..Default::default()
            },
            clock.clone(),
        )?;
        let catalog = match &cfg.state_dir {
            Some(dir) => ProbeCatalog::open(dir.join("probes"))?,
            None => ProbeCatalog::in_memory(),
        };
        let bus = match &cfg.state_dir {
            Some(dir) => EventBus::with_log_file(clock, &dir.join("events.log"))?,
            None => EventBus::new(clock),
        };
        let sim = Arc::new(match cfg.effective_seed_dir() {
            Some(dir) => SimulatedCloud::from_dir(&cfg.sim_platform, dir)?,
            None => SimulatedCloud::new(&cfg.sim_platform),
        });
        let bridge = CloudBridge::new();
        bridge.register_simulated(sim.clone())?;
        let api = Arc::new(ApiService::new(
            store,
            Arc::new(catalog),
            Arc::new(bridge),
            Arc::new(bus),
            ApiConfig {
                strategy: cfg.strategy,
                data_output: cfg.data_output.clone(),
                ..Default::default()
            },
        ));
        Ok(Self {
            api,
            sim,
            shutdown: Arc::new(AtomicBool::new(false)),
            workers: Vec::new(),
        })
    }

    fn spawn_controllers(mut self, cfg: &ServerConfig) -> Self {
        let interval = cfg.loop_interval;
        for i in 0..cfg.claim_workers {
            let (ctl, stop) = (ClaimController::new(self.api.clone()), self.shutdown.clone());
            self.workers
                .push(spawn(format!("claim-ctl-{i}"), move || ctl.run(interval, &stop)));
        }
        for i in 0..cfg.unit_replicas {
            let ctl = UnitController::new(self.api.clone(), format!("uc-{i}"));
            let stop = self.shutdown.clone();
            self.workers.push(spawn(format!("unit-ctl-{i}"), move || {
                ctl.run_control_loop(interval, &stop)
            }));
        }
        self
    }

    pub fn api(&self) -> &Arc<ApiService> {
        &self.api
    }

    pub fn sim(&self) -> &Arc<SimulatedCloud> {
        &self.sim
    }

    /// Signals the controllers and waits for them to exit.
    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ControlPlane {
    fn drop(&mut self) {
        self.stop();
    }
}

fn spawn(name: String, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(name)
        .spawn(f)
        .expect("spawn controller thread")
}
