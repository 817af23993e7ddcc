//! Server settings read from `MAAS_*` environment variables.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use maas_core::model::UnitStrategy;
use maas_core::store::DEFAULT_RETRY_THRESHOLD;
use thiserror::Error;

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_LOOP_INTERVAL: Duration = Duration::from_millis(500);
pub const DEFAULT_SIM_PLATFORM: &str = "sim";

#[derive(Debug, Error, PartialEq)]
#[error("{var}: {reason}")]
pub struct ConfigError {
    pub var: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    /// Snapshots, probe catalog and event log live here. Without it the
    /// server keeps everything in memory.
    pub state_dir: Option<PathBuf>,
    /// Holds `targets.json` and `faults.json` for the simulated plug-in.
    /// Defaults to the state directory.
    pub seed_dir: Option<PathBuf>,
    pub listen_addr: SocketAddr,
    pub strategy: UnitStrategy,
    pub retry_threshold: u32,
    pub loop_interval: Duration,
    pub sim_platform: String,
    pub data_output: String,
    pub unit_replicas: usize,
    pub claim_workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            state_dir: None,
            seed_dir: None,
            listen_addr: DEFAULT_LISTEN_ADDR.parse().expect("valid default address"),
            strategy: UnitStrategy::MultiProbe,
            retry_threshold: DEFAULT_RETRY_THRESHOLD,
            loop_interval: DEFAULT_LOOP_INTERVAL,
            sim_platform: DEFAULT_SIM_PLATFORM.to_owned(),
            data_output: maas_core::api::DEFAULT_DATA_OUTPUT.to_owned(),
            unit_replicas: 1,
            claim_workers: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(var: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e: T::Err| ConfigError {
        var,
        reason: e.to_string(),
    })
}

fn positive(var: &'static str, n: u64) -> Result<u64, ConfigError> {
    if n == 0 {
        return Err(ConfigError {
            var,
            reason: "must be at least 1".into(),
        });
    }
    Ok(n)
}

impl ServerConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Builds a config from any variable source; unset or empty variables
    /// keep their defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |k: &str| get(k).filter(|v| !v.trim().is_empty());
        let mut cfg = Self::default();
        if let Some(v) = get("MAAS_STATE_DIR") {
            cfg.state_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("MAAS_SEED_DIR") {
            cfg.seed_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("MAAS_LISTEN_ADDR") {
            cfg.listen_addr = parse("MAAS_LISTEN_ADDR", &v)?;
        }
        if let Some(v) = get("MAAS_STRATEGY") {
            cfg.strategy = parse("MAAS_STRATEGY", &v)?;
        }
        if let Some(v) = get("MAAS_RETRY_THRESHOLD") {
            cfg.retry_threshold = positive("MAAS_RETRY_THRESHOLD", parse("MAAS_RETRY_THRESHOLD", &v)?)? as u32;
        }
        if let Some(v) = get("MAAS_LOOP_INTERVAL_MS") {
            cfg.loop_interval =
                Duration::from_millis(positive("MAAS_LOOP_INTERVAL_MS", parse("MAAS_LOOP_INTERVAL_MS", &v)?)?);
        }
        if let Some(v) = get("MAAS_SIM_PLATFORM") {
            cfg.sim_platform = v;
        }
        if let Some(v) = get("MAAS_DATA_OUTPUT") {
            cfg.data_output = v;
        }
        if let Some(v) = get("MAAS_UNIT_REPLICAS") {
            cfg.unit_replicas = positive("MAAS_UNIT_REPLICAS", parse("MAAS_UNIT_REPLICAS", &v)?)? as usize;
        }
        if let Some(v) = get("MAAS_CLAIM_WORKERS") {
            cfg.claim_workers = positive("MAAS_CLAIM_WORKERS", parse("MAAS_CLAIM_WORKERS", &v)?)? as usize;
        }
        Ok(cfg)
    }

    pub fn effective_seed_dir(&self) -> Option<&PathBuf> {
        self.seed_dir.as_ref().or(self.state_dir.as_ref())
    }
}
