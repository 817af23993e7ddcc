//! Run reports: JSON documents and plot-ready CSV.

use std::path::{Path, PathBuf};

use maas_core::bridge::sim::SimStats;
use maas_core::bridge::Profile;
use maas_core::model::{MonitoringUnit, UnitStrategy};
use maas_core::store::StoreMetrics;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Stage timings and operation counts of one submission, accumulated from
/// the submission until the plane next settles. Times are milliseconds of
/// the run clock. Stages of different units may overlap, so `total` is not
/// the sum of the other stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub label: String,
    #[serde(rename = "claimProcessing")]
    pub claim_processing: f64,
    #[serde(rename = "unitProcessing")]
    pub unit_processing: f64,
    #[serde(rename = "probesDeployment")]
    pub probes_deployment: f64,
    pub total: f64,
    /// Probe changes, cleans and dismissals sent to the bridge.
    #[serde(rename = "bridgeOpCount")]
    pub bridge_op_count: u64,
    /// Attempted adds and updates.
    pub deploys: u64,
    /// Reconciliations that found nothing to change at the bridge.
    #[serde(rename = "zeroOpReconciles")]
    pub zero_op_reconciles: u64,
    pub reconciles: u64,
}

impl Measure {
    /// `(metric, value)` pairs in CSV order.
    pub fn metrics(&self) -> [(&'static str, f64); 8] {
        [
            ("claimProcessing", self.claim_processing),
            ("unitProcessing", self.unit_processing),
            ("probesDeployment", self.probes_deployment),
            ("total", self.total),
            ("bridgeOpCount", self.bridge_op_count as f64),
            ("deploys", self.deploys as f64),
            ("zeroOpReconciles", self.zero_op_reconciles as f64),
            ("reconciles", self.reconciles as f64),
        ]
    }
}

/// One execution of the steps: one repetition of one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    #[serde(rename = "sweepValue", skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<i64>,
    pub repetition: usize,
    pub seed: u64,
    pub ticks: u64,
    pub assertions: usize,
    pub measures: Vec<Measure>,
    pub stats: SimStats,
    #[serde(rename = "storeMetrics")]
    pub store_metrics: StoreMetrics,
    #[serde(rename = "finalUnits")]
    pub final_units: Vec<MonitoringUnit>,
}

impl RunReport {
    /// Probe changes, cleans and dismissals over the whole run.
    pub fn bridge_op_count(&self) -> u64 {
        self.stats.changes() + self.stats.cleans + self.stats.dismissals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub profile: Profile,
    pub strategy: UnitStrategy,
    pub seed: u64,
    pub replicas: usize,
    pub runs: Vec<RunReport>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `scenario,stage,repetition,value` rows ordered by run, then
    /// measure, then metric. Stages are named `{label}.{metric}`.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "stage", "repetition", "value"])?;
        for run in &self.runs {
            for m in &run.measures {
                for (metric, value) in m.metrics() {
                    w.write_record([
                        run.name.as_str(),
                        &format!("{}.{metric}", m.label),
                        &run.repetition.to_string(),
                        &value.to_string(),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    /// Writes `{scenario}-{profile}.json` and `.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let stem = format!("{}-{}", self.scenario, profile_name(self.profile));
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json()?).map_err(io(&json))?;
        std::fs::write(&csv, self.to_csv()?).map_err(io(&csv))?;
        Ok((json, csv))
    }
}

pub fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Vm => "vm",
        Profile::Container => "container",
        Profile::Zero => "zero",
    }
}
