//! Scenario scripts: JSON documents listing the steps of an experiment.

use std::collections::BTreeMap;
use std::path::Path;

use maas_core::bridge::{FaultRule, Profile};
use maas_core::model::{ClaimStatus, ConfigKey, Probe, ProbeId, Target, UnitState, UnitStrategy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default = "default_strategy")]
    pub strategy: UnitStrategy,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "retryThreshold", default = "default_threshold")]
    pub retry_threshold: u32,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Runs the steps once per value, substituting `$VAR`, `$VAR-k` and
    /// `$VAR+k` strings with numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Kept as raw JSON until the sweep variable is substituted.
    pub steps: Vec<Value>,
}

fn default_strategy() -> UnitStrategy {
    UnitStrategy::MultiProbe
}

fn default_profile() -> Profile {
    Profile::Container
}

fn default_threshold() -> u32 {
    maas_core::store::DEFAULT_RETRY_THRESHOLD
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub var: String,
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum Step {
    SeedTargets {
        targets: Vec<Target>,
    },
    RegisterProbes {
        probes: Vec<Probe>,
    },
    /// `count` single-indicator probes `{prefix}{i}` serving
    /// `{indicatorPrefix}_{i}`, deployable everywhere.
    GenerateProbes {
        prefix: String,
        #[serde(rename = "indicatorPrefix")]
        indicator_prefix: String,
        count: usize,
    },
    Submit {
        #[serde(default)]
        label: Option<String>,
        operator: String,
        /// `platform/id`, or a bare id unique across platforms.
        target: String,
        #[serde(default)]
        indicators: Vec<String>,
        /// Appends `{prefix}_{i}` for `i < count` to the indicators.
        #[serde(default)]
        generated: Option<Generated>,
    },
    /// One claim per operator `{operatorPrefix}{i}`, labelled
    /// `{labelPrefix}-{i}`.
    SubmitEach {
        #[serde(rename = "labelPrefix")]
        label_prefix: String,
        #[serde(rename = "operatorPrefix")]
        operator_prefix: String,
        count: usize,
        target: String,
        indicators: Vec<String>,
        /// Settle after every submission instead of once at the end.
        #[serde(rename = "settleEach", default)]
        settle_each: bool,
    },
    InjectFault {
        rule: FaultRule,
    },
    ClearFaults,
    /// Resets the error tables of the unit hosting `probe`, or all of them.
    ResetErrors {
        #[serde(default)]
        probe: Option<ProbeId>,
    },
    /// Exactly `ticks` controller passes.
    Advance {
        ticks: u32,
    },
    /// Controller passes until nothing is left to do.
    Settle {
        #[serde(rename = "maxTicks", default = "default_max_ticks")]
        max_ticks: u32,
    },
    Assert {
        #[serde(default)]
        label: Option<String>,
        expect: Expect,
    },
}

fn default_max_ticks() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generated {
    pub prefix: String,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(rename = "unitCount", default)]
    pub unit_count: Option<usize>,
    #[serde(default)]
    pub units: Vec<UnitExpect>,
    /// Operators with no configuration entry on any unit.
    #[serde(rename = "absentOperators", default)]
    pub absent_operators: Vec<String>,
    /// Operator → target → union of the indicators it is served.
    #[serde(rename = "operatorIndicators", default)]
    pub operator_indicators: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// Target → probes running in simulated instances on it.
    #[serde(rename = "runningProbes", default)]
    pub running_probes: BTreeMap<String, Vec<ProbeId>>,
    /// Every blacklisted configuration across all units.
    #[serde(default)]
    pub blacklist: Option<Vec<ConfigKey>>,
    #[serde(default)]
    pub stats: Option<StatsExpect>,
    /// Submission label → claim status.
    #[serde(default)]
    pub claims: BTreeMap<String, ClaimStatus>,
    /// Every unit runs its effective desired configuration and nothing is
    /// left to reconcile.
    #[serde(default)]
    pub converged: Option<bool>,
    #[serde(rename = "deploysSince", default)]
    pub deploys_since: Option<DeploysSince>,
    #[serde(rename = "zeroOpReconcilesSince", default)]
    pub zero_op_reconciles_since: Option<CountSince>,
    #[serde(rename = "bridgeCallsSince", default)]
    pub bridge_calls_since: Option<CountSince>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitExpect {
    /// Selects the unit whose desired or current configuration names this
    /// probe.
    #[serde(default)]
    pub probe: Option<ProbeId>,
    /// Restricts the selection to a target.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default = "yes")]
    pub present: bool,
    #[serde(default)]
    pub desired: Option<Vec<ConfigKey>>,
    #[serde(default)]
    pub current: Option<Vec<ConfigKey>>,
    #[serde(default)]
    pub state: Option<UnitState>,
    /// Probes in the unit's simulated instance; empty means no instance.
    #[serde(default)]
    pub running: Option<Vec<ProbeId>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsExpect {
    #[serde(rename = "doChangesCalls", default)]
    pub do_changes_calls: Option<u64>,
    #[serde(default)]
    pub adds: Option<u64>,
    #[serde(default)]
    pub updates: Option<u64>,
    #[serde(default)]
    pub drops: Option<u64>,
    #[serde(rename = "softErrors", default)]
    pub soft_errors: Option<u64>,
    #[serde(rename = "hardErrors", default)]
    pub hard_errors: Option<u64>,
    #[serde(default)]
    pub cleans: Option<u64>,
    #[serde(default)]
    pub dismissals: Option<u64>,
    #[serde(rename = "reentrancyViolations", default)]
    pub reentrancy_violations: Option<u64>,
}

/// Deploy operations (adds and updates) since the submission `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploysSince {
    pub label: String,
    #[serde(default)]
    pub total: Option<u64>,
    #[serde(default)]
    pub probes: BTreeMap<ProbeId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSince {
    pub label: String,
    pub count: u64,
}

impl ScenarioScript {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Script(m) => HarnessError::Script(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let script: Self = serde_json::from_str(text).map_err(|e| HarnessError::Script(e.to_string()))?;
        // Fail early on malformed steps rather than halfway through a run.
        for value in script.sweep_values() {
            script.steps_for(value)?;
        }
        Ok(script)
    }

    /// One entry per run of the steps: the sweep values, or a single
    /// `None` without a sweep.
    pub fn sweep_values(&self) -> Vec<Option<i64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    /// The steps with the sweep variable bound to `value`.
    pub fn steps_for(&self, value: Option<i64>) -> Result<Vec<Step>, HarnessError> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, raw)| {
                let bound = match (&self.sweep, value) {
                    (Some(s), Some(v)) => substitute(raw, &s.var, v),
                    _ => raw.clone(),
                };
                serde_json::from_value(bound).map_err(|e| HarnessError::Script(format!("step {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Report name of one sweep run.
    pub fn run_name(&self, value: Option<i64>) -> String {
        match (&self.sweep, value) {
            (Some(s), Some(v)) => format!("{}[{}={v}]", self.name, s.var),
            _ => self.name.clone(),
        }
    }
}

fn substitute(v: &Value, var: &str, value: i64) -> Value {
    match v {
        Value::String(s) => bind(s, var, value).map_or_else(|| v.clone(), Value::from),
        Value::Array(items) => Value::Array(items.iter().map(|i| substitute(i, var, value)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, i)| (k.clone(), substitute(i, var, value)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn bind(s: &str, var: &str, value: i64) -> Option<i64> {
    let rest = s.strip_prefix('$')?.strip_prefix(var)?;
    if rest.is_empty() {
        return Some(value);
    }
    let (sign, k) = rest.split_at(1);
    let k: i64 = k.parse().ok()?;
    match sign {
        "+" => Some(value + k),
        "-" => Some(value - k),
        _ => None,
    }
}
