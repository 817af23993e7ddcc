//! Domain types shared by every component of the control plane.
//!
//! JSON field names follow the probe/target metadata documents used by the
//! catalog and the cloud plug-ins (`artifactId`, `supportedIndicators`,
//! `targetPlatform`, ...). Documents that carry metadata keep unknown fields
//! so that a read-modify-write cycle never drops information.

mod config;

pub use config::{
    classify_unit, diff_configurations, effective_desired, indicators_of, probes_of, restrict_configuration, ChangeSet,
    ProbeChange,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::ModelError;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Catalog-unique probe identifier.
    ProbeId
);
string_id!(
    /// Monitoring unit identifier, stable across bridge-side re-creations.
    UnitId
);
string_id!(ClaimId);
string_id!(
    /// Identity of an operator submitting claims.
    Operator
);

impl Operator {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.0.trim().is_empty() {
            return Err(ModelError::Invalid("operator id must not be empty".into()));
        }
        Ok(())
    }
}

/// A named indicator (KPI). Names are compared case-insensitively after
/// trimming, so the stored form is the trimmed upper-case spelling.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Indicator(String);

impl Indicator {
    pub fn new(name: &str) -> Result<Self, ModelError> {
        let normalized = name.trim().to_uppercase();
        if normalized.is_empty() {
            return Err(ModelError::Invalid("indicator name must not be empty".into()));
        }
        Ok(Self(normalized))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Indicator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Indicator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Indicator::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Parses a comma separated indicator list, ignoring empty items.
pub fn parse_indicator_list(list: &str) -> Result<BTreeSet<Indicator>, ModelError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Indicator::new)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvType {
    AccessibleVm,
    InaccessibleVm,
    Container,
}

/// How probes are packed into monitoring units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnitStrategy {
    /// One unit per deployed probe (container style).
    SingleProbe,
    /// One unit per target hosting every probe for it (VM style).
    MultiProbe,
}

impl fmt::Display for UnitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitStrategy::SingleProbe => "SINGLE_PROBE",
            UnitStrategy::MultiProbe => "MULTI_PROBE",
        })
    }
}

impl std::str::FromStr for UnitStrategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_uppercase().replace('-', "_").as_str() {
            "SINGLE_PROBE" => Ok(UnitStrategy::SingleProbe),
            "MULTI_PROBE" => Ok(UnitStrategy::MultiProbe),
            other => Err(ModelError::Invalid(format!("unknown unit strategy `{other}`"))),
        }
    }
}

/// Globally unique reference to a target: (platform, id within platform).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetKey {
    #[serde(rename = "targetPlatform")]
    pub platform: String,
    #[serde(rename = "targetPlatformId")]
    pub platform_id: String,
}

impl TargetKey {
    pub fn new(platform: impl Into<String>, platform_id: impl Into<String>) -> Self {
        Self {
            platform: platform.into(),
            platform_id: platform_id.into(),
        }
    }
}

impl fmt::Display for TargetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.platform, self.platform_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    #[serde(rename = "targetPlatform")]
    pub platform: String,
    #[serde(rename = "targetPlatformId")]
    pub platform_id: String,
    #[serde(rename = "envType")]
    pub env_type: EnvType,
    #[serde(default)]
    pub metadata: Map<String, Value>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Target {
    pub fn new(platform: &str, platform_id: &str, env_type: EnvType) -> Self {
        Self {
            platform: platform.to_owned(),
            platform_id: platform_id.to_owned(),
            env_type,
            metadata: Map::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> TargetKey {
        TargetKey::new(&self.platform, &self.platform_id)
    }
}

/// Matching constraints attached to a probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetadata {
    #[serde(rename = "supportedIndicators")]
    pub supported_indicators: BTreeSet<Indicator>,
    #[serde(rename = "supportedDataOutputs")]
    pub supported_data_outputs: BTreeSet<String>,
    #[serde(rename = "supportedMUStrategies")]
    pub supported_strategies: BTreeSet<UnitStrategy>,
    #[serde(rename = "supportedEnvTypes")]
    pub supported_env_types: BTreeSet<EnvType>,
}

/// A deployable probe: the indicators it collects, its matching metadata and
/// an artifact descriptor that only the bridge plug-ins interpret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: ProbeId,
    #[serde(rename = "artifactId")]
    pub artifact_id: String,
    #[serde(flatten)]
    pub metadata: ProbeMetadata,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub artifact: Value,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Probe {
    /// The indicators this probe can collect. Backed by the metadata so the
    /// two can never disagree.
    pub fn indicators(&self) -> &BTreeSet<Indicator> {
        &self.metadata.supported_indicators
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Invalid(format!("probe `{}`: {what}", self.id)));
        if self.id.as_str().trim().is_empty() {
            return Err(ModelError::Invalid("probe id must not be empty".into()));
        }
        if self.artifact_id.trim().is_empty() {
            return bad("artifactId must not be empty");
        }
        let m = &self.metadata;
        if m.supported_indicators.is_empty() {
            return bad("supportedIndicators must not be empty");
        }
        if m.supported_data_outputs.is_empty() {
            return bad("supportedDataOutputs must not be empty");
        }
        if m.supported_strategies.is_empty() {
            return bad("supportedMUStrategies must not be empty");
        }
        if m.supported_env_types.is_empty() {
            return bad("supportedEnvTypes must not be empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimStatus {
    Submitted,
    Processing,
    Fulfilled,
    Aborted,
}

impl ClaimStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ClaimStatus::Fulfilled | ClaimStatus::Aborted)
    }
}

/// An operator's complete indicator wish-list for one target. An empty
/// indicator set asks to stop monitoring the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringClaim {
    pub indicators: BTreeSet<Indicator>,
    pub operator: Operator,
    pub target: Target,
    pub status: ClaimStatus,
}

impl MonitoringClaim {
    pub fn new(indicators: BTreeSet<Indicator>, operator: Operator, target: Target) -> Self {
        Self {
            indicators,
            operator,
            target,
            status: ClaimStatus::Submitted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRequest {
    pub operator: Operator,
    pub claims: Vec<MonitoringClaim>,
}

impl MonitoringRequest {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.operator.validate()?;
        let mut seen = BTreeSet::new();
        for claim in &self.claims {
            if claim.operator != self.operator {
                return Err(ModelError::Invalid(format!(
                    "claim operator `{}` differs from request operator `{}`",
                    claim.operator, self.operator
                )));
            }
            if !seen.insert(claim.target.key()) {
                return Err(ModelError::Invalid(format!(
                    "more than one claim for target {}",
                    claim.target.key()
                )));
            }
        }
        Ok(())
    }
}

/// `(probe, indicators, operator)`: one operator's use of one probe.
///
/// Identity is structural over `(probe id, indicators, operator)`; the rest
/// of the probe document is carried along for the bridge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfiguration {
    pub probe: Probe,
    pub indicators: BTreeSet<Indicator>,
    pub operator: Operator,
}

impl ProbeConfiguration {
    pub fn new(probe: Probe, indicators: BTreeSet<Indicator>, operator: Operator) -> Result<Self, ModelError> {
        let pc = Self {
            probe,
            indicators,
            operator,
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.indicators.is_empty() {
            return Err(ModelError::Invalid(format!(
                "configuration of `{}` for `{}` has no indicators",
                self.probe.id, self.operator
            )));
        }
        if let Some(i) = self.indicators.iter().find(|i| !self.probe.indicators().contains(i)) {
            return Err(ModelError::Invalid(format!(
                "probe `{}` cannot collect {i}",
                self.probe.id
            )));
        }
        Ok(())
    }

    pub fn key(&self) -> ConfigKey {
        ConfigKey {
            probe: self.probe.id.clone(),
            indicators: self.indicators.iter().cloned().collect(),
            operator: self.operator.clone(),
        }
    }

    fn slot(&self) -> (ProbeId, Operator) {
        (self.probe.id.clone(), self.operator.clone())
    }

    fn identity(&self) -> (&ProbeId, &BTreeSet<Indicator>, &Operator) {
        (&self.probe.id, &self.indicators, &self.operator)
    }
}

impl PartialEq for ProbeConfiguration {
    fn eq(&self, other: &Self) -> bool {
        self.identity() == other.identity()
    }
}

impl Eq for ProbeConfiguration {}

impl PartialOrd for ProbeConfiguration {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ProbeConfiguration {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.identity().cmp(&other.identity())
    }
}

impl fmt::Display for ProbeConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {{", self.probe.id)?;
        for (n, i) in self.indicators.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}, {})", self.operator)
    }
}

/// Key used by the retry table and the blacklist.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub probe: ProbeId,
    pub indicators: Vec<Indicator>,
    pub operator: Operator,
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.indicators.iter().map(Indicator::as_str).collect();
        write!(f, "({}, {{{}}}, {})", self.probe, names.join(","), self.operator)
    }
}

/// A set of probe configurations holding at most one entry per
/// `(probe, operator)` pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnitConfiguration {
    entries: BTreeMap<(ProbeId, Operator), ProbeConfiguration>,
}

impl UnitConfiguration {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a configuration, rejecting two entries for the same
    /// `(probe, operator)` pair.
    pub fn from_entries(entries: impl IntoIterator<Item = ProbeConfiguration>) -> Result<Self, ModelError> {
        let mut conf = Self::new();
        for pc in entries {
            let slot = pc.slot();
            if conf.entries.contains_key(&slot) {
                return Err(ModelError::Invalid(format!(
                    "duplicate entry for probe `{}` and operator `{}`",
                    slot.0, slot.1
                )));
            }
            conf.entries.insert(slot, pc);
        }
        Ok(conf)
    }

    /// Inserts `pc`, replacing any entry for the same `(probe, operator)`.
    pub fn insert(&mut self, pc: ProbeConfiguration) -> Option<ProbeConfiguration> {
        self.entries.insert(pc.slot(), pc)
    }

    pub fn remove(&mut self, pc: &ProbeConfiguration) -> bool {
        match self.entries.get(&pc.slot()) {
            Some(existing) if existing == pc => {
                self.entries.remove(&pc.slot());
                true
            }
            _ => false,
        }
    }

    pub fn contains(&self, pc: &ProbeConfiguration) -> bool {
        self.entries.get(&pc.slot()).is_some_and(|e| e == pc)
    }

    pub fn get(&self, probe: &ProbeId, operator: &Operator) -> Option<&ProbeConfiguration> {
        self.entries.get(&(probe.clone(), operator.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProbeConfiguration> {
        self.entries.values()
    }

    /// Entries of one probe, in operator order.
    pub fn entries_for<'a>(&'a self, probe: &'a ProbeId) -> impl Iterator<Item = &'a ProbeConfiguration> + 'a {
        self.entries
            .range((probe.clone(), Operator::new(""))..)
            .take_while(move |((p, _), _)| p == probe)
            .map(|(_, pc)| pc)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Set union; entries of `other` win on a `(probe, operator)` clash.
    pub fn union(&self, other: &UnitConfiguration) -> UnitConfiguration {
        let mut out = self.clone();
        for pc in other.iter() {
            out.insert(pc.clone());
        }
        out
    }

    /// Entries of `self` that are not in `remove`.
    pub fn difference<'a>(&self, remove: impl IntoIterator<Item = &'a ProbeConfiguration>) -> UnitConfiguration {
        let mut out = self.clone();
        for pc in remove {
            out.remove(pc);
        }
        out
    }

    pub fn operators(&self) -> BTreeSet<Operator> {
        self.entries.keys().map(|(_, op)| op.clone()).collect()
    }
}

impl FromIterator<ProbeConfiguration> for UnitConfiguration {
    /// Later entries replace earlier ones on a `(probe, operator)` clash.
    fn from_iter<T: IntoIterator<Item = ProbeConfiguration>>(iter: T) -> Self {
        let mut conf = Self::new();
        for pc in iter {
            conf.insert(pc);
        }
        conf
    }
}

impl Serialize for UnitConfiguration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.entries.values())
    }
}

impl<'de> Deserialize<'de> for UnitConfiguration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<ProbeConfiguration>::deserialize(d)?;
        UnitConfiguration::from_entries(entries).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnitState {
    /// No error in the last actuation.
    Stable,
    /// At least one soft error and no hard error.
    Unsound,
    /// At least one hard error; the unit may be compromised.
    Dirty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringUnit {
    pub id: UnitId,
    pub target: Target,
    /// Platform providing the unit.
    pub host: String,
    pub strategy: UnitStrategy,
    #[serde(rename = "currentConf")]
    pub current_conf: UnitConfiguration,
    #[serde(rename = "desiredConf")]
    pub desired_conf: UnitConfiguration,
    pub state: UnitState,
}

impl MonitoringUnit {
    pub fn empty(id: UnitId, target: Target, host: String, strategy: UnitStrategy) -> Self {
        Self {
            id,
            target,
            host,
            strategy,
            current_conf: UnitConfiguration::new(),
            desired_conf: UnitConfiguration::new(),
            state: UnitState::Stable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeState {
    Stable,
    /// Soft error while preparing the probe.
    Failed,
    /// Hard error while changing the running unit.
    Broken,
}

/// Outcome of one actuation, reported per probe configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    #[serde(rename = "softErrors")]
    pub soft_errors: BTreeSet<ProbeConfiguration>,
    #[serde(rename = "hardErrors")]
    pub hard_errors: BTreeSet<ProbeConfiguration>,
    #[serde(rename = "perProbeState")]
    pub per_probe_state: BTreeMap<ProbeId, ProbeState>,
}

impl BridgeResult {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_clean(&self) -> bool {
        self.soft_errors.is_empty() && self.hard_errors.is_empty()
    }

    pub fn mark_stable(&mut self, probe: &ProbeId) {
        self.per_probe_state.insert(probe.clone(), ProbeState::Stable);
    }

    pub fn mark_failed<'a>(&mut self, probe: &ProbeId, entries: impl IntoIterator<Item = &'a ProbeConfiguration>) {
        self.per_probe_state.insert(probe.clone(), ProbeState::Failed);
        self.soft_errors.extend(entries.into_iter().cloned());
    }

    pub fn mark_broken<'a>(&mut self, probe: &ProbeId, entries: impl IntoIterator<Item = &'a ProbeConfiguration>) {
        self.per_probe_state.insert(probe.clone(), ProbeState::Broken);
        self.hard_errors.extend(entries.into_iter().cloned());
    }

    /// Checks that the error sets are disjoint and agree with the per-probe
    /// states.
    pub fn is_consistent(&self) -> bool {
        if self.soft_errors.intersection(&self.hard_errors).next().is_some() {
            return false;
        }
        let state_ok =
            |pc: &ProbeConfiguration, want: ProbeState| self.per_probe_state.get(&pc.probe.id) == Some(&want);
        self.soft_errors.iter().all(|pc| state_ok(pc, ProbeState::Failed))
            && self.hard_errors.iter().all(|pc| state_ok(pc, ProbeState::Broken))
    }
}
