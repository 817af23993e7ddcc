//! Configuration algebra used by both controllers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    BridgeResult, ConfigKey, Indicator, Operator, Probe, ProbeConfiguration, ProbeId, UnitConfiguration, UnitState,
};

/// `C|op`: every entry of `conf` that does not belong to `op`.
pub fn restrict_configuration(conf: &UnitConfiguration, op: &Operator) -> UnitConfiguration {
    conf.iter().filter(|pc| &pc.operator != op).cloned().collect()
}

/// Distinct probes referenced by `conf`.
pub fn probes_of(conf: &UnitConfiguration) -> BTreeSet<ProbeId> {
    conf.iter().map(|pc| pc.probe.id.clone()).collect()
}

/// Indicators a probe must collect to serve every operator in `conf`: the
/// union over all entries of that probe. Absent probes yield the empty set.
pub fn indicators_of(conf: &UnitConfiguration, probe: &ProbeId) -> BTreeSet<Indicator> {
    conf.entries_for(probe)
        .flat_map(|pc| pc.indicators.iter().cloned())
        .collect()
}

/// The desired configuration minus blacklisted entries.
pub fn effective_desired(desired: &UnitConfiguration, blacklist: &BTreeSet<ConfigKey>) -> UnitConfiguration {
    if blacklist.is_empty() {
        return desired.clone();
    }
    desired
        .iter()
        .filter(|pc| !blacklist.contains(&pc.key()))
        .cloned()
        .collect()
}

/// All entries of one probe within a change set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeChange {
    pub probe: Probe,
    pub entries: Vec<ProbeConfiguration>,
}

impl ProbeChange {
    fn collect(conf: &UnitConfiguration, probe: &ProbeId) -> Self {
        let entries: Vec<ProbeConfiguration> = conf.entries_for(probe).cloned().collect();
        Self {
            probe: entries[0].probe.clone(),
            entries,
        }
    }

    /// Indicators the probe collects after the change.
    pub fn indicators(&self) -> BTreeSet<Indicator> {
        self.entries
            .iter()
            .flat_map(|pc| pc.indicators.iter().cloned())
            .collect()
    }

    pub fn operators(&self) -> BTreeSet<Operator> {
        self.entries.iter().map(|pc| pc.operator.clone()).collect()
    }
}

/// Probes to add, reconfigure and drop to move a unit from its current to
/// its desired configuration. Adds and updates carry the desired-side
/// entries, drops carry the current-side ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    #[serde(rename = "toAdd")]
    pub to_add: BTreeMap<ProbeId, ProbeChange>,
    #[serde(rename = "toUpdate")]
    pub to_update: BTreeMap<ProbeId, ProbeChange>,
    #[serde(rename = "toDrop")]
    pub to_drop: BTreeMap<ProbeId, ProbeChange>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.to_add.is_empty() && self.to_update.is_empty() && self.to_drop.is_empty()
    }

    /// `|toAdd| + |toUpdate| + |toDrop|`.
    pub fn len(&self) -> usize {
        self.to_add.len() + self.to_update.len() + self.to_drop.len()
    }

    /// Every configuration the change set touches.
    pub fn all_entries(&self) -> impl Iterator<Item = &ProbeConfiguration> {
        self.to_add
            .values()
            .chain(self.to_update.values())
            .chain(self.to_drop.values())
            .flat_map(|c| c.entries.iter())
    }
}

pub fn diff_configurations(current: &UnitConfiguration, desired: &UnitConfiguration) -> ChangeSet {
    let current_probes = probes_of(current);
    let desired_probes = probes_of(desired);
    let mut changes = ChangeSet::default();

    for p in desired_probes.difference(&current_probes) {
        changes.to_add.insert(p.clone(), ProbeChange::collect(desired, p));
    }
    for p in desired_probes.intersection(&current_probes) {
        if indicators_of(desired, p) != indicators_of(current, p) {
            changes.to_update.insert(p.clone(), ProbeChange::collect(desired, p));
        }
    }
    for p in current_probes.difference(&desired_probes) {
        changes.to_drop.insert(p.clone(), ProbeChange::collect(current, p));
    }
    changes
}

/// A hard error dominates: one broken probe makes the unit dirty.
pub fn classify_unit(result: &BridgeResult) -> UnitState {
    if !result.hard_errors.is_empty() {
        UnitState::Dirty
    } else if !result.soft_errors.is_empty() {
        UnitState::Unsound
    } else {
        UnitState::Stable
    }
}
