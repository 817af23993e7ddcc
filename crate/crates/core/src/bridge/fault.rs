//! Fault rules for the simulated plug-in.

use serde::{Deserialize, Serialize};

use crate::error::BridgeError;
use crate::model::{ProbeId, UnitId};

/// Where a fault fires. Preparation runs before the unit is touched, so a
/// PREPARE fault is always soft; an APPLY fault happens while the unit is
/// being changed and is always hard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultPhase {
    Prepare,
    Apply,
    /// `clean_unit` fails; the unit stays dirty.
    Clean,
    /// The plug-in is unreachable for a whole `do_changes` call.
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultEffect {
    Soft,
    Hard,
}

/// Predicate over (unit, probe). Absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultMatch {
    #[serde(rename = "artifactId", default, skip_serializing_if = "Option::is_none")]
    pub artifact_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitId>,
}

impl FaultMatch {
    fn matches(&self, unit: &UnitId, probe: Option<(&ProbeId, &str)>) -> bool {
        if self.unit.as_ref().is_some_and(|u| u != unit) {
            return false;
        }
        match probe {
            Some((id, artifact)) => {
                self.probe.as_ref().is_none_or(|p| p == id) && self.artifact_id.as_deref().is_none_or(|a| a == artifact)
            }
            None => self.probe.is_none() && self.artifact_id.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    #[serde(rename = "match", default)]
    pub matcher: FaultMatch,
    pub phase: FaultPhase,
    /// Optional for CLEAN and TRANSPORT; must agree with the phase otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<FaultEffect>,
    /// Remaining triggers; `None` never clears.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

impl FaultRule {
    pub fn new(phase: FaultPhase, matcher: FaultMatch, count: Option<u32>) -> Self {
        let effect = match phase {
            FaultPhase::Prepare => Some(FaultEffect::Soft),
            FaultPhase::Apply => Some(FaultEffect::Hard),
            FaultPhase::Clean | FaultPhase::Transport => None,
        };
        Self {
            matcher,
            phase,
            effect,
            count,
        }
    }

    /// Soft fault on every probe with `artifact_id`, `count` times.
    pub fn soft(artifact_id: &str, count: Option<u32>) -> Self {
        Self::new(FaultPhase::Prepare, FaultMatch::artifact(artifact_id), count)
    }

    /// Hard fault on every probe with `artifact_id`, `count` times.
    pub fn hard(artifact_id: &str, count: Option<u32>) -> Self {
        Self::new(FaultPhase::Apply, FaultMatch::artifact(artifact_id), count)
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        let expected = match self.phase {
            FaultPhase::Prepare => Some(FaultEffect::Soft),
            FaultPhase::Apply => Some(FaultEffect::Hard),
            FaultPhase::Clean | FaultPhase::Transport => None,
        };
        match (self.effect, expected) {
            (Some(got), Some(want)) if got != want => Err(BridgeError::InvalidRule(format!(
                "{:?} faults are {:?}, not {:?}",
                self.phase, want, got
            ))),
            (Some(got), None) => Err(BridgeError::InvalidRule(format!(
                "{:?} faults carry no effect, got {:?}",
                self.phase, got
            ))),
            _ if self.count == Some(0) => Err(BridgeError::InvalidRule("count must be positive".into())),
            _ => Ok(()),
        }
    }
}

impl FaultMatch {
    pub fn artifact(artifact_id: &str) -> Self {
        Self {
            artifact_id: Some(artifact_id.to_owned()),
            ..Self::default()
        }
    }
}

/// Active rules, consumed in insertion order.
#[derive(Debug, Clone, Default)]
pub(crate) struct FaultBook {
    rules: Vec<FaultRule>,
}

impl FaultBook {
    pub(crate) fn push(&mut self, mut rule: FaultRule) -> Result<(), BridgeError> {
        rule.validate()?;
        if rule.effect.is_none() {
            rule.effect = FaultRule::new(rule.phase, FaultMatch::default(), None).effect;
        }
        self.rules.push(rule);
        Ok(())
    }

    pub(crate) fn clear(&mut self) {
        self.rules.clear();
    }

    pub(crate) fn rules(&self) -> &[FaultRule] {
        &self.rules
    }

    /// Fires the first matching rule of `phase`, consuming one of its
    /// triggers. Unit-wide phases pass `probe = None`.
    pub(crate) fn fire(&mut self, phase: FaultPhase, unit: &UnitId, probe: Option<(&ProbeId, &str)>) -> bool {
        let unit_wide = matches!(phase, FaultPhase::Clean | FaultPhase::Transport);
        let Some(idx) = self.rules.iter().position(|r| {
            r.phase == phase
                && if unit_wide {
                    r.matcher.unit.as_ref().is_none_or(|u| u == unit)
                } else {
                    r.matcher.matches(unit, probe)
                }
        }) else {
            return false;
        };
        if let Some(n) = self.rules[idx].count.as_mut() {
            *n -= 1;
            if *n == 0 {
                self.rules.remove(idx);
            }
        }
        true
    }
}
