//! Retry table and blacklist.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ConfigKey, UnitId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryOutcome {
    /// The configuration will be retried; carries the new retry count.
    Retrying(u32),
    /// The retry count reached the threshold and the configuration moved to
    /// the blacklist.
    Blacklisted(u32),
}

impl RetryOutcome {
    pub fn count(self) -> u32 {
        match self {
            RetryOutcome::Retrying(n) | RetryOutcome::Blacklisted(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetScope {
    All,
    Unit(UnitId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorLedger {
    retries: BTreeMap<UnitId, BTreeMap<ConfigKey, u32>>,
    blacklist: BTreeMap<UnitId, BTreeSet<ConfigKey>>,
}

impl ErrorLedger {
    pub(crate) fn inc_retry(&mut self, unit: &UnitId, key: ConfigKey, threshold: u32) -> RetryOutcome {
        let row = self.retries.entry(unit.clone()).or_default();
        let count = row.entry(key.clone()).or_insert(0);
        *count += 1;
        let n = *count;
        if n >= threshold {
            row.remove(&key);
            if row.is_empty() {
                self.retries.remove(unit);
            }
            self.blacklist.entry(unit.clone()).or_default().insert(key);
            RetryOutcome::Blacklisted(n)
        } else {
            RetryOutcome::Retrying(n)
        }
    }

    pub(crate) fn blacklist_add(&mut self, unit: &UnitId, key: ConfigKey) {
        if let Some(row) = self.retries.get_mut(unit) {
            row.remove(&key);
            if row.is_empty() {
                self.retries.remove(unit);
            }
        }
        self.blacklist.entry(unit.clone()).or_default().insert(key);
    }

    pub(crate) fn reset(&mut self, scope: &ResetScope) {
        match scope {
            ResetScope::All => {
                self.retries.clear();
                self.blacklist.clear();
            }
            ResetScope::Unit(u) => {
                self.retries.remove(u);
                self.blacklist.remove(u);
            }
        }
    }

    pub fn retry_count(&self, unit: &UnitId, key: &ConfigKey) -> u32 {
        self.retries.get(unit).and_then(|r| r.get(key)).copied().unwrap_or(0)
    }

    pub fn retries_for(&self, unit: &UnitId) -> BTreeMap<ConfigKey, u32> {
        self.retries.get(unit).cloned().unwrap_or_default()
    }

    pub fn blacklist_for(&self, unit: &UnitId) -> BTreeSet<ConfigKey> {
        self.blacklist.get(unit).cloned().unwrap_or_default()
    }

    pub fn is_blacklisted(&self, unit: &UnitId, key: &ConfigKey) -> bool {
        self.blacklist.get(unit).is_some_and(|b| b.contains(key))
    }

    pub(crate) fn to_doc(&self) -> LedgerDoc {
        LedgerDoc {
            retries: self
                .retries
                .iter()
                .flat_map(|(u, row)| {
                    row.iter().map(|(k, n)| RetryRow {
                        unit: u.clone(),
                        config: k.clone(),
                        count: *n,
                    })
                })
                .collect(),
            blacklist: self
                .blacklist
                .iter()
                .flat_map(|(u, set)| {
                    set.iter().map(|k| BlacklistRow {
                        unit: u.clone(),
                        config: k.clone(),
                    })
                })
                .collect(),
        }
    }

    pub(crate) fn from_doc(doc: LedgerDoc) -> Self {
        let mut ledger = Self::default();
        for r in doc.retries {
            ledger.retries.entry(r.unit).or_default().insert(r.config, r.count);
        }
        for b in doc.blacklist {
            ledger.blacklist.entry(b.unit).or_default().insert(b.config);
        }
        ledger
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RetryRow {
    unit: UnitId,
    config: ConfigKey,
    count: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct BlacklistRow {
    unit: UnitId,
    config: ConfigKey,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct LedgerDoc {
    retries: Vec<RetryRow>,
    blacklist: Vec<BlacklistRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Indicator, Operator, ProbeId};

    fn key() -> ConfigKey {
        ConfigKey {
            probe: ProbeId::new("p"),
            indicators: vec![Indicator::new("i").unwrap()],
            operator: Operator::new("op"),
        }
    }

    #[test]
    fn retry_ladder_blacklists_at_threshold() {
        let mut l = ErrorLedger::default();
        let u = UnitId::new("mu-1");
        assert_eq!(l.inc_retry(&u, key(), 3), RetryOutcome::Retrying(1));
        assert_eq!(l.inc_retry(&u, key(), 3), RetryOutcome::Retrying(2));
        assert_eq!(l.inc_retry(&u, key(), 3), RetryOutcome::Blacklisted(3));
        assert!(l.is_blacklisted(&u, &key()));
        assert_eq!(l.retry_count(&u, &key()), 0, "counter cleared on blacklisting");
    }

    #[test]
    fn reset_is_scoped() {
        let mut l = ErrorLedger::default();
        let (a, b) = (UnitId::new("a"), UnitId::new("b"));
        l.blacklist_add(&a, key());
        l.blacklist_add(&b, key());
        l.reset(&ResetScope::Unit(a.clone()));
        assert!(!l.is_blacklisted(&a, &key()));
        assert!(l.is_blacklisted(&b, &key()));
        l.reset(&ResetScope::All);
        assert_eq!(l, ErrorLedger::default());
    }

    #[test]
    fn document_round_trip() {
        let mut l = ErrorLedger::default();
        let u = UnitId::new("mu-1");
        l.inc_retry(&u, key(), 5);
        l.blacklist_add(&UnitId::new("mu-2"), key());
        let doc = serde_json::to_string(&l.to_doc()).unwrap();
        let back = ErrorLedger::from_doc(serde_json::from_str(&doc).unwrap());
        assert_eq!(back, l);
    }
}
