//! Probe catalog: stores probe metadata and resolves indicators to probes.
//!
//! Matching is exact: a probe serves an indicator under given execution
//! constraints when every constraint value is listed in the corresponding
//! metadata field. Registration keeps the catalog unambiguous, i.e. each
//! `(indicator, constraints)` cell is served by at most one probe.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::CatalogError;
use crate::fsutil::write_atomic;
use crate::model::{EnvType, Indicator, Operator, Probe, ProbeConfiguration, ProbeId, Target, UnitStrategy};

/// Where and how a probe has to run. Derived from the framework
/// configuration and the target, never from the claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionConstraints {
    #[serde(rename = "envType")]
    pub env_type: EnvType,
    #[serde(rename = "dataOutput")]
    pub data_output: String,
    pub strategy: UnitStrategy,
}

impl ExecutionConstraints {
    pub fn for_target(target: &Target, data_output: &str, strategy: UnitStrategy) -> Self {
        Self {
            env_type: target.env_type,
            data_output: data_output.to_owned(),
            strategy,
        }
    }

    fn admits(&self, probe: &Probe) -> bool {
        let m = &probe.metadata;
        m.supported_data_outputs.contains(&self.data_output)
            && m.supported_strategies.contains(&self.strategy)
            && m.supported_env_types.contains(&self.env_type)
    }
}

/// Result of resolving a claim's indicators against the catalog.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeResolution {
    /// One configuration per matched probe; empty when anything is unmatched.
    pub configs: Vec<ProbeConfiguration>,
    /// Indicators no probe can collect under the constraints.
    pub unmatched: Vec<Indicator>,
}

impl ProbeResolution {
    pub fn is_aborted(&self) -> bool {
        !self.unmatched.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct ProbeCatalog {
    probes: RwLock<BTreeMap<ProbeId, Probe>>,
    dir: Option<PathBuf>,
}

impl ProbeCatalog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a catalog backed by one JSON document per probe in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CatalogError> {
        let dir = dir.into();
        let catalog = Self {
            probes: RwLock::new(BTreeMap::new()),
            dir: Some(dir.clone()),
        };
        if !dir.exists() {
            return Ok(catalog);
        }
        let io = |source| CatalogError::Io {
            path: dir.clone(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let probe = read_probe(&path)?;
            catalog.insert_checked(probe, false)?;
        }
        Ok(catalog)
    }

    pub fn register_probe(&self, probe: Probe) -> Result<ProbeId, CatalogError> {
        self.insert_checked(probe, true)
    }

    fn insert_checked(&self, probe: Probe, persist: bool) -> Result<ProbeId, CatalogError> {
        probe.validate()?;
        let mut probes = self.probes.write();
        if probes.contains_key(&probe.id) {
            return Err(CatalogError::DuplicateProbe {
                new: probe.id.clone(),
                existing: probe.id.clone(),
                indicator: probe.indicators().iter().next().cloned().expect("validated"),
            });
        }
        for existing in probes.values() {
            if let Some(indicator) = overlapping_cell(existing, &probe) {
                return Err(CatalogError::DuplicateProbe {
                    new: probe.id.clone(),
                    existing: existing.id.clone(),
                    indicator,
                });
            }
        }
        if persist {
            if let Some(dir) = &self.dir {
                let path = dir.join(format!("{}.json", file_stem(&probe.id)));
                let bytes = serde_json::to_vec_pretty(&probe).expect("probe serializes");
                write_atomic(&path, &bytes).map_err(|source| CatalogError::Io { path, source })?;
            }
        }
        let id = probe.id.clone();
        probes.insert(id.clone(), probe);
        Ok(id)
    }

    pub fn get(&self, id: &ProbeId) -> Option<Probe> {
        self.probes.read().get(id).cloned()
    }

    pub fn list(&self) -> Vec<Probe> {
        self.probes.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.probes.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.read().is_empty()
    }

    pub fn match_probe(
        &self,
        indicator: &Indicator,
        constraints: &ExecutionConstraints,
    ) -> Result<Option<Probe>, CatalogError> {
        let probes = self.probes.read();
        let mut hits = probes
            .values()
            .filter(|p| p.indicators().contains(indicator) && constraints.admits(p));
        let first = hits.next();
        let rest: Vec<&Probe> = hits.collect();
        if let Some(first) = first {
            if !rest.is_empty() {
                return Err(CatalogError::AmbiguousMatch {
                    indicator: indicator.clone(),
                    candidates: std::iter::once(first).chain(rest).map(|p| p.id.clone()).collect(),
                });
            }
        }
        Ok(first.cloned())
    }

    /// Resolves every indicator to its probe and groups indicators served by
    /// the same probe into one configuration. A single unmatched indicator
    /// aborts the whole resolution.
    pub fn get_probe_configs(
        &self,
        indicators: &BTreeSet<Indicator>,
        operator: &Operator,
        constraints: &ExecutionConstraints,
    ) -> Result<ProbeResolution, CatalogError> {
        let mut grouped: BTreeMap<ProbeId, (Probe, BTreeSet<Indicator>)> = BTreeMap::new();
        let mut unmatched = Vec::new();
        for indicator in indicators {
            match self.match_probe(indicator, constraints)? {
                Some(p) => {
                    grouped
                        .entry(p.id.clone())
                        .or_insert_with(|| (p, BTreeSet::new()))
                        .1
                        .insert(indicator.clone());
                }
                None => unmatched.push(indicator.clone()),
            }
        }
        if !unmatched.is_empty() {
            return Ok(ProbeResolution {
                configs: Vec::new(),
                unmatched,
            });
        }
        let configs = grouped
            .into_values()
            .map(|(probe, inds)| ProbeConfiguration::new(probe, inds, operator.clone()))
            .collect::<Result<_, _>>()?;
        Ok(ProbeResolution { configs, unmatched })
    }
}

/// First indicator for which `a` and `b` would both match some constraint
/// combination.
fn overlapping_cell(a: &Probe, b: &Probe) -> Option<Indicator> {
    let (ma, mb) = (&a.metadata, &b.metadata);
    let shares_constraints = !ma.supported_data_outputs.is_disjoint(&mb.supported_data_outputs)
        && !ma.supported_strategies.is_disjoint(&mb.supported_strategies)
        && !ma.supported_env_types.is_disjoint(&mb.supported_env_types);
    if !shares_constraints {
        return None;
    }
    a.indicators().intersection(b.indicators()).next().cloned()
}

fn file_stem(id: &ProbeId) -> String {
    id.as_str()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn read_probe(path: &Path) -> Result<Probe, CatalogError> {
    let bytes = fs::read(path).map_err(|source| CatalogError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| CatalogError::Decode {
        path: path.to_owned(),
        source,
    })
}
