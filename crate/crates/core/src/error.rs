use std::path::PathBuf;

use thiserror::Error;

use crate::model::{ClaimId, Indicator, ProbeId, TargetKey, UnitId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid document: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("probe `{existing}` already serves {indicator} under the same execution constraints as `{new}`")]
    DuplicateProbe {
        new: ProbeId,
        existing: ProbeId,
        indicator: Indicator,
    },
    #[error("{indicator} is served by more than one probe: {candidates:?}")]
    AmbiguousMatch {
        indicator: Indicator,
        candidates: Vec<ProbeId>,
    },
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("catalog file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog file {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown target {0}")]
    UnknownTarget(TargetKey),
    #[error("unknown monitoring unit {0}")]
    UnknownUnit(UnitId),
    #[error("unknown claim {0}")]
    UnknownClaim(ClaimId),
    #[error("unit strategy violated: {0}")]
    StrategyViolation(String),
    #[error("lease on unit {0} is not held by the caller")]
    LeaseLost(UnitId),
    #[error("state file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("state file {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("state file {path} has schema version {found}, expected {expected}")]
    Schema { path: PathBuf, found: u64, expected: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    /// The plug-in could not be reached; nothing is known about the unit.
    #[error("bridge transport failure: {0}")]
    Transport(String),
    #[error("no plug-in registered for platform `{0}`")]
    UnknownPlatform(String),
    #[error("a plug-in for platform `{0}` is already registered")]
    DuplicatePlatform(String),
    #[error("cleaning unit {unit} failed: {reason}")]
    CleanFailed { unit: UnitId, reason: String },
    #[error("dismissing unit {unit} failed: {reason}")]
    DismissFailed { unit: UnitId, reason: String },
    #[error("cannot load plug-in seed data: {0}")]
    Seed(String),
    #[error("invalid fault rule: {0}")]
    InvalidRule(String),
    #[error("operation not supported by plug-in: {0}")]
    Unsupported(String),
}

/// Errors surfaced by the gateway. The variants map onto HTTP status classes.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}
