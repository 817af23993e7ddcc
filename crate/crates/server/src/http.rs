//! JSON-over-HTTP surface of the gateway.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use maas_core::api::{ApiService, RequestDoc};
use maas_core::bridge::FaultRule;
use maas_core::error::{ApiError, BridgeError, CatalogError, StoreError};
use maas_core::model::{ClaimId, Operator, Probe, TargetKey, UnitId};
use maas_core::store::ResetScope;
use serde::Deserialize;
use serde_json::json;

pub const OPERATOR_HEADER: &str = "x-operator-id";
/// Sequence number of the newest event, set on every events response.
pub const LAST_SEQ_HEADER: &str = "x-maas-last-seq";
/// Upper bound on how long an events request may block.
pub const MAX_EVENT_WAIT: Duration = Duration::from_secs(30);

pub struct HttpError {
    status: StatusCode,
    message: String,
}

impl HttpError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        Self::new(status_of(&e), e.to_string())
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let body = json!({ "status": self.status.as_u16(), "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

/// HTTP status class of a gateway error.
pub fn status_of(e: &ApiError) -> StatusCode {
    match e {
        ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
        ApiError::NotFound(_) => StatusCode::NOT_FOUND,
        ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
        ApiError::Catalog(CatalogError::Invalid(_)) => StatusCode::BAD_REQUEST,
        ApiError::Catalog(CatalogError::DuplicateProbe { .. }) => StatusCode::CONFLICT,
        ApiError::Catalog(_) => StatusCode::INTERNAL_SERVER_ERROR,
        ApiError::Store(StoreError::UnknownTarget(_) | StoreError::UnknownUnit(_) | StoreError::UnknownClaim(_)) => {
            StatusCode::NOT_FOUND
        }
        ApiError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        ApiError::Bridge(BridgeError::InvalidRule(_) | BridgeError::Unsupported(_)) => StatusCode::BAD_REQUEST,
        ApiError::Bridge(BridgeError::UnknownPlatform(_)) => StatusCode::NOT_FOUND,
        ApiError::Bridge(BridgeError::Transport(_)) => StatusCode::BAD_GATEWAY,
        ApiError::Bridge(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

type ApiResult<T> = Result<T, HttpError>;

fn caller(headers: &HeaderMap) -> ApiResult<Operator> {
    let op = headers
        .get(OPERATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| HttpError::new(StatusCode::FORBIDDEN, "missing X-Operator-Id header"))?;
    Ok(Operator::new(op))
}

pub fn router(api: Arc<ApiService>) -> Router {
    Router::new()
        .route("/api/v1/monitoring-requests", post(submit))
        .route("/api/v1/claims/{id}", get(claim_status))
        .route("/api/v1/targets", get(targets))
        .route("/api/v1/probes", post(upload_probe).get(list_probes))
        .route("/api/v1/units", get(list_units))
        .route("/api/v1/units/{id}", get(unit))
        .route("/api/v1/admin/error-tables/reset", post(reset_tables))
        .route("/api/v1/admin/faults", post(inject_fault))
        .route("/api/v1/admin/reload", post(reload))
        .route("/api/v1/events", get(events))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(api)
}

async fn submit(
    State(api): State<Arc<ApiService>>,
    headers: HeaderMap,
    Json(doc): Json<RequestDoc>,
) -> ApiResult<Response> {
    let op = caller(&headers)?;
    let resp = api.submit_monitoring_request(&op, &doc)?;
    Ok((StatusCode::ACCEPTED, Json(resp)).into_response())
}

async fn claim_status(
    State(api): State<Arc<ApiService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let op = caller(&headers)?;
    Ok(Json(api.get_claim_status(&op, &ClaimId::new(id))?).into_response())
}

async fn targets(State(api): State<Arc<ApiService>>) -> ApiResult<Response> {
    Ok(Json(api.list_targets()?).into_response())
}

async fn upload_probe(State(api): State<Arc<ApiService>>, Json(probe): Json<Probe>) -> ApiResult<Response> {
    let id = api.upload_probe(probe)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn list_probes(State(api): State<Arc<ApiService>>) -> Json<Vec<Probe>> {
    Json(api.list_probes())
}

#[derive(Debug, Deserialize)]
struct UnitFilter {
    /// `platform/platformId`
    target: Option<String>,
}

async fn list_units(State(api): State<Arc<ApiService>>, Query(filter): Query<UnitFilter>) -> ApiResult<Response> {
    let key = match filter.target.as_deref() {
        None => None,
        Some(raw) => Some(parse_target_key(raw)?),
    };
    let units: Vec<_> = api
        .list_units()
        .into_iter()
        .filter(|u| key.as_ref().is_none_or(|k| &u.target.key() == k))
        .collect();
    Ok(Json(units).into_response())
}

fn parse_target_key(raw: &str) -> ApiResult<TargetKey> {
    match raw.split_once('/') {
        Some((p, id)) if !p.is_empty() && !id.is_empty() => Ok(TargetKey::new(p, id)),
        _ => Err(HttpError::new(
            StatusCode::BAD_REQUEST,
            format!("target must be `platform/id`, got `{raw}`"),
        )),
    }
}

async fn unit(State(api): State<Arc<ApiService>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(api.get_unit(&UnitId::new(id))?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ResetBody {
    #[serde(rename = "unitId")]
    unit_id: Option<UnitId>,
}

async fn reset_tables(State(api): State<Arc<ApiService>>, body: Option<Json<ResetBody>>) -> ApiResult<Response> {
    let scope = match body.and_then(|Json(b)| b.unit_id) {
        Some(u) => ResetScope::Unit(u),
        None => ResetScope::All,
    };
    api.reset_error_tables(&scope)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn inject_fault(State(api): State<Arc<ApiService>>, Json(rule): Json<FaultRule>) -> ApiResult<Response> {
    api.inject_fault(rule)?;
    Ok(StatusCode::CREATED.into_response())
}

async fn reload(State(api): State<Arc<ApiService>>) -> ApiResult<Response> {
    api.reload_seed()?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Debug, Deserialize)]
struct EventQuery {
    #[serde(default)]
    since: u64,
    /// Long-poll budget when no event is newer than `since`.
    #[serde(rename = "waitMs", default)]
    wait_ms: u64,
}

async fn events(State(api): State<Arc<ApiService>>, Query(q): Query<EventQuery>) -> ApiResult<Response> {
    let wait = Duration::from_millis(q.wait_ms).min(MAX_EVENT_WAIT);
    let (events, last) = tokio::task::spawn_blocking(move || {
        let events = api.events_since(q.since, wait);
        (events, api.bus().last_seq())
    })
    .await
    .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(LAST_SEQ_HEADER, last.to_string())], Json(events)).into_response())
}
