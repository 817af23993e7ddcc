//! Blocking client for the public HTTP API.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

const LAST_SEQ_HEADER: &str = "x-maas-last-seq";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Aborted(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("rejected: {0}")]
    BadRequest(String),
    #[error("server error: {0}")]
    Server(String),
}

impl CliError {
    /// Process exit code for scripts.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Aborted(_) => 1,
            CliError::NotFound(_) => 2,
            CliError::Forbidden(_) => 3,
            CliError::Server(_) => 4,
            CliError::BadRequest(_) => 5,
            CliError::Usage(_) => 64,
        }
    }
}

impl From<reqwest::Error> for CliError {
    fn from(e: reqwest::Error) -> Self {
        CliError::Server(e.to_string())
    }
}

pub struct ApiClient {
    base: String,
    operator: Option<String>,
    http: Client,
}

impl ApiClient {
    pub fn new(base: &str, operator: Option<String>) -> Result<Self, CliError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| CliError::Server(e.to_string()))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_owned(),
            operator,
            http,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn operator(&self) -> Option<&str> {
        self.operator.as_deref()
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn with_operator(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.operator {
            Some(op) => req.header("X-Operator-Id", op),
            None => req,
        }
    }

    fn send(&self, req: RequestBuilder) -> Result<Response, CliError> {
        let resp = self.with_operator(req).send()?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        let msg = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v["error"].as_str().map(str::to_owned))
            .unwrap_or(if text.is_empty() { status.to_string() } else { text });
        Err(match status {
            StatusCode::NOT_FOUND => CliError::NotFound(msg),
            StatusCode::FORBIDDEN | StatusCode::UNAUTHORIZED => CliError::Forbidden(msg),
            s if s.is_client_error() => CliError::BadRequest(msg),
            _ => CliError::Server(msg),
        })
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, CliError> {
        let text = resp.text()?;
        serde_json::from_str(&text).map_err(|e| CliError::Server(format!("unexpected response: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        Self::decode(self.send(self.http.get(self.url(path)))?)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, CliError> {
        Self::decode(self.send(self.http.post(self.url(path)).json(body))?)
    }

    /// POST whose response carries no body of interest.
    pub fn post_empty<B: Serialize>(&self, path: &str, body: &B) -> Result<(), CliError> {
        self.send(self.http.post(self.url(path)).json(body)).map(drop)
    }

    /// Events after `since`, blocking server-side up to `wait`. Returns the
    /// events and the newest sequence number known to the server.
    pub fn events<T: DeserializeOwned>(&self, since: u64, wait: Duration) -> Result<(Vec<T>, u64), CliError> {
        let url = self.url(&format!("/api/v1/events?since={since}&waitMs={}", wait.as_millis()));
        let resp = self.send(self.http.get(url))?;
        let last = resp
            .headers()
            .get(LAST_SEQ_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .unwrap_or(since);
        Ok((Self::decode(resp)?, last))
    }

    /// Sequence number of the newest event.
    pub fn last_seq(&self) -> Result<u64, CliError> {
        let (_, last) = self.events::<Value>(u64::MAX, Duration::ZERO)?;
        Ok(last)
    }
}
