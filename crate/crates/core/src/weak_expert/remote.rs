//! JSON-over-HTTP client for an external NER service, for runs where a
//! trained extractor replaces the gazetteer.
//!
//! Protocol: `POST {"text": ...}` returning
//! `{"entities": [{"surface", "category", "start", "end"}, ...]}`.
//! Response spans are validated against the local text before use; a span
//! whose quoted surface does not sit at the claimed byte offsets is
//! rejected rather than silently re-anchored.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EntitySpan, ExtractError, Extractor};
use crate::retry::RetryPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteNerConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    30
}

pub struct RemoteNer {
    config: RemoteNerConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct NerRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct NerResponse {
    entities: Vec<EntitySpan>,
}

impl RemoteNer {
    pub fn connect(config: RemoteNerConfig) -> Result<Self, ExtractError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ExtractError::Service {
                message: e.to_string(),
                retryable: false,
            })?;
        Ok(Self { config, client })
    }

    /// Calls the service and validates the returned spans. Transport
    /// failures, timeouts, and 5xx responses are retried per the policy and
    /// surface as retryable errors once it is exhausted.
    pub fn extract(&self, text: &str) -> Result<Vec<EntitySpan>, ExtractError> {
        let response = self
            .config
            .retry
            .run(ExtractError::is_retryable, || self.call(text))?;
        validate_spans(text, response.entities)
    }

    fn call(&self, text: &str) -> Result<NerResponse, ExtractError> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(&NerRequest { text })
            .send()
            .map_err(|e| ExtractError::Service {
                message: e.to_string(),
                retryable: e.is_timeout() || e.is_connect() || e.is_request(),
            })?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ExtractError::Service {
                message: format!("service returned {status}"),
                retryable: true,
            });
        }
        if !status.is_success() {
            return Err(ExtractError::Service {
                message: format!("service returned {status}"),
                retryable: false,
            });
        }
        response
            .json::<NerResponse>()
            .map_err(|e| ExtractError::Service {
                message: format!("bad response body: {e}"),
                retryable: false,
            })
    }
}

impl Extractor for RemoteNer {
    fn extract_spans(&self, text: &str) -> Result<Vec<EntitySpan>, ExtractError> {
        self.extract(text)
    }
}

/// Enforces the span invariants on a service payload: offsets in range on
/// char boundaries, surface verbatim at the claimed offsets, spans sorted
/// and non-overlapping.
fn validate_spans(text: &str, mut spans: Vec<EntitySpan>) -> Result<Vec<EntitySpan>, ExtractError> {
    for span in &spans {
        if span.start >= span.end {
            return Err(ExtractError::InvalidSpan {
                detail: format!(
                    "span {}..{} ({:?}) is empty or inverted",
                    span.start, span.end, span.surface
                ),
            });
        }
        match text.get(span.start..span.end) {
            Some(slice) if slice == span.surface => {}
            _ => {
                return Err(ExtractError::InvalidSpan {
                    detail: format!(
                        "span {}..{} claims surface {:?} which does not match the text",
                        span.start, span.end, span.surface
                    ),
                });
            }
        }
    }
    spans.sort_by_key(|s| s.start);
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(ExtractError::InvalidSpan {
                detail: format!(
                    "span {}..{} ({:?}) overlaps span {}..{} ({:?})",
                    pair[1].start,
                    pair[1].end,
                    pair[1].surface,
                    pair[0].start,
                    pair[0].end,
                    pair[0].surface
                ),
            });
        }
    }
    Ok(spans)
}
