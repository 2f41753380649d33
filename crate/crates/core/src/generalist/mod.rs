//! The strong generalist: rewrite backends that turn a rendered prompt into
//! candidate text.
//!
//! Three backends exist: a chat-completion HTTP client for real models, a
//! constraint-respecting seeded mock, and a faulty seeded mock that deletes
//! and injects entities at calibrated rates. The mocks are pure functions
//! of their inputs, which makes whole pipeline runs reproducible byte for
//! byte.

mod http;
mod mock;

pub use http::{HttpChatBackend, HttpChatConfig, DEFAULT_API_KEY_ENV};
pub use mock::{mock_faulty_rewrite, mock_preserving_rewrite, synonym_vocabulary};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("api key environment variable {name} is not set")]
    MissingApiKey { name: String },
    #[error("invalid backend configuration: {detail}")]
    Config { detail: String },
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("backend returned status {status}: {detail}")]
    Status {
        status: u16,
        detail: String,
        retryable: bool,
    },
    #[error("malformed completion payload: {detail}")]
    BadPayload { detail: String },
    #[error("empty completion")]
    EmptyCompletion,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport {
                retryable: true,
                ..
            } | BackendError::Status {
                retryable: true,
                ..
            }
        )
    }
}

/// One rewrite attempt: the prompt plus decoding parameters. The seed is
/// fixed per attempt and recorded in the outputs.
#[derive(Clone, Debug)]
pub struct RewriteRequest {
    pub prompt: RenderedPrompt,
    pub seed: u64,
    pub temperature: f64,
    pub max_output_units: Option<u32>,
}

/// A candidate rewrite with provenance.
#[derive(Clone, Debug)]
pub struct RewriteResult {
    pub text: String,
    pub backend: String,
    pub latency: Duration,
    /// Raw provider payload, when the backend has one.
    pub raw: Option<serde_json::Value>,
}

/// Parameters for the faulty mock: delete `⌊p·k⌋` of the k distinct
/// constraint entities and inject `⌊q·k⌋` distractors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultyMockConfig {
    pub deletion_fraction: f64,
    pub injection_fraction: f64,
    #[serde(default)]
    pub distractors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    HttpChat(HttpChatConfig),
    MockPreserving,
    MockFaulty(FaultyMockConfig),
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            BackendConfig::HttpChat(cfg) => {
                if cfg.endpoint.is_empty() {
                    return Err(BackendError::Config {
                        detail: "http_chat backend needs an endpoint".into(),
                    });
                }
                if cfg.model.is_empty() {
                    return Err(BackendError::Config {
                        detail: "http_chat backend needs a model name".into(),
                    });
                }
                Ok(())
            }
            BackendConfig::MockPreserving => Ok(()),
            BackendConfig::MockFaulty(cfg) => {
                if !(0.0..=1.0).contains(&cfg.deletion_fraction) {
                    return Err(BackendError::Config {
                        detail: format!(
                            "deletion_fraction must be in [0, 1], got {}",
                            cfg.deletion_fraction
                        ),
                    });
                }
                if cfg.injection_fraction < 0.0 {
                    return Err(BackendError::Config {
                        detail: format!(
                            "injection_fraction must be >= 0, got {}",
                            cfg.injection_fraction
                        ),
                    });
                }
                Ok(())
            }
        }
    }

    /// Mocks are pure functions of their inputs.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BackendConfig::HttpChat(_))
    }
}

/// A ready-to-call rewrite backend.
pub enum Backend {
    Http(HttpChatBackend),
    MockPreserving,
    MockFaulty(FaultyMockConfig),
}

impl Backend {
    pub fn from_config(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        match config {
            BackendConfig::HttpChat(cfg) => Ok(Backend::Http(HttpChatBackend::connect(cfg)?)),
            BackendConfig::MockPreserving => Ok(Backend::MockPreserving),
            BackendConfig::MockFaulty(cfg) => Ok(Backend::MockFaulty(cfg)),
        }
    }

    /// Identifier recorded on every record and audit event.
    pub fn id(&self) -> String {
        match self {
            Backend::Http(backend) => format!("http-chat:{}", backend.model()),
            Backend::MockPreserving => "mock-preserving".into(),
            Backend::MockFaulty(cfg) => {
                format!(
                    "mock-faulty(p={},q={})",
                    cfg.deletion_fraction, cfg.injection_fraction
                )
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Backend::Http(_))
    }

    /// Produces a candidate rewrite for the request.
    pub fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResult, BackendError> {
        let started = Instant::now();
        let text = match self {
            Backend::Http(backend) => return backend.rewrite(req),
            Backend::MockPreserving => mock_preserving_rewrite(
                &req.prompt.source_text,
                &req.prompt.constraint_spans,
                req.seed,
            ),
            Backend::MockFaulty(cfg) => mock_faulty_rewrite(
                &req.prompt.source_text,
                &req.prompt.constraint_spans,
                req.seed,
                cfg.deletion_fraction,
                cfg.injection_fraction,
                &cfg.distractors,
            ),
        };
        if text.is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(RewriteResult {
            text,
            backend: self.id(),
            latency: started.elapsed(),
            raw: None,
        })
    }
}
