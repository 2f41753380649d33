//! Chat-completion HTTP backend. The wire format is the de-facto open
//! protocol: `POST {model, messages, temperature, seed, max_tokens?}` with
//! bearer auth, answered by `{"choices": [{"message": {"content": ...}}]}`,
//! so any hosted or local model can serve as the rewriter.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, RewriteRequest, RewriteResult};
use crate::retry::RetryPolicy;

pub const DEFAULT_API_KEY_ENV: &str = "AUGMENT_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key; an empty name
    /// disables auth (local servers).
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Cap on concurrent in-flight requests across all worker threads.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_in_flight() -> usize {
    4
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

#[derive(Debug)]
pub struct HttpChatBackend {
    config: HttpChatConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl HttpChatBackend {
    pub fn connect(config: HttpChatConfig) -> Result<Self, BackendError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env) {
                Ok(key) => Some(key),
                Err(_) => {
                    return Err(BackendError::MissingApiKey {
                        name: config.api_key_env.clone(),
                    })
                }
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config {
                detail: e.to_string(),
            })?;
        let in_flight = Semaphore::new(config.max_in_flight.max(1));
        Ok(Self {
            config,
            api_key,
            client,
            in_flight,
        })
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    /// The request body is a pure function of the request; retries resend
    /// it unchanged.
    pub fn request_body(&self, req: &RewriteRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.prompt.system},
                {"role": "user", "content": req.prompt.user},
            ],
            "temperature": req.temperature,
            "seed": req.seed,
        });
        if let Some(max) = req.max_output_units {
            body["max_tokens"] = json!(max);
        }
        body
    }

    pub fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResult, BackendError> {
        let _permit = self.in_flight.acquire();
        let body = self.request_body(req);
        let started = Instant::now();
        let payload = self
            .config
            .retry
            .run(BackendError::is_retryable, || self.call(&body))?;
        let text = completion_text(&payload)?;
        Ok(RewriteResult {
            text,
            backend: format!("http-chat:{}", self.config.model),
            latency: started.elapsed(),
            raw: Some(payload),
        })
    }

    fn call(&self, body: &Value) -> Result<Value, BackendError> {
        let mut request = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transport {
            message: e.to_string(),
            retryable: e.is_timeout() || e.is_connect() || e.is_request(),
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                detail: truncated(response.text().unwrap_or_default()),
                retryable: true,
            });
        }
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                detail: truncated(response.text().unwrap_or_default()),
                retryable: false,
            });
        }
        response
            .json::<Value>()
            .map_err(|e| BackendError::BadPayload {
                detail: e.to_string(),
            })
    }
}

fn completion_text(payload: &Value) -> Result<String, BackendError> {
    let content = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::BadPayload {
            detail: "expected choices[0].message.content".into(),
        })?;
    if content.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(content.to_string())
}

fn truncated(mut s: String) -> String {
    const LIMIT: usize = 200;
    if s.len() > LIMIT {
        let mut cut = LIMIT;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("...");
    }
    s
}

/// Counting semaphore; `acquire` blocks while no permits remain.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Self {
            permits: Mutex::new(count),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.available.notify_one();
    }
}
