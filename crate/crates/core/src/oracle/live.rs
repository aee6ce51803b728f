use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{validate_response, Oracle, OracleError, OracleRequest, OracleResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSettings {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for TemplateSettings {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 0.7,
        }
    }
}

/// Where and how to reach a chat-completion style endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    /// Budget for one request across all attempts.
    pub timeout: Duration,
    pub backoff_base: Duration,
    pub determinism: bool,
    pub defaults: TemplateSettings,
    pub per_template: BTreeMap<String, TemplateSettings>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            auth_env: "ORACLE_AUTH_TOKEN".into(),
            max_attempts: 3,
            timeout: Duration::from_secs(10),
            backoff_base: Duration::from_millis(250),
            determinism: false,
            defaults: TemplateSettings::default(),
            per_template: BTreeMap::new(),
        }
    }
}

impl EndpointConfig {
    /// Reads `ORACLE_ENDPOINT` and `ORACLE_MODEL`; `None` when no endpoint is set.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var("ORACLE_ENDPOINT").ok()?;
        let mut cfg = Self {
            base_url,
            ..Self::default()
        };
        if let Ok(model) = std::env::var("ORACLE_MODEL") {
            cfg.model = model;
        }
        cfg.determinism = std::env::var("DETERMINISM").map(|v| v == "1").unwrap_or(false);
        Some(cfg)
    }

    pub fn settings_for(&self, template_id: &str) -> TemplateSettings {
        let mut s = self.per_template.get(template_id).cloned().unwrap_or_else(|| self.defaults.clone());
        if self.determinism {
            s.temperature = 0.0;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    Other(String),
}

/// Sends one JSON body and returns the raw response body.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, token: Option<&str>, body: &Value, timeout: Duration) -> Result<String, TransportFailure>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(&self, url: &str, token: Option<&str>, body: &Value, timeout: Duration) -> Result<String, TransportFailure> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut req = agent.post(url);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_to_string()
                .map_err(|e| TransportFailure::Other(e.to_string())),
            Err(ureq::Error::Timeout(_)) => Err(TransportFailure::Timeout),
            Err(e) => Err(TransportFailure::Other(e.to_string())),
        }
    }
}

/// Live model adapter: renders, posts, validates, retries with backoff.
///
/// A request that still fails after the last attempt surfaces the last
/// error. Nothing is ever fabricated.
pub struct LiveOracle {
    config: EndpointConfig,
    transport: Box<dyn Transport>,
}

impl LiveOracle {
    pub fn new(config: EndpointConfig, transport: Box<dyn Transport>) -> Self {
        Self { config, transport }
    }

    pub fn http(config: EndpointConfig) -> Self {
        Self::new(config, Box::new(UreqTransport))
    }

    fn extract_content(body: &str) -> Option<String> {
        let v: Value = serde_json::from_str(body).ok()?;
        v.pointer("/choices/0/message/content")
            .or_else(|| v.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .map(str::to_string)
    }
}

impl Oracle for LiveOracle {
    fn complete(&self, request: &OracleRequest, prompt: &str) -> Result<OracleResponse, OracleError> {
        let settings = self.config.settings_for(&request.template_id);
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": settings.max_tokens,
            "temperature": settings.temperature,
        });
        let token = std::env::var(&self.config.auth_env).ok();
        let started = Instant::now();
        let mut last_err = OracleError::Transport("no attempt made".into());
        for attempt in 0..self.config.max_attempts.max(1) {
            let remaining = match self.config.timeout.checked_sub(started.elapsed()) {
                Some(r) if !r.is_zero() => r,
                _ => return Err(OracleError::Timeout),
            };
            if attempt > 0 {
                let delay = self.config.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
                if delay >= remaining {
                    return Err(OracleError::Timeout);
                }
                std::thread::sleep(delay);
            }
            let remaining = match self.config.timeout.checked_sub(started.elapsed()) {
                Some(r) if !r.is_zero() => r,
                _ => return Err(OracleError::Timeout),
            };
            last_err = match self.transport.post(&self.config.base_url, token.as_deref(), &body, remaining) {
                Ok(raw) => match Self::extract_content(&raw) {
                    Some(text) => match validate_response(&request.template_id, &request.response_schema, &text) {
                        Ok(value) => {
                            return Ok(OracleResponse {
                                request_id: request.request_id,
                                text: text.trim().to_string(),
                                value,
                            })
                        }
                        Err(e) => e,
                    },
                    None => OracleError::SchemaViolation {
                        template_id: request.template_id.clone(),
                        detail: "response body has no message content".into(),
                    },
                },
                Err(TransportFailure::Timeout) => OracleError::Timeout,
                Err(TransportFailure::Other(msg)) => OracleError::Transport(msg),
            };
        }
        Err(last_err)
    }
}
