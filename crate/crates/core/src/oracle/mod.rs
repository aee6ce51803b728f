//! The single boundary through which every generated text or embedding flows.
//!
//! Callers never talk to a model directly. They render a catalog template with
//! slot values, send the resulting [`OracleRequest`] through an [`OracleClient`]
//! and receive a response that has already been validated against the
//! requested [`ResponseSchema`]. Responses are validated, never repaired; a
//! caller that wants to survive a bad answer implements its own fallback.

mod catalog;
mod embed;
mod live;
mod script;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use catalog::{PromptTemplate, TemplateCatalog};
pub use embed::{cosine, Embedder, EmbeddingVector, HashEmbedder, DEFAULT_EMBEDDING_DIM};
pub use live::{EndpointConfig, LiveOracle, TemplateSettings, Transport, TransportFailure, UreqTransport};
pub use script::{JournalOracle, ScriptEntry, ScriptLoadError, ScriptTable, ScriptedOracle, DEFAULT_KEY, SCRIPT_VERSION};

/// Maximum number of requests a batch keeps in flight at once.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no script entry for template `{template_id}` (slot hash {slot_hash}) and no default")]
    MissingScriptEntry { template_id: String, slot_hash: String },
    #[error("response for `{template_id}` violates its schema: {detail}")]
    SchemaViolation { template_id: String, detail: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("oracle request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template_id}` is missing slot `{slot}`")]
    MissingSlot { template_id: String, slot: String },
}

impl OracleError {
    pub fn is_schema_violation(&self) -> bool {
        matches!(self, OracleError::SchemaViolation { .. })
    }
}

/// The shape a response must have before it is handed back to a caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSchema {
    FreeText,
    JsonObject,
    Choice(Vec<String>),
    Score { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseValue {
    Text(String),
    Json(serde_json::Map<String, serde_json::Value>),
    Choice(String),
    Score(f64),
}

pub type SlotValues = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub request_id: u64,
    pub template_id: String,
    pub slot_values: SlotValues,
    pub response_schema: ResponseSchema,
}

impl OracleRequest {
    pub fn slot_hash(&self) -> String {
        slot_hash(&self.slot_values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub request_id: u64,
    pub text: String,
    pub value: ResponseValue,
}

impl OracleResponse {
    pub fn as_text(&self) -> &str {
        match &self.value {
            ResponseValue::Text(t) | ResponseValue::Choice(t) => t,
            _ => self.text.trim(),
        }
    }

    pub fn as_choice(&self) -> Option<&str> {
        match &self.value {
            ResponseValue::Choice(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_score(&self) -> Option<f64> {
        match self.value {
            ResponseValue::Score(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_json(&self) -> Option<&serde_json::Map<String, serde_json::Value>> {
        match &self.value {
            ResponseValue::Json(m) => Some(m),
            _ => None,
        }
    }
}

/// Order-insensitive stable hash of slot name/value pairs.
///
/// Pairs are hashed in sorted name order with NUL separators, so reordering
/// slots never changes the key. Returns the first 16 hex digits of SHA-256.
pub fn slot_hash(slots: &SlotValues) -> String {
    let mut hasher = Sha256::new();
    for (name, value) in slots {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(value.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn slots<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> SlotValues {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// Checks `text` against `schema`. Never rewrites the text beyond trimming.
pub fn validate_response(template_id: &str, schema: &ResponseSchema, text: &str) -> Result<ResponseValue, OracleError> {
    let violation = |detail: String| OracleError::SchemaViolation {
        template_id: template_id.to_string(),
        detail,
    };
    let trimmed = text.trim();
    match schema {
        ResponseSchema::FreeText => {
            if trimmed.is_empty() {
                Err(violation("empty text".into()))
            } else {
                Ok(ResponseValue::Text(trimmed.to_string()))
            }
        }
        ResponseSchema::JsonObject => match serde_json::from_str::<serde_json::Value>(trimmed) {
            Ok(serde_json::Value::Object(map)) => Ok(ResponseValue::Json(map)),
            Ok(_) => Err(violation("expected a JSON object".into())),
            Err(e) => Err(violation(format!("invalid JSON: {e}"))),
        },
        ResponseSchema::Choice(options) => options
            .iter()
            .find(|o| o.eq_ignore_ascii_case(trimmed))
            .map(|o| ResponseValue::Choice(o.clone()))
            .ok_or_else(|| violation(format!("`{trimmed}` is not one of {options:?}"))),
        ResponseSchema::Score { min, max } => {
            let v: f64 = trimmed
                .parse()
                .map_err(|_| violation(format!("`{trimmed}` is not a number")))?;
            if !v.is_finite() || v < *min || v > *max {
                return Err(violation(format!("{v} outside [{min}, {max}]")));
            }
            Ok(ResponseValue::Score(v))
        }
    }
}

/// A backend that turns rendered prompts into raw responses.
pub trait Oracle: Send + Sync {
    fn complete(&self, request: &OracleRequest, prompt: &str) -> Result<OracleResponse, OracleError>;
}

/// One line of the request journal. Enough to replay a run without the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub request_id: u64,
    pub template_id: String,
    pub slot_hash: String,
    /// `None` when the request failed.
    pub response: Option<String>,
}

/// Request counter plus the audit trail of everything asked so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleLedger {
    pub next_request_id: u64,
    pub journal: Vec<JournalEntry>,
}

/// A request waiting for an id, used by [`OracleClient::ask_batch`].
#[derive(Debug, Clone)]
pub struct PendingRequest {
    pub template_id: String,
    pub slots: SlotValues,
    pub schema: ResponseSchema,
}

impl PendingRequest {
    pub fn new(template_id: &str, slots: SlotValues, schema: ResponseSchema) -> Self {
        Self {
            template_id: template_id.to_string(),
            slots,
            schema,
        }
    }
}

/// Owns a backend, the template catalog and the request ledger.
pub struct OracleClient {
    backend: Box<dyn Oracle>,
    catalog: TemplateCatalog,
    ledger: OracleLedger,
    parallelism: usize,
}

impl OracleClient {
    pub fn new(backend: Box<dyn Oracle>) -> Self {
        Self {
            backend,
            catalog: TemplateCatalog::builtin(),
            ledger: OracleLedger::default(),
            parallelism: DEFAULT_PARALLELISM,
        }
    }

    pub fn scripted(table: ScriptTable) -> Self {
        Self::new(Box::new(ScriptedOracle::new(table)))
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn catalog(&self) -> &TemplateCatalog {
        &self.catalog
    }

    pub fn register_template(&mut self, template: PromptTemplate) {
        self.catalog.register(template);
    }

    pub fn ledger(&self) -> &OracleLedger {
        &self.ledger
    }

    pub fn set_ledger(&mut self, ledger: OracleLedger) {
        self.ledger = ledger;
    }

    fn prepare(&mut self, template_id: &str, slots: SlotValues, schema: ResponseSchema) -> Result<(OracleRequest, String), OracleError> {
        let template = self
            .catalog
            .get(template_id)
            .ok_or_else(|| OracleError::UnknownTemplate(template_id.to_string()))?;
        let prompt = template.render(&slots)?;
        let request = OracleRequest {
            request_id: self.ledger.next_request_id,
            template_id: template_id.to_string(),
            slot_values: slots,
            response_schema: schema,
        };
        self.ledger.next_request_id += 1;
        Ok((request, prompt))
    }

    fn record(&mut self, request: &OracleRequest, result: &Result<OracleResponse, OracleError>) {
        self.ledger.journal.push(JournalEntry {
            request_id: request.request_id,
            template_id: request.template_id.clone(),
            slot_hash: request.slot_hash(),
            response: result.as_ref().ok().map(|r| r.text.clone()),
        });
    }

    pub fn ask(&mut self, template_id: &str, slots: SlotValues, schema: ResponseSchema) -> Result<OracleResponse, OracleError> {
        let (request, prompt) = self.prepare(template_id, slots, schema)?;
        let result = self.backend.complete(&request, &prompt);
        self.record(&request, &result);
        result
    }

    /// Issues independent requests with bounded parallelism.
    ///
    /// Ids are assigned in input order and results come back in ascending
    /// request id order regardless of completion order.
    pub fn ask_batch(&mut self, pending: Vec<PendingRequest>) -> Vec<Result<OracleResponse, OracleError>> {
        let mut prepared = Vec::with_capacity(pending.len());
        for p in pending {
            prepared.push(self.prepare(&p.template_id, p.slots, p.schema));
        }
        let backend = self.backend.as_ref();
        let mut results: Vec<Option<Result<OracleResponse, OracleError>>> = vec![None; prepared.len()];
        for (chunk_index, chunk) in prepared.chunks(self.parallelism).enumerate() {
            let outputs: Vec<Result<OracleResponse, OracleError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|item| {
                        scope.spawn(move || match item {
                            Ok((request, prompt)) => backend.complete(request, prompt),
                            Err(e) => Err(e.clone()),
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(OracleError::Transport("oracle worker panicked".into()))))
                    .collect()
            });
            for (offset, out) in outputs.into_iter().enumerate() {
                results[chunk_index * self.parallelism + offset] = Some(out);
            }
        }
        let mut out = Vec::with_capacity(results.len());
        for (item, result) in prepared.iter().zip(results) {
            let result = result.expect("every batch slot is filled");
            if let Ok((request, _)) = item {
                self.record(request, &result);
            }
            out.push(result);
        }
        out
    }
}
