use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{slot_hash, validate_response, JournalEntry, Oracle, OracleError, OracleRequest, OracleResponse, SlotValues};

pub const SCRIPT_VERSION: u32 = 1;

/// Key marking the per-template fallback entry.
pub const DEFAULT_KEY: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template_id: String,
    /// An exact slot hash, or [`DEFAULT_KEY`].
    pub slot_hash: String,
    pub response: String,
}

/// Versioned lookup table backing the scripted oracle.
///
/// Responses may contain `${slot}` markers which are replaced by the request's
/// slot values before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTable {
    pub version: u32,
    pub entries: Vec<ScriptEntry>,
}

impl Default for ScriptTable {
    fn default() -> Self {
        Self {
            version: SCRIPT_VERSION,
            entries: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptLoadError {
    #[error("script io: {0}")]
    Io(#[from] std::io::Error),
    #[error("script json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported script version {0}")]
    Version(u32),
}

impl ScriptTable {
    pub fn from_json(text: &str) -> Result<Self, ScriptLoadError> {
        let table: ScriptTable = serde_json::from_str(text)?;
        if table.version != SCRIPT_VERSION {
            return Err(ScriptLoadError::Version(table.version));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptLoadError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script table serializes")
    }

    /// Scripts shipped with the crate. Every builtin template has a default.
    pub fn builtin_defaults() -> Self {
        Self::from_json(include_str!("../../data/default_script.json")).expect("bundled script is valid")
    }

    fn upsert(&mut self, template_id: &str, key: String, response: String) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.template_id == template_id && e.slot_hash == key) {
            e.response = response;
        } else {
            self.entries.push(ScriptEntry {
                template_id: template_id.to_string(),
                slot_hash: key,
                response,
            });
        }
    }

    pub fn set_default(&mut self, template_id: &str, response: impl Into<String>) {
        self.upsert(template_id, DEFAULT_KEY.to_string(), response.into());
    }

    pub fn set_exact(&mut self, template_id: &str, slots: &SlotValues, response: impl Into<String>) {
        self.upsert(template_id, slot_hash(slots), response.into());
    }

    /// Later entries override earlier entries under the same key.
    pub fn merge(&mut self, other: ScriptTable) {
        for e in other.entries {
            self.upsert(&e.template_id, e.slot_hash, e.response);
        }
    }

    pub fn lookup(&self, template_id: &str, hash: &str) -> Option<&str> {
        let mut fallback = None;
        for e in self.entries.iter().filter(|e| e.template_id == template_id) {
            if e.slot_hash == hash {
                return Some(&e.response);
            }
            if e.slot_hash == DEFAULT_KEY {
                fallback = Some(e.response.as_str());
            }
        }
        fallback
    }
}

fn substitute(text: &str, slots: &SlotValues) -> String {
    if !text.contains("${") {
        return text.to_string();
    }
    let mut out = text.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("${{{name}}}"), value);
    }
    out
}

/// Deterministic table-driven backend.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    table: ScriptTable,
}

impl ScriptedOracle {
    pub fn new(table: ScriptTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }
}

impl Oracle for ScriptedOracle {
    fn complete(&self, request: &OracleRequest, _prompt: &str) -> Result<OracleResponse, OracleError> {
        let hash = request.slot_hash();
        let raw = self
            .table
            .lookup(&request.template_id, &hash)
            .ok_or_else(|| OracleError::MissingScriptEntry {
                template_id: request.template_id.clone(),
                slot_hash: hash.clone(),
            })?;
        let text = substitute(raw, &request.slot_values);
        let value = validate_response(&request.template_id, &request.response_schema, &text)?;
        Ok(OracleResponse {
            request_id: request.request_id,
            text,
            value,
        })
    }
}

/// Replays responses recorded in an earlier run's journal.
///
/// Entries are matched by template id and slot hash and consumed in recorded
/// order; a key seen more often than recorded keeps returning its last answer.
pub struct JournalOracle {
    queues: Mutex<BTreeMap<(String, String), VecDeque<Option<String>>>>,
    last: Mutex<BTreeMap<(String, String), Option<String>>>,
}

impl JournalOracle {
    pub fn new(entries: impl IntoIterator<Item = JournalEntry>) -> Self {
        let mut queues: BTreeMap<(String, String), VecDeque<Option<String>>> = BTreeMap::new();
        for e in entries {
            queues.entry((e.template_id, e.slot_hash)).or_default().push_back(e.response);
        }
        Self {
            queues: Mutex::new(queues),
            last: Mutex::new(BTreeMap::new()),
        }
    }

    /// Reads newline-delimited journal entries.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<JournalEntry>)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }
}

impl Oracle for JournalOracle {
    fn complete(&self, request: &OracleRequest, _prompt: &str) -> Result<OracleResponse, OracleError> {
        let key = (request.template_id.clone(), request.slot_hash());
        let next = {
            let mut queues = self.queues.lock().expect("journal lock");
            queues.get_mut(&key).and_then(|q| q.pop_front())
        };
        let recorded = match next {
            Some(r) => {
                self.last.lock().expect("journal lock").insert(key.clone(), r.clone());
                r
            }
            None => self
                .last
                .lock()
                .expect("journal lock")
                .get(&key)
                .cloned()
                .ok_or_else(|| OracleError::MissingScriptEntry {
                    template_id: key.0.clone(),
                    slot_hash: key.1.clone(),
                })?,
        };
        let text = recorded.ok_or_else(|| OracleError::Transport("request failed in the recorded run".into()))?;
        let value = validate_response(&request.template_id, &request.response_schema, &text)?;
        Ok(OracleResponse {
            request_id: request.request_id,
            text,
            value,
        })
    }
}
