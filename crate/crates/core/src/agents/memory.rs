use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::oracle::{cosine, Embedder, EmbeddingVector, OracleError};

/// Simulation time in minutes since world start. Negative values predate
/// the simulation (seed memories).
pub type SimTime = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Seed,
    Observation,
    ConversationSummary,
    Reflection,
    PlanDecision,
}

impl MemoryKind {
    /// Importance used when nothing better is known.
    pub fn default_importance(self) -> f64 {
        match self {
            MemoryKind::Seed => 0.5,
            MemoryKind::Observation => 0.1,
            MemoryKind::ConversationSummary => 0.6,
            MemoryKind::Reflection => 0.8,
            MemoryKind::PlanDecision => 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub memory_id: u64,
    pub npc_id: String,
    pub kind: MemoryKind,
    pub text: String,
    pub created_at: SimTime,
    pub last_access: SimTime,
    pub importance: f64,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
    /// Recency multiplier per hour since last access.
    pub decay_per_hour: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            recency: 1.0,
            importance: 1.0,
            relevance: 1.0,
            decay_per_hour: 0.995,
        }
    }
}

pub fn score_memory(entry: &MemoryEntry, query: &EmbeddingVector, now: SimTime, w: &ScoringWeights) -> f64 {
    let hours = (now - entry.last_access).max(0) as f64 / 60.0;
    let recency = w.decay_per_hour.powf(hours);
    let relevance = (1.0 + cosine(query, &entry.embedding)) / 2.0;
    w.recency * recency + w.importance * entry.importance + w.relevance * relevance
}

/// Ranking order: higher score, then newer, then lower id.
pub fn rank_order(a: (f64, &MemoryEntry), b: (f64, &MemoryEntry)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.created_at.cmp(&a.1.created_at))
        .then_with(|| a.1.memory_id.cmp(&b.1.memory_id))
}

/// One NPC's memories in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStream {
    pub npc_id: String,
    pub entries: Vec<MemoryEntry>,
    pub next_id: u64,
}

impl MemoryStream {
    pub fn new(npc_id: &str) -> Self {
        Self {
            npc_id: npc_id.to_string(),
            entries: Vec::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, memory_id: u64) -> Option<&MemoryEntry> {
        self.entries.iter().find(|e| e.memory_id == memory_id)
    }

    pub fn add(&mut self, kind: MemoryKind, text: &str, now: SimTime, importance: f64, embedder: &dyn Embedder) -> Result<u64, OracleError> {
        let embedding = embedder.embed(text)?;
        Ok(self.push(kind, text, now, importance, embedding))
    }

    pub fn push(&mut self, kind: MemoryKind, text: &str, now: SimTime, importance: f64, embedding: EmbeddingVector) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(MemoryEntry {
            memory_id: id,
            npc_id: self.npc_id.clone(),
            kind,
            text: text.to_string(),
            created_at: now,
            last_access: now,
            importance: importance.clamp(0.0, 1.0),
            embedding,
        });
        id
    }

    /// Top-`k` indices by score without touching access times.
    pub fn rank(&self, query: &EmbeddingVector, k: usize, now: SimTime, w: &ScoringWeights) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, score_memory(e, query, now, w)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order((a.1, &self.entries[a.0]), (b.1, &self.entries[b.0]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
    }

    /// Top-`k` memories for `query`; their last access moves to `now`.
    pub fn retrieve(&mut self, query: &EmbeddingVector, k: usize, now: SimTime, w: &ScoringWeights) -> Vec<MemoryEntry> {
        let top = self.rank(query, k, now, w);
        top.into_iter()
            .map(|(i, _)| {
                let e = &mut self.entries[i];
                e.last_access = e.last_access.max(now);
                e.clone()
            })
            .collect()
    }

    /// [`retrieve`](Self::retrieve) with the scores attached.
    pub fn retrieve_scored(&mut self, query: &EmbeddingVector, k: usize, now: SimTime, w: &ScoringWeights) -> Vec<(MemoryEntry, f64)> {
        let top = self.rank(query, k, now, w);
        top.into_iter()
            .map(|(i, score)| {
                let e = &mut self.entries[i];
                e.last_access = e.last_access.max(now);
                (e.clone(), score)
            })
            .collect()
    }

    /// Like [`retrieve`](Self::retrieve) but leaves the stream untouched.
    pub fn peek(&self, query: &EmbeddingVector, k: usize, now: SimTime, w: &ScoringWeights) -> Vec<MemoryEntry> {
        self.rank(query, k, now, w)
            .into_iter()
            .map(|(i, _)| self.entries[i].clone())
            .collect()
    }

    pub fn best_score(&self, query: &EmbeddingVector, k: usize, now: SimTime, w: &ScoringWeights) -> Option<f64> {
        self.rank(query, k, now, w).first().map(|(_, s)| *s)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut last = None;
        for e in &self.entries {
            if e.last_access < e.created_at {
                return Err(format!("memory {} of {} was accessed before it was created", e.memory_id, self.npc_id));
            }
            if !(0.0..=1.0).contains(&e.importance) {
                return Err(format!("memory {} of {} has importance {}", e.memory_id, self.npc_id, e.importance));
            }
            if e.npc_id != self.npc_id || e.memory_id >= self.next_id || last.is_some_and(|l| e.memory_id <= l) {
                return Err(format!("memory ids of {} are inconsistent", self.npc_id));
            }
            last = Some(e.memory_id);
        }
        Ok(())
    }
}

/// Embeds `query_text` and retrieves from `stream`.
pub fn retrieve(
    stream: &mut MemoryStream,
    query_text: &str,
    k: usize,
    now: SimTime,
    embedder: &dyn Embedder,
    w: &ScoringWeights,
) -> Result<Vec<MemoryEntry>, OracleError> {
    let q = embedder.embed(query_text)?;
    Ok(stream.retrieve(&q, k.max(1), now, w))
}
