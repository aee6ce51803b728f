use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::memory::SimTime;
use crate::geom::Tile;
use crate::oracle::{slots, OracleClient, ResponseSchema};

pub const DEFAULT_PERCEPTION_RADIUS: u32 = 8;
pub const DEFAULT_COOLDOWN: SimTime = 30;
pub const DEFAULT_DEVIATION_THRESHOLD: f64 = 0.5;
/// Length of a deviation entry, in minutes.
pub const DEVIATION_MINUTES: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Burning,
    Conversation,
    Routine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrgencyTable {
    pub burning: f64,
    pub conversation: f64,
    pub routine: f64,
}

impl Default for UrgencyTable {
    fn default() -> Self {
        Self {
            burning: 0.9,
            conversation: 0.4,
            routine: 0.1,
        }
    }
}

impl UrgencyTable {
    pub fn urgency(&self, class: StateClass) -> f64 {
        match class {
            StateClass::Burning => self.burning,
            StateClass::Conversation => self.conversation,
            StateClass::Routine => self.routine,
        }
    }
}

/// Something in the world that can be seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceivable {
    pub id: String,
    pub position: Tile,
    pub state: String,
    pub class: StateClass,
    pub is_npc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub observer: String,
    pub subject: String,
    pub subject_state: String,
    pub subject_position: Tile,
    pub subject_is_npc: bool,
    pub distance: u32,
    pub urgency: f64,
    pub at: SimTime,
}

impl Observation {
    pub fn describe(&self, subject_name: &str) -> String {
        format!("I saw {subject_name} {}.", self.subject_state)
    }
}

/// When each subject/state pair was last reported to an observer, keyed by
/// [`seen_key`].
pub type SeenLog = BTreeMap<String, SimTime>;

pub fn seen_key(subject: &str, state: &str) -> String {
    format!("{subject}|{state}")
}

/// Everything within Chebyshev distance `radius` of `position`, minus the
/// observer itself. An observation identical to one reported less than
/// `cooldown` minutes ago is suppressed; `seen` is updated for the rest.
#[allow(clippy::too_many_arguments)]
pub fn perceive(
    observer: &str,
    position: Tile,
    radius: u32,
    world: &[Perceivable],
    urgency: &UrgencyTable,
    now: SimTime,
    cooldown: SimTime,
    seen: &mut SeenLog,
) -> Vec<Observation> {
    let mut out = Vec::new();
    for p in world {
        if p.id == observer {
            continue;
        }
        let distance = position.chebyshev(p.position);
        if distance > radius {
            continue;
        }
        let key = seen_key(&p.id, &p.state);
        if seen.get(&key).is_some_and(|&t| now - t < cooldown) {
            continue;
        }
        seen.insert(key, now);
        out.push(Observation {
            observer: observer.to_string(),
            subject: p.id.clone(),
            subject_state: p.state.clone(),
            subject_position: p.position,
            subject_is_npc: p.is_npc,
            distance,
            urgency: urgency.urgency(p.class),
            at: now,
        });
    }
    out
}

/// Forgets entries older than the cooldown so the log stays small.
pub fn prune_seen(seen: &mut SeenLog, now: SimTime, cooldown: SimTime) {
    seen.retain(|_, t| now - *t < cooldown);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reaction {
    Continue,
    Deviate(String),
    Converse(Vec<String>),
}

/// Decides what to do about an observation.
///
/// Below `threshold` the NPC carries on without asking the oracle. Above
/// it the oracle answers `continue`, `converse` or `deviate[: action]`;
/// anything else, or any failure, means carrying on.
pub fn react(
    name: &str,
    traits: &str,
    activity: &str,
    observation: &Observation,
    observation_text: &str,
    threshold: f64,
    oracle: &mut OracleClient,
) -> Reaction {
    if observation.urgency < threshold {
        return Reaction::Continue;
    }
    let request = slots([
        ("name", name),
        ("traits", traits),
        ("activity", activity),
        ("observation", observation_text),
    ]);
    let Ok(resp) = oracle.ask("react_decision", request, ResponseSchema::FreeText) else {
        return Reaction::Continue;
    };
    let text = resp.as_text().trim();
    let (head, arg) = match text.split_once(':') {
        Some((h, a)) => (h.trim(), a.trim()),
        None => (text, ""),
    };
    match head.to_lowercase().as_str() {
        "converse" if observation.subject_is_npc => Reaction::Converse(vec![observation.subject.clone()]),
        "deviate" if !arg.is_empty() => Reaction::Deviate(arg.to_string()),
        "deviate" => {
            let action = oracle
                .ask("deviation_action", slots([("name", name), ("observation", observation_text)]), ResponseSchema::FreeText)
                .map(|r| r.as_text().trim().to_string())
                .unwrap_or_default();
            if action.is_empty() {
                Reaction::Continue
            } else {
                Reaction::Deviate(action)
            }
        }
        _ => Reaction::Continue,
    }
}
