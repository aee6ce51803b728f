//! Player commands and interviews.
//!
//! A command is free text addressed to one NPC. The oracle splits it into
//! steps; every name in every step must resolve, or the whole command is
//! rejected. Interviews read an NPC's memories without changing them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::memory::{MemoryKind, ScoringWeights, SimTime};
use crate::agents::routine::{parse_clock, Location};
use crate::agents::Agent;
use crate::oracle::{slots, Embedder, OracleClient, ResponseSchema, SlotValues};

/// Length of a scheduled action when the command names no end time.
pub const DEFAULT_ACTION_MINUTES: u32 = 60;
/// Memories recalled per interview question.
pub const INTERVIEW_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("unknown npc `{0}`")]
    UnknownNpc(String),
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error("could not parse command: {0}")]
    UnparseableCommand(String),
    #[error("`{0}` is busy")]
    TargetBusy(String),
    #[error("interview session is closed")]
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Step {
    EngageConversation {
        targets: Vec<String>,
        intent: String,
    },
    ScheduleAction {
        day: u32,
        start: u32,
        end: u32,
        location: Location,
        activity: String,
    },
    ProposePlan {
        invitees: Vec<String>,
        day: Option<u32>,
        start: u32,
        end: u32,
        location: Location,
        activity: String,
    },
    CustomAction {
        activity: String,
        location: Option<Location>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPlan {
    pub command_id: String,
    pub issuer: String,
    pub target_npc: String,
    pub steps: Vec<Step>,
}

/// Names the player may use, all lower-case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Referents {
    pub npcs: BTreeMap<String, String>,
    pub places: BTreeMap<String, Location>,
    /// Home and workplace per npc id, for "home" and "work".
    pub homes: BTreeMap<String, (String, Option<String>)>,
}

impl Referents {
    pub fn add_npc(&mut self, npc_id: &str, aliases: &[String]) {
        self.npcs.insert(npc_id.to_lowercase(), npc_id.to_string());
        for a in aliases {
            self.npcs.insert(a.trim().to_lowercase(), npc_id.to_string());
        }
    }

    /// Case-insensitive exact match on an alias; no fuzzy matching.
    pub fn npc(&self, name: &str) -> Result<String, CommandError> {
        self.npcs
            .get(&name.trim().to_lowercase())
            .cloned()
            .ok_or_else(|| CommandError::UnknownNpc(name.to_string()))
    }

    pub fn place(&self, name: &str, for_npc: &str) -> Result<Location, CommandError> {
        let key = name.trim().to_lowercase();
        let (home, work) = self.homes.get(for_npc).cloned().unwrap_or_default();
        let relative = match key.as_str() {
            "home" => Some(home),
            "work" | "workplace" => work,
            _ => None,
        };
        if let Some(b) = relative.filter(|b| !b.is_empty()) {
            return Ok(Location::Building(b));
        }
        self.places
            .get(&key)
            .cloned()
            .ok_or_else(|| CommandError::UnknownLocation(name.to_string()))
    }
}

fn text_field<'a>(obj: &'a serde_json::Map<String, serde_json::Value>, key: &str) -> Option<&'a str> {
    obj.get(key).and_then(|v| v.as_str()).map(str::trim).filter(|s| !s.is_empty())
}

fn names_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<Vec<String>, CommandError> {
    let list = obj
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or_else(|| CommandError::UnparseableCommand(format!("missing `{key}`")))?;
    let names: Vec<String> = list.iter().filter_map(|v| v.as_str()).map(String::from).collect();
    if names.is_empty() || names.len() != list.len() {
        return Err(CommandError::UnparseableCommand(format!("bad `{key}`")));
    }
    Ok(names)
}

fn times(obj: &serde_json::Map<String, serde_json::Value>) -> Result<(u32, u32), CommandError> {
    let bad = |k: &str| CommandError::UnparseableCommand(format!("bad `{k}`"));
    let start = parse_clock(text_field(obj, "start").ok_or_else(|| bad("start"))?).ok_or_else(|| bad("start"))?;
    let end = match text_field(obj, "end") {
        Some(e) => parse_clock(e).ok_or_else(|| bad("end"))?,
        None => start + DEFAULT_ACTION_MINUTES,
    };
    if end <= start {
        return Err(bad("end"));
    }
    Ok((start, end))
}

fn day_offset(obj: &serde_json::Map<String, serde_json::Value>) -> Result<Option<u32>, CommandError> {
    match obj.get("day") {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .and_then(|d| u32::try_from(d).ok())
            .map(Some)
            .ok_or_else(|| CommandError::UnparseableCommand("bad `day`".into())),
    }
}

fn parse_step(obj: &serde_json::Map<String, serde_json::Value>, target: &str, refs: &Referents, today: u32) -> Result<Step, CommandError> {
    let kind = text_field(obj, "kind").ok_or_else(|| CommandError::UnparseableCommand("step without kind".into()))?;
    let activity = || {
        text_field(obj, "activity")
            .map(String::from)
            .ok_or_else(|| CommandError::UnparseableCommand("missing `activity`".into()))
    };
    let location = || {
        let name = text_field(obj, "location").ok_or_else(|| CommandError::UnparseableCommand("missing `location`".into()))?;
        refs.place(name, target)
    };
    let npcs = |key: &str| -> Result<Vec<String>, CommandError> {
        let mut ids = Vec::new();
        for n in names_field(obj, key)? {
            let id = refs.npc(&n)?;
            if id != target && !ids.contains(&id) {
                ids.push(id);
            }
        }
        if ids.is_empty() {
            return Err(CommandError::UnparseableCommand(format!("`{key}` names only the target")));
        }
        Ok(ids)
    };
    match kind {
        "engage_conversation" => Ok(Step::EngageConversation {
            targets: npcs("targets")?,
            intent: text_field(obj, "intent").unwrap_or("").to_string(),
        }),
        "schedule_action" => {
            let location = location()?;
            let (start, end) = times(obj)?;
            Ok(Step::ScheduleAction {
                day: today + day_offset(obj)?.unwrap_or(0),
                start,
                end,
                location,
                activity: activity()?,
            })
        }
        "propose_plan" => {
            let invitees = npcs("invitees")?;
            let location = location()?;
            let (start, end) = times(obj)?;
            Ok(Step::ProposePlan {
                invitees,
                day: day_offset(obj)?.map(|d| today + d),
                start,
                end,
                location,
                activity: activity()?,
            })
        }
        "custom_action" => Ok(Step::CustomAction {
            activity: activity()?,
            location: match text_field(obj, "location") {
                Some(name) => Some(refs.place(name, target)?),
                None => None,
            },
        }),
        other => Err(CommandError::UnparseableCommand(format!("unknown step kind `{other}`"))),
    }
}

/// The prompt slots for decomposing `text`; scripts key exact responses on these.
pub fn command_slots(target_id: &str, text: &str, refs: &Referents) -> SlotValues {
    let npc_names: Vec<&str> = refs.npcs.keys().map(String::as_str).collect();
    let places: Vec<&str> = refs.places.keys().map(String::as_str).collect();
    slots([
        ("target", target_id.to_string()),
        ("text", text.to_string()),
        ("npcs", npc_names.join(", ")),
        ("locations", places.join(", ")),
    ])
}

/// Splits `text` into validated steps for `target_npc`.
pub fn parse_command(
    command_id: &str,
    issuer: &str,
    target_npc: &str,
    text: &str,
    refs: &Referents,
    today: u32,
    oracle: &mut OracleClient,
) -> Result<CommandPlan, CommandError> {
    if text.trim().is_empty() {
        return Err(CommandError::UnparseableCommand("empty command".into()));
    }
    let target = refs.npc(target_npc)?;
    let resp = oracle
        .ask("parse_command", command_slots(&target, text, refs), ResponseSchema::JsonObject)
        .map_err(|e| CommandError::UnparseableCommand(e.to_string()))?;
    let steps = resp
        .as_json()
        .and_then(|m| m.get("steps"))
        .and_then(|s| s.as_array())
        .ok_or_else(|| CommandError::UnparseableCommand("no steps".into()))?;
    if steps.is_empty() {
        return Err(CommandError::UnparseableCommand("no steps".into()));
    }
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let obj = s.as_object().ok_or_else(|| CommandError::UnparseableCommand("step is not an object".into()))?;
        out.push(parse_step(obj, &target, refs, today)?);
    }
    Ok(CommandPlan {
        command_id: command_id.to_string(),
        issuer: issuer.to_string(),
        target_npc: target,
        steps: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remember {
    Undecided,
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewSession {
    pub session_id: String,
    pub npc_id: String,
    /// `(speaker, text)`; the player is "interviewer".
    pub transcript: Vec<(String, String)>,
    pub remember: Remember,
    pub closed: bool,
}

impl InterviewSession {
    pub fn open(session_id: &str, npc_id: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            npc_id: npc_id.to_string(),
            transcript: vec![],
            remember: Remember::Undecided,
            closed: false,
        }
    }

    fn transcript_text(&self, name: &str) -> String {
        self.transcript
            .iter()
            .map(|(who, t)| format!("{}: {t}", if who == "interviewer" { "Interviewer" } else { name }))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub const APOLOGY: &str = "I'm sorry, I can't put my thoughts together right now.";

/// Answers one question from the NPC's point of view. Memories are read
/// without touching their access times, so the NPC is left exactly as it
/// was. `oracle` should be a client dedicated to interviews.
pub fn interview(
    session: &mut InterviewSession,
    question: &str,
    agent: &Agent,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    weights: &ScoringWeights,
    now: SimTime,
) -> Result<String, CommandError> {
    if session.closed {
        return Err(CommandError::SessionClosed);
    }
    let memories = match embedder.embed(question) {
        Ok(q) => agent.memory.peek(&q, INTERVIEW_DEPTH, now, weights),
        Err(_) => vec![],
    };
    let recalled: Vec<&str> = memories.iter().map(|m| m.text.as_str()).collect();
    let name = agent.profile.full_name();
    let answer = oracle
        .ask(
            "interview_answer",
            slots([
                ("name", name.clone()),
                ("traits", agent.profile.traits_text()),
                ("lore", agent.profile.individual_lore.clone()),
                ("memories", recalled.join(" ")),
                ("transcript", session.transcript_text(&name)),
                ("question", question.to_string()),
            ]),
            ResponseSchema::FreeText,
        )
        .map(|r| r.as_text().trim().to_string())
        .ok()
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| APOLOGY.to_string());
    session.transcript.push(("interviewer".into(), question.to_string()));
    session.transcript.push((agent.profile.npc_id.clone(), answer.clone()));
    Ok(answer)
}

/// Closes the session. With `remember` the NPC keeps one summary memory;
/// without it nothing about the interview survives.
pub fn end_interview(
    session: &mut InterviewSession,
    remember: bool,
    agent: &mut Agent,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    now: SimTime,
) -> Result<Option<u64>, CommandError> {
    if session.closed {
        return Err(CommandError::SessionClosed);
    }
    session.closed = true;
    session.remember = if remember { Remember::Yes } else { Remember::No };
    if !remember {
        return Ok(None);
    }
    let name = agent.profile.full_name();
    let transcript = session.transcript_text(&name);
    let fallback = format!("I was interviewed by a stranger and answered {} questions.", session.transcript.len() / 2);
    let text = oracle
        .ask(
            "conversation_summary",
            slots([("npc", name), ("traits", agent.profile.traits_text()), ("transcript", transcript)]),
            ResponseSchema::FreeText,
        )
        .map(|r| r.as_text().trim().to_string())
        .ok()
        .filter(|t| !t.is_empty())
        .unwrap_or(fallback);
    let importance = MemoryKind::ConversationSummary.default_importance();
    let id = agent
        .memory
        .add(MemoryKind::ConversationSummary, &text, now, importance, embedder)
        .map_err(|e| CommandError::UnparseableCommand(e.to_string()))?;
    Ok(Some(id))
}
