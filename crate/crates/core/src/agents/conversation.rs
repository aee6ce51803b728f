use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::memory::{MemoryEntry, MemoryKind, ScoringWeights, SimTime};
use super::plan::{Decision, Plan, PlanBook, PlanStatus, DEFAULT_PLAN_END, DEFAULT_PLAN_START};
use super::routine::{parse_clock, Location};
use super::Agents;
use crate::oracle::{slots, Embedder, OracleClient, OracleError, ResponseSchema};

pub const DEFAULT_CONVERSATION_RADIUS: u32 = 3;
pub const DEFAULT_MAX_TURNS: u32 = 12;
/// Memories each participant recalls when polled.
pub const POLL_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    OutlineGeneration,
    ProposalDetection,
    ProposalDecision,
    DialogueRefinement,
    Ended,
}

impl Phase {
    pub fn can_move_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (OutlineGeneration, ProposalDetection)
                | (ProposalDetection, ProposalDecision)
                | (ProposalDetection, DialogueRefinement)
                | (ProposalDecision, DialogueRefinement)
                | (DialogueRefinement, OutlineGeneration)
                | (DialogueRefinement, Ended)
        )
    }
}

/// Whether `history` is a walk on the phase graph starting at outline
/// generation.
pub fn is_valid_walk(history: &[Phase]) -> bool {
    history.first().is_none_or(|p| *p == Phase::OutlineGeneration) && history.windows(2).all(|w| w[0].can_move_to(w[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub conversation_id: String,
    pub participants: Vec<String>,
    pub phase: Phase,
    /// What the conversation is about; player intents land here.
    pub context: String,
    pub outline: String,
    pub transcript: Vec<Utterance>,
    /// Utterance drafted in proposal detection, appended in refinement.
    pub draft: Option<Utterance>,
    pub pending_proposal: Option<Plan>,
    pub turn_count: u32,
    pub max_turns: u32,
    pub history: Vec<Phase>,
    /// Things participants noticed since the last utterance.
    pub observations: Vec<String>,
    pub started_at: SimTime,
}

impl ConversationState {
    fn move_to(&mut self, next: Phase) {
        debug_assert!(self.phase.can_move_to(next), "{:?} -> {:?}", self.phase, next);
        self.phase = next;
        self.history.push(next);
    }

    pub fn transcript_text(&self, names: &BTreeMap<String, String>) -> String {
        self.transcript
            .iter()
            .map(|u| format!("{}: {}", names.get(&u.speaker).unwrap_or(&u.speaker), u.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn utterances_by(&self, npc: &str) -> usize {
        self.transcript.iter().filter(|u| u.speaker == npc).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversationError {
    #[error("`{0}` is out of conversation range")]
    OutOfRange(String),
    #[error("`{0}` is already in a conversation")]
    AlreadyInConversation(String),
    #[error("unknown npc `{0}`")]
    UnknownNpc(String),
    #[error("a conversation needs at least two participants")]
    TooFewParticipants,
    #[error("conversation has ended")]
    Ended,
}

/// Opens a conversation in outline generation. The outline itself is
/// written by the first step.
pub fn start_conversation(
    conversation_id: &str,
    initiator: &str,
    targets: &[String],
    context: &str,
    agents: &mut Agents,
    radius: u32,
    now: SimTime,
) -> Result<ConversationState, ConversationError> {
    let mut participants = vec![initiator.to_string()];
    for t in targets {
        if !participants.contains(t) {
            participants.push(t.clone());
        }
    }
    if participants.len() < 2 {
        return Err(ConversationError::TooFewParticipants);
    }
    let origin = agents
        .get(initiator)
        .ok_or_else(|| ConversationError::UnknownNpc(initiator.to_string()))?
        .profile
        .position;
    for p in &participants {
        let a = agents.get(p).ok_or_else(|| ConversationError::UnknownNpc(p.clone()))?;
        if a.conversation.is_some() {
            return Err(ConversationError::AlreadyInConversation(p.clone()));
        }
        if a.profile.position.chebyshev(origin) > radius {
            return Err(ConversationError::OutOfRange(p.clone()));
        }
    }
    for p in &participants {
        if let Some(a) = agents.get_mut(p) {
            a.conversation = Some(conversation_id.to_string());
        }
    }
    Ok(ConversationState {
        conversation_id: conversation_id.to_string(),
        participants,
        phase: Phase::OutlineGeneration,
        context: context.to_string(),
        outline: String::new(),
        transcript: vec![],
        draft: None,
        pending_proposal: None,
        turn_count: 0,
        max_turns: DEFAULT_MAX_TURNS,
        history: vec![Phase::OutlineGeneration],
        observations: vec![],
        started_at: now,
    })
}

/// Adds `joiner` to a running conversation; the transcript is kept.
pub fn join_conversation(state: &mut ConversationState, joiner: &str, agents: &mut Agents, radius: u32) -> Result<(), ConversationError> {
    if state.phase == Phase::Ended {
        return Err(ConversationError::Ended);
    }
    let a = agents.get(joiner).ok_or_else(|| ConversationError::UnknownNpc(joiner.to_string()))?;
    if a.conversation.is_some() {
        return Err(ConversationError::AlreadyInConversation(joiner.to_string()));
    }
    let near = state
        .participants
        .iter()
        .filter_map(|p| agents.get(p))
        .any(|p| p.profile.position.chebyshev(a.profile.position) <= radius);
    if !near {
        return Err(ConversationError::OutOfRange(joiner.to_string()));
    }
    state.participants.push(joiner.to_string());
    if let Some(a) = agents.get_mut(joiner) {
        a.conversation = Some(state.conversation_id.clone());
    }
    Ok(())
}

/// Everything a conversation step may touch.
pub struct ConversationEnv<'a> {
    pub agents: &'a mut Agents,
    pub oracle: &'a mut OracleClient,
    pub embedder: &'a dyn Embedder,
    pub plans: &'a mut PlanBook,
    /// Lower-case place names the NPCs can refer to.
    pub places: &'a BTreeMap<String, Location>,
    pub weights: ScoringWeights,
    pub now: SimTime,
    pub day: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConversationEvent {
    Utterance { conversation_id: String, speaker: String, text: String },
    PlanProposed { conversation_id: String, plan_id: String },
    PlanDecided { plan_id: String, npc: String, accepted: bool },
    Ended { conversation_id: String, participants: Vec<String> },
}

fn names(env: &ConversationEnv<'_>, ids: &[String]) -> BTreeMap<String, String> {
    ids.iter()
        .map(|id| (id.clone(), env.agents.get(id).map(|a| a.profile.full_name()).unwrap_or_else(|| id.clone())))
        .collect()
}

fn memories_text(ms: &[MemoryEntry]) -> String {
    ms.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Advances `state` by exactly one phase (or to `Ended` on failure).
pub fn conversation_step(state: &mut ConversationState, env: &mut ConversationEnv<'_>) -> Vec<ConversationEvent> {
    if state.phase == Phase::Ended {
        return vec![];
    }
    let mut events = vec![];
    let outcome = match state.phase {
        Phase::OutlineGeneration => outline_step(state, env),
        Phase::ProposalDetection => detection_step(state, env, &mut events),
        Phase::ProposalDecision => decision_step(state, env, &mut events),
        Phase::DialogueRefinement => refinement_step(state, env, &mut events),
        Phase::Ended => Ok(()),
    };
    if outcome.is_err() {
        // walk the shortest legal route to the end
        while state.phase != Phase::Ended {
            let next = match state.phase {
                Phase::OutlineGeneration => Phase::ProposalDetection,
                _ if state.phase == Phase::DialogueRefinement => Phase::Ended,
                _ => Phase::DialogueRefinement,
            };
            state.move_to(next);
        }
        state.draft = None;
        state.pending_proposal = None;
    }
    if state.phase == Phase::Ended {
        finish(state, env);
        events.push(ConversationEvent::Ended {
            conversation_id: state.conversation_id.clone(),
            participants: state.participants.clone(),
        });
    }
    events
}

fn outline_step(state: &mut ConversationState, env: &mut ConversationEnv<'_>) -> Result<(), OracleError> {
    let query = env.embedder.embed(&state.context)?;
    let mut recalled = Vec::new();
    for p in &state.participants {
        if let Some(a) = env.agents.get_mut(p) {
            recalled.extend(a.memory.retrieve(&query, 1, env.now, &env.weights));
        }
    }
    let n = names(env, &state.participants);
    let request = slots([
        ("participants", n.values().cloned().collect::<Vec<_>>().join(", ")),
        ("context", state.context.clone()),
        ("memories", memories_text(&recalled)),
        ("transcript", state.transcript_text(&n)),
    ]);
    let resp = env.oracle.ask("conversation_outline", request, ResponseSchema::FreeText)?;
    state.outline = resp.as_text().trim().to_string();
    state.move_to(Phase::ProposalDetection);
    Ok(())
}

/// Polls every participant: each recalls its top memories against the
/// latest context and the best single score wins the floor. Ties go to
/// whoever has spoken least, then to the lowest id.
pub fn poll_speaker(state: &ConversationState, env: &mut ConversationEnv<'_>) -> Result<(String, Vec<MemoryEntry>), OracleError> {
    let latest = state.transcript.last().map(|u| u.text.clone()).unwrap_or_else(|| state.context.clone());
    let query = env.embedder.embed(&latest)?;
    let mut best: Option<(f64, usize, String, Vec<MemoryEntry>)> = None;
    let mut sorted = state.participants.clone();
    sorted.sort();
    for p in sorted {
        let Some(a) = env.agents.get_mut(&p) else { continue };
        let top = a.memory.retrieve_scored(&query, POLL_DEPTH, env.now, &env.weights);
        let score = top.first().map_or(f64::NEG_INFINITY, |t| t.1);
        let spoken = state.utterances_by(&p);
        let better = match &best {
            None => true,
            Some((s, n, _, _)) => score > *s || (score == *s && spoken < *n),
        };
        if better {
            best = Some((score, spoken, p, top.into_iter().map(|t| t.0).collect()));
        }
    }
    let (_, _, speaker, memories) = best.expect("conversations have participants");
    Ok((speaker, memories))
}

fn detection_step(state: &mut ConversationState, env: &mut ConversationEnv<'_>, events: &mut Vec<ConversationEvent>) -> Result<(), OracleError> {
    let (speaker, memories) = poll_speaker(state, env)?;
    let n = names(env, &state.participants);
    let agent = &env.agents[&speaker];
    let request = slots([
        ("speaker", agent.profile.full_name()),
        ("traits", agent.profile.traits_text()),
        ("participants", n.values().cloned().collect::<Vec<_>>().join(", ")),
        ("outline", state.outline.clone()),
        ("memories", memories_text(&memories)),
        ("observations", state.observations.join(" ")),
        ("transcript", state.transcript_text(&n)),
    ]);
    let text = env.oracle.ask("conversation_utterance", request, ResponseSchema::FreeText)?.as_text().trim().to_string();
    state.observations.clear();
    state.draft = Some(Utterance {
        speaker: speaker.clone(),
        text: text.clone(),
        at: env.now,
    });

    let verdict = env.oracle.ask(
        "detect_proposal",
        slots([("speaker", n[&speaker].clone()), ("utterance", text.clone())]),
        ResponseSchema::Choice(vec!["yes".into(), "no".into()]),
    )?;
    let proposal = if verdict.as_choice() == Some("yes") {
        extract_plan(state, env, &speaker, &text)?
    } else {
        None
    };
    match proposal {
        Some(plan) => {
            events.push(ConversationEvent::PlanProposed {
                conversation_id: state.conversation_id.clone(),
                plan_id: plan.plan_id.clone(),
            });
            state.pending_proposal = Some(plan);
            state.move_to(Phase::ProposalDecision);
        }
        None => state.move_to(Phase::DialogueRefinement),
    }
    Ok(())
}

/// Turns a proposing utterance into a plan. A proposal whose place cannot
/// be resolved, or whose time makes no sense, is treated as small talk.
fn extract_plan(state: &ConversationState, env: &mut ConversationEnv<'_>, speaker: &str, text: &str) -> Result<Option<Plan>, OracleError> {
    let n = names(env, &state.participants);
    let mut places: Vec<&str> = env.places.keys().map(String::as_str).collect();
    places.sort();
    let request = slots([
        ("speaker", n[speaker].clone()),
        ("utterance", text.to_string()),
        ("participants", n.values().cloned().collect::<Vec<_>>().join(", ")),
        ("locations", places.join(", ")),
    ]);
    let resp = match env.oracle.ask("extract_plan", request, ResponseSchema::JsonObject) {
        Ok(r) => r,
        Err(e) if e.is_schema_violation() => return Ok(None),
        Err(e) => return Err(e),
    };
    let Some(obj) = resp.as_json() else { return Ok(None) };
    let get = |k: &str| obj.get(k).and_then(|v| v.as_str()).map(str::trim).filter(|s| !s.is_empty());
    let (Some(activity), Some(place)) = (get("activity"), get("location")) else {
        return Ok(None);
    };
    let Some(location) = env.places.get(&place.to_lowercase()).cloned() else {
        return Ok(None);
    };
    let start = get("start").map(parse_clock).unwrap_or(Some(DEFAULT_PLAN_START));
    let end = get("end").map(parse_clock).unwrap_or(Some(DEFAULT_PLAN_END));
    let (Some(start), Some(end)) = (start, end) else { return Ok(None) };
    if start >= end {
        return Ok(None);
    }
    let requested_day = obj.get("day").and_then(|v| v.as_u64()).map(|d| env.day + d as u32);
    let invitees: Vec<String> = state.participants.iter().filter(|p| *p != speaker).cloned().collect();
    Ok(Some(Plan {
        plan_id: env.plans.next_plan_id(),
        proposer: speaker.to_string(),
        decisions: invitees.iter().map(|i| (i.clone(), Decision::Pending)).collect(),
        invitees,
        requested_day,
        scheduled_day: None,
        start,
        end,
        location,
        activity: activity.to_string(),
        status: PlanStatus::Proposed,
        created_day: env.day,
    }))
}

/// Each invitee accepts or rejects the pending plan and remembers doing so.
pub fn decide_plan(plan: &mut Plan, env: &mut ConversationEnv<'_>, events: &mut Vec<ConversationEvent>) -> Result<(), OracleError> {
    let proposer = env.agents.get(&plan.proposer).map(|a| a.profile.full_name()).unwrap_or_else(|| plan.proposer.clone());
    for invitee in plan.invitees.clone() {
        let Some(agent) = env.agents.get_mut(&invitee) else { continue };
        let query = env.embedder.embed(&plan.activity)?;
        let memories = agent.memory.retrieve(&query, POLL_DEPTH, env.now, &env.weights);
        let request = slots([
            ("npc", agent.profile.full_name()),
            ("traits", agent.profile.traits_text()),
            ("memories", memories_text(&memories)),
            ("proposer", proposer.clone()),
            ("proposal", plan.activity.clone()),
        ]);
        let answer = env
            .oracle
            .ask("plan_decision", request, ResponseSchema::Choice(vec!["accept".into(), "reject".into()]))?;
        let accepted = answer.as_choice() == Some("accept");
        let text = if accepted {
            format!("I accepted {proposer}'s plan: {} at {}.", plan.activity, plan.location.label())
        } else {
            format!("I turned down {proposer}'s plan: {}.", plan.activity)
        };
        agent
            .memory
            .add(MemoryKind::PlanDecision, &text, env.now, MemoryKind::PlanDecision.default_importance(), env.embedder)?;
        plan.decisions
            .insert(invitee.clone(), if accepted { Decision::Accepted } else { Decision::Rejected });
        events.push(ConversationEvent::PlanDecided {
            plan_id: plan.plan_id.clone(),
            npc: invitee,
            accepted,
        });
    }
    Ok(())
}

fn decision_step(state: &mut ConversationState, env: &mut ConversationEnv<'_>, events: &mut Vec<ConversationEvent>) -> Result<(), OracleError> {
    let Some(mut plan) = state.pending_proposal.take() else {
        state.move_to(Phase::DialogueRefinement);
        return Ok(());
    };
    let result = decide_plan(&mut plan, env, events);
    if result.is_ok() {
        env.plans.file(plan);
        state.move_to(Phase::DialogueRefinement);
    }
    result
}

fn refinement_step(state: &mut ConversationState, env: &mut ConversationEnv<'_>, events: &mut Vec<ConversationEvent>) -> Result<(), OracleError> {
    if let Some(u) = state.draft.take() {
        events.push(ConversationEvent::Utterance {
            conversation_id: state.conversation_id.clone(),
            speaker: u.speaker.clone(),
            text: u.text.clone(),
        });
        state.transcript.push(u);
        state.turn_count += 1;
    }
    if state.turn_count >= state.max_turns {
        state.move_to(Phase::Ended);
        return Ok(());
    }
    let n = names(env, &state.participants);
    let verdict = env.oracle.ask(
        "conversation_continue",
        slots([("turn_count", state.turn_count.to_string()), ("transcript", state.transcript_text(&n))]),
        ResponseSchema::Choice(vec!["continue".into(), "end".into()]),
    );
    match verdict {
        Ok(v) if v.as_choice() == Some("continue") => state.move_to(Phase::OutlineGeneration),
        Ok(_) => state.move_to(Phase::Ended),
        Err(e) => {
            state.move_to(Phase::Ended);
            return Err(e);
        }
    }
    Ok(())
}

/// One first-person summary memory per participant.
fn finish(state: &ConversationState, env: &mut ConversationEnv<'_>) {
    let n = names(env, &state.participants);
    let transcript = state.transcript_text(&n);
    for p in &state.participants {
        let Some(agent) = env.agents.get(p) else { continue };
        let others: Vec<String> = state.participants.iter().filter(|q| *q != p).map(|q| n[q].clone()).collect();
        let fallback = format!("I talked with {} about {}.", others.join(" and "), state.context);
        let text = env
            .oracle
            .ask(
                "conversation_summary",
                slots([
                    ("npc", agent.profile.full_name()),
                    ("traits", agent.profile.traits_text()),
                    ("others", others.join(" and ")),
                    ("context", state.context.clone()),
                    ("transcript", transcript.clone()),
                ]),
                ResponseSchema::FreeText,
            )
            .map(|r| r.as_text().trim().to_string())
            .ok()
            .filter(|t| !t.is_empty())
            .unwrap_or(fallback.clone());
        let importance = MemoryKind::ConversationSummary.default_importance();
        let agent = env.agents.get_mut(p).expect("checked above");
        let stored = agent.memory.add(MemoryKind::ConversationSummary, &text, env.now, importance, env.embedder);
        if stored.is_err() {
            // the embedder rejects only empty text, which the fallback is not
            let _ = agent.memory.add(MemoryKind::ConversationSummary, &fallback, env.now, importance, env.embedder);
        }
        agent.conversation = None;
        agent.day_log.push(format!("talked with {}", others.join(" and ")));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Agent, MemoryStream};
    use crate::geom::Tile;
    use crate::oracle::{HashEmbedder, ScriptTable};
    use crate::population::{FamilyRole, NpcProfile};

    pub(crate) fn agent(id: &str, name: &str, x: i32) -> Agent {
        let profile = NpcProfile {
            npc_id: id.into(),
            name: name.into(),
            surname: "Test".into(),
            family_id: "family-00".into(),
            family_role: FamilyRole::Adult,
            individual_lore: String::new(),
            traits: vec!["kind".into()],
            work_role: Some("baker".into()),
            workplace: Some("building-02".into()),
            home: "building-01".into(),
            position: Tile::new(x, 0),
            evolution: vec![],
        };
        Agent::new(profile, MemoryStream::new(id), 360, 1320)
    }

    fn world(n: usize) -> Agents {
        ["npc-a", "npc-b", "npc-c"]
            .iter()
            .zip(["Anna", "Ben", "Cleo"])
            .take(n)
            .enumerate()
            .map(|(i, (id, name))| (id.to_string(), agent(id, name, i as i32)))
            .collect()
    }

    struct Rig {
        agents: Agents,
        oracle: OracleClient,
        embedder: HashEmbedder,
        plans: PlanBook,
        places: BTreeMap<String, Location>,
    }

    impl Rig {
        fn new(n: usize, script: ScriptTable) -> Self {
            Self {
                agents: world(n),
                oracle: OracleClient::scripted(script),
                embedder: HashEmbedder::default(),
                plans: PlanBook::default(),
                places: BTreeMap::from([("the hall".to_string(), Location::Building("building-00".into()))]),
            }
        }

        fn run(&mut self, state: &mut ConversationState) -> Vec<ConversationEvent> {
            let mut events = vec![];
            for t in 0..100 {
                let mut env = ConversationEnv {
                    agents: &mut self.agents,
                    oracle: &mut self.oracle,
                    embedder: &self.embedder,
                    plans: &mut self.plans,
                    places: &self.places,
                    weights: ScoringWeights::default(),
                    now: t,
                    day: 0,
                };
                let before = state.transcript.len();
                events.extend(conversation_step(state, &mut env));
                assert!(state.transcript.len() <= before + 1);
                if state.phase == Phase::Ended {
                    break;
                }
            }
            events
        }
    }

    #[test]
    fn range_and_busy_checks() {
        let mut agents = world(3);
        agents.get_mut("npc-c").unwrap().profile.position = Tile::new(10, 0);
        let r = start_conversation("c0", "npc-a", &["npc-c".into()], "x", &mut agents, 3, 0);
        assert_eq!(r, Err(ConversationError::OutOfRange("npc-c".into())));
        let mut s = start_conversation("c0", "npc-a", &["npc-b".into()], "x", &mut agents, 3, 0).unwrap();
        assert_eq!(s.phase, Phase::OutlineGeneration);
        assert_eq!(s.participants.len(), 2);
        let again = start_conversation("c1", "npc-b", &["npc-a".into()], "x", &mut agents, 3, 0);
        assert!(matches!(again, Err(ConversationError::AlreadyInConversation(_))));
        agents.get_mut("npc-c").unwrap().profile.position = Tile::new(2, 0);
        join_conversation(&mut s, "npc-c", &mut agents, 3).unwrap();
        assert_eq!(s.participants.len(), 3);
    }

    #[test]
    fn scripted_chat_without_proposals() {
        let mut s = ScriptTable::builtin_defaults();
        s.set_default("conversation_continue", "continue");
        let mut rig = Rig::new(2, s);
        let mut state = start_conversation("c0", "npc-a", &["npc-b".into()], "the harvest", &mut rig.agents, 3, 0).unwrap();
        state.max_turns = 4;
        let events = rig.run(&mut state);
        assert_eq!(state.phase, Phase::Ended);
        assert_eq!(state.turn_count, 4);
        assert!(is_valid_walk(&state.history));
        use Phase::*;
        assert_eq!(&state.history[..4], &[OutlineGeneration, ProposalDetection, DialogueRefinement, OutlineGeneration]);
        for a in rig.agents.values() {
            let n = a.memory.entries.iter().filter(|m| m.kind == MemoryKind::ConversationSummary).count();
            assert_eq!(n, 1);
            assert!(a.conversation.is_none());
        }
        assert_eq!(events.iter().filter(|e| matches!(e, ConversationEvent::Utterance { .. })).count(), 4);
    }

    #[test]
    fn accepted_proposal_enters_the_buffer() {
        let mut s = ScriptTable::builtin_defaults();
        s.set_default("detect_proposal", "yes");
        s.set_default("extract_plan", r#"{"activity": "cooking competition", "location": "The Hall", "start": "18:00", "end": "20:00"}"#);
        s.set_default("conversation_utterance", "Let's have a cooking competition!");
        let mut rig = Rig::new(3, s);
        let mut state =
            start_conversation("c0", "npc-a", &["npc-b".into(), "npc-c".into()], "food", &mut rig.agents, 3, 0).unwrap();
        rig.run(&mut state);
        assert!(is_valid_walk(&state.history));
        assert!(state.history.contains(&Phase::ProposalDecision));
        let plan = rig.plans.plans.values().next().unwrap();
        assert_eq!(plan.status, PlanStatus::Proposed);
        assert!(plan.decisions.values().all(|d| *d == Decision::Accepted));
        assert_eq!(plan.start, 1080);
        for inv in &plan.invitees {
            let n = rig.agents[inv].memory.entries.iter().filter(|m| m.kind == MemoryKind::PlanDecision).count();
            assert_eq!(n, 1);
        }
        assert!(rig.plans.buffer.contains(&plan.plan_id));
    }

    #[test]
    fn unknown_place_is_small_talk() {
        let mut s = ScriptTable::builtin_defaults();
        s.set_default("detect_proposal", "yes");
        s.set_default("extract_plan", r#"{"activity": "picnic", "location": "Crystal Lake"}"#);
        let mut rig = Rig::new(2, s);
        let mut state = start_conversation("c0", "npc-a", &["npc-b".into()], "x", &mut rig.agents, 3, 0).unwrap();
        rig.run(&mut state);
        assert!(!state.history.contains(&Phase::ProposalDecision));
        assert!(rig.plans.plans.is_empty());
    }

    #[test]
    fn failure_ends_gracefully_with_summaries() {
        // no utterance entry, so detection fails after the outline
        let mut table = ScriptTable::default();
        table.set_default("conversation_outline", "outline");
        table.set_default("conversation_summary", "We spoke.");
        let mut rig = Rig::new(2, table);
        let mut state = start_conversation("c0", "npc-a", &["npc-b".into()], "x", &mut rig.agents, 3, 0).unwrap();
        rig.run(&mut state);
        assert_eq!(state.phase, Phase::Ended);
        assert!(is_valid_walk(&state.history));
        assert!(state.transcript.is_empty());
        for a in rig.agents.values() {
            assert_eq!(a.memory.len(), 1);
            assert_eq!(a.memory.entries[0].text, "We spoke.");
        }
    }

    #[test]
    fn polling_picks_the_relevant_memory() {
        let mut rig = Rig::new(3, ScriptTable::builtin_defaults());
        let e = HashEmbedder::default();
        rig.agents
            .get_mut("npc-c")
            .unwrap()
            .memory
            .add(MemoryKind::Seed, "the harvest festival", 0, 0.5, &e)
            .unwrap();
        for id in ["npc-a", "npc-b"] {
            rig.agents.get_mut(id).unwrap().memory.add(MemoryKind::Seed, "a storm at sea", 0, 0.5, &e).unwrap();
        }
        let state = start_conversation("c0", "npc-a", &["npc-b".into(), "npc-c".into()], "the harvest festival", &mut rig.agents, 3, 0)
            .unwrap();
        let mut env = ConversationEnv {
            agents: &mut rig.agents,
            oracle: &mut rig.oracle,
            embedder: &rig.embedder,
            plans: &mut rig.plans,
            places: &rig.places,
            weights: ScoringWeights::default(),
            now: 0,
            day: 0,
        };
        assert_eq!(poll_speaker(&state, &mut env).unwrap().0, "npc-c");
    }

    #[test]
    fn polling_ties_favour_the_quiet() {
        let mut rig = Rig::new(2, ScriptTable::builtin_defaults());
        let mut state = start_conversation("c0", "npc-a", &["npc-b".into()], "x", &mut rig.agents, 3, 0).unwrap();
        let mut env = ConversationEnv {
            agents: &mut rig.agents,
            oracle: &mut rig.oracle,
            embedder: &rig.embedder,
            plans: &mut rig.plans,
            places: &rig.places,
            weights: ScoringWeights::default(),
            now: 0,
            day: 0,
        };
        // empty streams tie; lowest id first, then whoever spoke less
        assert_eq!(poll_speaker(&state, &mut env).unwrap().0, "npc-a");
        state.transcript.push(Utterance {
            speaker: "npc-a".into(),
            text: "hi".into(),
            at: 0,
        });
        assert_eq!(poll_speaker(&state, &mut env).unwrap().0, "npc-b");
    }

    #[test]
    fn transition_table() {
        use Phase::*;
        assert!(OutlineGeneration.can_move_to(ProposalDetection));
        assert!(!OutlineGeneration.can_move_to(Ended));
        assert!(!ProposalDecision.can_move_to(OutlineGeneration));
        assert!(is_valid_walk(&[OutlineGeneration, ProposalDetection, ProposalDecision, DialogueRefinement, Ended]));
        assert!(!is_valid_walk(&[ProposalDetection, DialogueRefinement]));
    }
}
