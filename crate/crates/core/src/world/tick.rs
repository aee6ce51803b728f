use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::generate::full_routine_context;
use super::{stream_rng, QueuedCommand, World};
use crate::agents::perception::{prune_seen, DEVIATION_MINUTES};
use crate::agents::reflect::complete_past_plans;
use crate::agents::{
    conversation_step, generate_routine, perceive, react, reflect, schedule_plan, start_conversation, Agent, ConversationEnv, ConversationEvent,
    Decision, EntrySource, Location, MemoryKind, Observation, Perceivable, Plan, PlanError, PlanStatus, Reaction, RoutineEntry, RoutineError,
    RoutineStore, SimTime, StateClass,
};
use crate::commands::{parse_command, CommandError, Step, DEFAULT_ACTION_MINUTES};
use crate::geom::Tile;
use crate::oracle::{slots, ResponseSchema};
use crate::population::{Relationship, RelationshipKind};
use crate::settlement::{astar, CostGrid};

/// The fixed phases of one tick, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickPhase {
    Commands,
    Movement,
    Perception,
    Reactions,
    Conversations,
    Scheduling,
    Rollover,
}

/// Outcome of one command step.
enum StepOutcome {
    Done(serde_json::Value),
    Busy(String),
}

fn conversation_event(e: &ConversationEvent, participants: &[String]) -> (&'static str, Vec<String>, serde_json::Value) {
    let payload = serde_json::to_value(e).unwrap_or_default();
    match e {
        ConversationEvent::Utterance { .. } => ("utterance", participants.to_vec(), payload),
        ConversationEvent::PlanProposed { .. } => ("plan_proposed", participants.to_vec(), payload),
        ConversationEvent::PlanDecided { npc, .. } => ("plan_decided", vec![npc.clone()], payload),
        ConversationEvent::Ended { .. } => ("conversation_ended", participants.to_vec(), payload),
    }
}

impl World {
    fn mark(&mut self, phase: TickPhase) {
        self.phase_trace.push(phase);
    }

    /// Advances the world by one tick.
    pub fn tick(&mut self) {
        self.phase_trace.clear();
        let now = self.state.now();
        let (day, minute) = (self.state.day(), self.state.minute());

        self.mark(TickPhase::Commands);
        self.drain_commands(now, day, minute);
        self.mark(TickPhase::Movement);
        self.move_agents(day, minute);
        self.mark(TickPhase::Perception);
        let urgent = self.perceive_all(now, day, minute);
        self.mark(TickPhase::Reactions);
        self.react_all(urgent, now, day, minute);
        self.mark(TickPhase::Conversations);
        self.step_conversations(now, day);
        self.mark(TickPhase::Scheduling);
        self.schedule_plans(day);
        let next = now + SimTime::from(self.state.clock.minutes_per_tick);
        let day_length = SimTime::from(self.state.spec.day_length);
        if next / day_length > now / day_length {
            self.mark(TickPhase::Rollover);
            self.rollover(now, day);
        }
        self.state.clock.tick += 1;
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.tick();
        }
    }

    // ---- commands ----

    fn drain_commands(&mut self, now: SimTime, day: u32, minute: u32) {
        if self.state.commands.is_empty() {
            return;
        }
        let queue = std::mem::take(&mut self.state.commands);
        let refs = self.state.referents();
        let mut blocked = BTreeSet::new();
        for mut cmd in queue {
            if blocked.contains(&cmd.target_npc) {
                self.state.commands.push_back(cmd);
                continue;
            }
            if cmd.plan.is_none() {
                match parse_command(&cmd.command_id, &cmd.issuer, &cmd.target_npc, &cmd.text, &refs, day, &mut self.oracle) {
                    Ok(plan) => {
                        if let Err(e) = self.check_lore(&plan.target_npc, &cmd.text) {
                            self.reject(&cmd, &e);
                            continue;
                        }
                        cmd.target_npc = plan.target_npc.clone();
                        self.emit(
                            "command_accepted",
                            vec![plan.target_npc.clone()],
                            json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "steps": plan.steps}),
                        );
                        cmd.plan = Some(plan);
                    }
                    Err(e) => {
                        self.reject(&cmd, &e);
                        continue;
                    }
                }
            }
            if blocked.contains(&cmd.target_npc) {
                self.state.commands.push_back(cmd);
                continue;
            }
            let mut requeue = false;
            while let Some(step) = cmd.plan.as_ref().and_then(|p| p.steps.first().cloned()) {
                match self.execute_step(&cmd, &step, now, day, minute) {
                    Ok(StepOutcome::Done(record)) => {
                        cmd.plan.as_mut().expect("checked").steps.remove(0);
                        cmd.waiting = false;
                        self.emit(
                            "command_step",
                            vec![cmd.target_npc.clone()],
                            json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "step": step, "result": record}),
                        );
                    }
                    Ok(StepOutcome::Busy(why)) => {
                        if now - cmd.submitted_at >= self.state.config.command_expiry {
                            self.emit(
                                "command_expired",
                                vec![cmd.target_npc.clone()],
                                json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "reason": why}),
                            );
                        } else {
                            if !cmd.waiting {
                                cmd.waiting = true;
                                self.emit(
                                    "command_queued",
                                    vec![cmd.target_npc.clone()],
                                    json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "reason": why}),
                                );
                            }
                            requeue = true;
                        }
                        break;
                    }
                    Err(e) => {
                        cmd.plan.as_mut().expect("checked").steps.remove(0);
                        self.emit(
                            "command_step_failed",
                            vec![cmd.target_npc.clone()],
                            json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "step": step, "error": e.to_string()}),
                        );
                    }
                }
            }
            if requeue {
                blocked.insert(cmd.target_npc.clone());
                self.state.commands.push_back(cmd);
            }
        }
    }

    fn reject(&mut self, cmd: &QueuedCommand, e: &CommandError) {
        let code = match e {
            CommandError::UnknownNpc(_) => "unknown_npc",
            CommandError::UnknownLocation(_) => "unknown_location",
            CommandError::UnparseableCommand(_) => "unparseable_command",
            CommandError::TargetBusy(_) => "target_busy",
            CommandError::SessionClosed => "session_closed",
        };
        self.emit(
            "command_rejected",
            vec![],
            json!({"command_id": cmd.command_id, "issuer": cmd.issuer, "code": code, "message": e.to_string()}),
        );
    }

    /// Refuses commands that contradict the NPC, when the world is set up
    /// to care.
    fn check_lore(&mut self, npc: &str, text: &str) -> Result<(), CommandError> {
        if self.state.config.allow_lore_contradictions {
            return Ok(());
        }
        let Some(a) = self.state.agents.get(npc) else { return Ok(()) };
        let verdict = self.oracle.ask(
            "command_consistency",
            slots([
                ("target", a.profile.full_name()),
                ("traits", a.profile.traits_text()),
                ("lore", a.profile.individual_lore.clone()),
                ("text", text.to_string()),
            ]),
            ResponseSchema::Choice(vec!["consistent".into(), "contradicts".into()]),
        );
        match verdict.ok().and_then(|v| v.as_choice().map(String::from)).as_deref() {
            Some("contradicts") => Err(CommandError::UnparseableCommand(format!("contradicts what {} would do", a.profile.full_name()))),
            _ => Ok(()),
        }
    }

    fn new_conversation_id(&mut self) -> String {
        let id = format!("conv-{:05}", self.state.counters.conversations);
        self.state.counters.conversations += 1;
        id
    }

    fn execute_step(&mut self, cmd: &QueuedCommand, step: &Step, now: SimTime, day: u32, minute: u32) -> Result<StepOutcome, CommandError> {
        let npc = cmd.target_npc.clone();
        let agent = self.state.agents.get(&npc).ok_or_else(|| CommandError::UnknownNpc(npc.clone()))?;
        let current = agent.current_entry(day, minute).cloned();
        let awake = agent.is_awake(minute);
        let sleep = agent.sleep;
        let position = agent.profile.position;
        let in_conversation = agent.conversation.is_some();
        let uninterruptible = current.as_ref().is_some_and(RoutineEntry::is_plan);
        let busy = |why: &str| Ok(StepOutcome::Busy(format!("{npc} {why}")));
        match step {
            Step::EngageConversation { targets, intent } => {
                if !awake {
                    return busy("is asleep");
                }
                if uninterruptible {
                    return busy("is keeping a plan");
                }
                if in_conversation {
                    return busy("is already talking");
                }
                for t in targets {
                    let other = self.state.agents.get(t).ok_or_else(|| CommandError::UnknownNpc(t.clone()))?;
                    if other.conversation.is_some() {
                        return busy(&format!("cannot reach {t}, who is talking"));
                    }
                    if !other.is_awake(minute) {
                        return busy(&format!("waits for {t} to wake up"));
                    }
                }
                let radius = self.state.config.conversation_radius;
                let far = targets
                    .iter()
                    .find(|t| self.state.agents[*t].profile.position.chebyshev(position) > radius)
                    .cloned();
                if let Some(t) = far {
                    // walk over first; the step stays queued until in range
                    let goal = self.state.agents[&t].profile.position;
                    let heading = current
                        .as_ref()
                        .is_some_and(|e| e.source == EntrySource::Command(cmd.command_id.clone()) && e.location == Location::Tile(goal));
                    if !heading && minute < sleep {
                        let entry = RoutineEntry::new(
                            minute,
                            (minute + DEVIATION_MINUTES).min(sleep),
                            Location::Tile(goal),
                            &format!("walking over to {}", self.state.npc_name(&t)),
                            EntrySource::Command(cmd.command_id.clone()),
                        );
                        let _ = self.state.agents.routine_mut(&npc, day).map(|r| r.insert_block(entry));
                    }
                    return busy(&format!("is on the way to {t}"));
                }
                let id = self.new_conversation_id();
                let mut conv = start_conversation(&id, &npc, targets, intent, &mut self.state.agents, radius, now)
                    .map_err(|e| CommandError::TargetBusy(e.to_string()))?;
                conv.max_turns = self.state.config.max_turns;
                let participants = conv.participants.clone();
                self.state.conversations.insert(id.clone(), conv);
                self.emit("conversation_started", participants.clone(), json!({"conversation_id": id, "participants": participants, "context": intent}));
                Ok(StepOutcome::Done(json!({"conversation_id": id})))
            }
            Step::ScheduleAction {
                day: on,
                start,
                end,
                location,
                activity,
            } => {
                let entry = RoutineEntry::new(*start, *end, location.clone(), activity, EntrySource::Command(cmd.command_id.clone()));
                let routine = self.state.agents.routine_mut(&npc, *on).ok_or_else(|| CommandError::UnknownNpc(npc.clone()))?;
                match routine.insert_block(entry) {
                    Ok(()) => Ok(StepOutcome::Done(json!({"day": on, "start": start, "end": end}))),
                    Err(RoutineError::PlanConflict { plan_id, .. }) => busy(&format!("has plan {plan_id} at that time")),
                    Err(e) => Err(CommandError::UnparseableCommand(e.to_string())),
                }
            }
            Step::ProposePlan {
                invitees,
                day: on,
                start,
                end,
                location,
                activity,
            } => {
                let plan_id = self.state.plans.next_plan_id();
                let mut plan = Plan {
                    plan_id: plan_id.clone(),
                    proposer: npc.clone(),
                    invitees: invitees.clone(),
                    decisions: invitees.iter().map(|i| (i.clone(), Decision::Pending)).collect(),
                    requested_day: *on,
                    scheduled_day: None,
                    start: *start,
                    end: *end,
                    location: location.clone(),
                    activity: activity.clone(),
                    status: PlanStatus::Proposed,
                    created_day: day,
                };
                let places = self.state.place_names();
                let mut decided = vec![];
                let result = {
                    let mut env = ConversationEnv {
                        agents: &mut self.state.agents,
                        oracle: &mut self.oracle,
                        embedder: self.embedder.as_ref(),
                        plans: &mut self.state.plans,
                        places: &places,
                        weights: self.state.config.weights,
                        now,
                        day,
                    };
                    crate::agents::conversation::decide_plan(&mut plan, &mut env, &mut decided)
                };
                for e in &decided {
                    let (kind, npcs, payload) = conversation_event(e, &plan.participants());
                    self.emit(kind, npcs, payload);
                }
                if let Err(e) = result {
                    plan.status = PlanStatus::Cancelled;
                    self.state.plans.plans.insert(plan_id.clone(), plan);
                    return Err(CommandError::UnparseableCommand(e.to_string()));
                }
                let decisions = plan.decisions.clone();
                self.state.plans.file(plan);
                let status = self.state.plans.plans[&plan_id].status;
                Ok(StepOutcome::Done(json!({"plan_id": plan_id, "decisions": decisions, "status": status})))
            }
            Step::CustomAction { activity, location } => {
                if !awake || minute >= sleep {
                    return busy("is asleep");
                }
                if uninterruptible {
                    return busy("is keeping a plan");
                }
                let loc = location.clone().unwrap_or(Location::Tile(position));
                let entry = RoutineEntry::new(
                    minute,
                    (minute + DEFAULT_ACTION_MINUTES).min(sleep),
                    loc.clone(),
                    activity,
                    EntrySource::Command(cmd.command_id.clone()),
                );
                let routine = self.state.agents.routine_mut(&npc, day).ok_or_else(|| CommandError::UnknownNpc(npc.clone()))?;
                match routine.insert_block(entry) {
                    Ok(()) => {
                        if let Some(a) = self.state.agents.get_mut(&npc) {
                            a.day_log.push(format!("was moved to {activity}"));
                        }
                        Ok(StepOutcome::Done(json!({"activity": activity, "location": loc})))
                    }
                    Err(RoutineError::PlanConflict { plan_id, .. }) => busy(&format!("has plan {plan_id} now")),
                    Err(e) => Err(CommandError::UnparseableCommand(e.to_string())),
                }
            }
        }
    }

    // ---- movement ----

    fn movement_grid(&mut self) -> &CostGrid {
        if self.movement.is_none() {
            let mut grid = CostGrid::from_terrain(&self.state.terrain);
            for b in &self.state.settlement.buildings {
                grid.block(&b.rect());
            }
            self.movement = Some(grid);
        }
        self.movement.as_ref().expect("just built")
    }

    fn target_tile(&self, agent: &Agent, day: u32, minute: u32) -> Tile {
        let home = self.state.settlement.get(&agent.profile.home).map_or(agent.profile.position, |b| b.entrance);
        if !agent.is_awake(minute) {
            return home;
        }
        agent
            .current_entry(day, minute)
            .and_then(|e| self.state.location_tile(&e.location))
            .unwrap_or(home)
    }

    fn move_agents(&mut self, day: u32, minute: u32) {
        let ids: Vec<String> = self.state.agents.keys().cloned().collect();
        for id in ids {
            let agent = &self.state.agents[&id];
            if agent.conversation.is_some() {
                continue;
            }
            let target = self.target_tile(agent, day, minute);
            let position = agent.profile.position;
            if position == target {
                let a = self.state.agents.get_mut(&id).expect("listed");
                a.path.clear();
                a.path_target = Some(target);
                continue;
            }
            if agent.path_target != Some(target) || agent.path.first().is_some_and(|t| t.chebyshev(position) > 1) {
                let path = astar(self.movement_grid(), position, target).map(|p| p.tiles).unwrap_or_default();
                let a = self.state.agents.get_mut(&id).expect("listed");
                a.path = path.into_iter().skip_while(|t| *t == position).collect();
                a.path_target = Some(target);
            }
            let a = self.state.agents.get_mut(&id).expect("listed");
            if !a.path.is_empty() {
                a.profile.position = a.path.remove(0);
            }
        }
    }

    // ---- perception and reactions ----

    fn perceivables(&self, day: u32, minute: u32) -> Vec<Perceivable> {
        let mut out = Vec::new();
        for (id, a) in &self.state.agents {
            let (state, class) = if let Some(c) = a.conversation.as_ref().and_then(|c| self.state.conversations.get(c)) {
                let others: Vec<String> = c.participants.iter().filter(|p| *p != id).map(|p| self.state.npc_name(p)).collect();
                (format!("talking with {}", others.join(" and ")), StateClass::Conversation)
            } else if !a.is_awake(minute) {
                ("sleeping".to_string(), StateClass::Routine)
            } else {
                let activity = a.current_entry(day, minute).map_or("idle", |e| e.activity.as_str());
                (format!("busy with {activity}"), StateClass::Routine)
            };
            out.push(Perceivable {
                id: id.clone(),
                position: a.profile.position,
                state,
                class,
                is_npc: true,
            });
        }
        for (id, o) in &self.state.object_states {
            out.push(Perceivable {
                id: id.clone(),
                position: o.position,
                state: o.state.clone(),
                class: o.class,
                is_npc: false,
            });
        }
        out
    }

    fn subject_name(&self, id: &str) -> String {
        if let Some(a) = self.state.agents.get(id) {
            return a.profile.full_name();
        }
        for interior in &self.state.interiors {
            if let Some(f) = interior.furniture.iter().find(|f| f.id == id) {
                return format!("the {}", f.description);
            }
        }
        if let Some(f) = self.state.flora.iter().find(|f| f.id == id) {
            return format!("the {}", f.descriptor);
        }
        if let Some(b) = self.state.settlement.get(id) {
            return b.name().to_string();
        }
        id.to_string()
    }

    /// Records what every awake NPC notices and returns, per NPC, the most
    /// urgent observation worth reacting to.
    fn perceive_all(&mut self, now: SimTime, day: u32, minute: u32) -> BTreeMap<String, (Observation, String)> {
        let world = self.perceivables(day, minute);
        let cfg = self.state.config.clone();
        let ids: Vec<String> = self.state.agents.keys().cloned().collect();
        let mut urgent = BTreeMap::new();
        for id in ids {
            let agent = self.state.agents.get_mut(&id).expect("listed");
            prune_seen(&mut agent.seen, now, cfg.perception_cooldown);
            if !agent.is_awake(minute) {
                continue;
            }
            let observations = perceive(&id, agent.profile.position, cfg.perception_radius, &world, &cfg.urgency, now, cfg.perception_cooldown, &mut agent.seen);
            for obs in observations {
                let text = obs.describe(&self.subject_name(&obs.subject));
                let agent = self.state.agents.get_mut(&id).expect("listed");
                let news = agent.last_states.get(&obs.subject) != Some(&obs.subject_state);
                let pressing = obs.urgency >= cfg.deviation_threshold;
                if news || pressing {
                    agent.last_states.insert(obs.subject.clone(), obs.subject_state.clone());
                    let _ = agent.memory.add(MemoryKind::Observation, &text, now, obs.urgency, self.embedder.as_ref());
                }
                if pressing {
                    agent.day_log.push(text.trim_end_matches('.').replacen("I saw", "saw", 1));
                }
                if let Some(conv) = agent.conversation.clone() {
                    if let Some(c) = self.state.conversations.get_mut(&conv) {
                        c.observations.push(text.clone());
                    }
                }
                if pressing && urgent.get(&id).is_none_or(|(o, _): &(Observation, String)| o.urgency < obs.urgency) {
                    urgent.insert(id.clone(), (obs, text));
                }
            }
        }
        urgent
    }

    fn react_all(&mut self, urgent: BTreeMap<String, (Observation, String)>, now: SimTime, day: u32, minute: u32) {
        let threshold = self.state.config.deviation_threshold;
        for (id, (obs, text)) in urgent {
            let agent = &self.state.agents[&id];
            if agent.conversation.is_some() {
                continue;
            }
            let current = agent.current_entry(day, minute);
            if current.is_some_and(RoutineEntry::is_plan) {
                continue;
            }
            let activity = current.map_or("idle".to_string(), |e| e.activity.clone());
            let (name, traits, sleep) = (agent.profile.full_name(), agent.profile.traits_text(), agent.sleep);
            match react(&name, &traits, &activity, &obs, &text, threshold, &mut self.oracle) {
                Reaction::Continue => {}
                Reaction::Deviate(action) => {
                    if minute >= sleep {
                        continue;
                    }
                    let entry = RoutineEntry::new(
                        minute,
                        (minute + DEVIATION_MINUTES).min(sleep),
                        Location::Tile(obs.subject_position),
                        &action,
                        EntrySource::Deviation,
                    );
                    let ok = self.state.agents.routine_mut(&id, day).is_some_and(|r| r.insert_block(entry).is_ok());
                    if ok {
                        if let Some(a) = self.state.agents.get_mut(&id) {
                            a.day_log.push(format!("dropped {activity} to {action}"));
                        }
                        self.emit("deviation", vec![id.clone()], json!({"npc": id, "action": action, "because": text}));
                    }
                }
                Reaction::Converse(targets) => {
                    let conv_id = self.new_conversation_id();
                    let radius = self.state.config.conversation_radius;
                    if let Ok(mut conv) = start_conversation(&conv_id, &id, &targets, &text, &mut self.state.agents, radius, now) {
                        conv.max_turns = self.state.config.max_turns;
                        let participants = conv.participants.clone();
                        self.state.conversations.insert(conv_id.clone(), conv);
                        self.emit(
                            "conversation_started",
                            participants.clone(),
                            json!({"conversation_id": conv_id, "participants": participants, "context": text}),
                        );
                    }
                }
            }
        }
        self.spontaneous_chats(now, day, minute);
    }

    /// Idle neighbours occasionally start talking on their own.
    fn spontaneous_chats(&mut self, now: SimTime, day: u32, minute: u32) {
        let cfg = &self.state.config;
        if cfg.chat_chance <= 0.0 {
            return;
        }
        let (chance, cooldown, radius, max_turns) = (cfg.chat_chance, cfg.chat_cooldown, cfg.conversation_radius, cfg.max_turns);
        let available = |a: &Agent| {
            a.conversation.is_none()
                && a.is_awake(minute)
                && a.path.is_empty()
                && a.last_chat.is_none_or(|t| now - t >= cooldown)
                && !a.current_entry(day, minute).is_some_and(RoutineEntry::is_plan)
        };
        let mut rng = stream_rng(self.state.spec.seed, "chat", self.state.clock.tick);
        let ids: Vec<String> = self.state.agents.keys().cloned().collect();
        for id in ids {
            let a = &self.state.agents[&id];
            if !available(a) {
                continue;
            }
            let partner = self
                .state
                .agents
                .iter()
                .find(|(o, b)| **o != id && available(b) && b.profile.position.chebyshev(a.profile.position) <= radius)
                .map(|(o, _)| o.clone());
            let Some(partner) = partner else { continue };
            if rng.random::<f64>() >= chance {
                continue;
            }
            let place = self
                .state
                .settlement
                .buildings
                .iter()
                .min_by_key(|b| b.entrance.chebyshev(a.profile.position))
                .map_or_else(|| "the road".to_string(), |b| b.name().to_string());
            let context = format!("a chance meeting near {place}");
            let conv_id = self.new_conversation_id();
            if let Ok(mut conv) = start_conversation(&conv_id, &id, std::slice::from_ref(&partner), &context, &mut self.state.agents, radius, now) {
                conv.max_turns = max_turns;
                let participants = conv.participants.clone();
                self.state.conversations.insert(conv_id.clone(), conv);
                self.emit(
                    "conversation_started",
                    participants.clone(),
                    json!({"conversation_id": conv_id, "participants": participants, "context": context}),
                );
            }
        }
    }

    // ---- conversations and plans ----

    fn step_conversations(&mut self, now: SimTime, day: u32) {
        if self.state.conversations.is_empty() {
            return;
        }
        let places = self.state.place_names();
        let ids: Vec<String> = self.state.conversations.keys().cloned().collect();
        for id in ids {
            let mut conv = self.state.conversations.remove(&id).expect("listed");
            let events = {
                let mut env = ConversationEnv {
                    agents: &mut self.state.agents,
                    oracle: &mut self.oracle,
                    embedder: self.embedder.as_ref(),
                    plans: &mut self.state.plans,
                    places: &places,
                    weights: self.state.config.weights,
                    now,
                    day,
                };
                conversation_step(&mut conv, &mut env)
            };
            for e in &events {
                let (kind, npcs, payload) = conversation_event(e, &conv.participants);
                self.emit(kind, npcs, payload);
            }
            if conv.phase == crate::agents::Phase::Ended {
                for p in &conv.participants {
                    if let Some(a) = self.state.agents.get_mut(p) {
                        a.last_chat = Some(now);
                    }
                }
                self.link_participants(&conv.participants, &conv.context);
                self.state.finished_conversations.push(conv);
            } else {
                self.state.conversations.insert(id, conv);
            }
        }
    }

    /// Strangers who talked now know each other.
    fn link_participants(&mut self, participants: &[String], context: &str) {
        let known: BTreeSet<(String, String)> = self.state.relationships.iter().map(|r| (r.a.clone(), r.b.clone())).collect();
        for (i, a) in participants.iter().enumerate() {
            for b in &participants[i + 1..] {
                let r = Relationship::new(a, b, RelationshipKind::Emergent, context);
                if !known.contains(&(r.a.clone(), r.b.clone())) {
                    self.state.relationships.push(r);
                }
            }
        }
    }

    fn schedule_plans(&mut self, day: u32) {
        let horizon = self.state.config.plan_horizon;
        let pending: Vec<String> = self
            .state
            .plans
            .plans
            .values()
            .filter(|p| p.status == PlanStatus::Proposed)
            .map(|p| p.plan_id.clone())
            .collect();
        for plan_id in pending {
            let book = &mut self.state.plans;
            let plan = book.plans.get_mut(&plan_id).expect("listed");
            let outcome = schedule_plan(plan, &mut self.state.agents, &mut book.buffer, day, horizon);
            let participants = plan.participants();
            match outcome {
                Ok(Some(d)) => {
                    for p in &participants {
                        if let Some(a) = self.state.agents.get_mut(p) {
                            a.day_log.push(format!("agreed to {} on day {d}", plan.activity));
                        }
                    }
                    self.emit("plan_scheduled", participants, json!({"plan_id": plan_id, "day": d}));
                }
                Ok(None) => self.emit("plan_cancelled", participants, json!({"plan_id": plan_id})),
                Err(PlanError::NoFeasibleDay(_)) => {}
                Err(PlanError::UnknownParticipant(p)) => {
                    plan.status = PlanStatus::Cancelled;
                    book.buffer.remove_plan(&plan_id);
                    self.emit("plan_cancelled", participants, json!({"plan_id": plan_id, "unknown": p}));
                }
            }
        }
    }

    // ---- day rollover ----

    fn rollover(&mut self, now: SimTime, day: u32) {
        let ids: Vec<String> = self.state.agents.keys().cloned().collect();
        for id in &ids {
            let outcome = reflect(id, day, &mut self.state.agents, &mut self.state.plans, &mut self.oracle, self.embedder.as_ref(), now);
            if let Ok(Some(o)) = outcome {
                self.emit("reflection", vec![id.clone()], serde_json::to_value(&o).unwrap_or_default());
                for plan_id in &o.withdrawn {
                    let participants = self.state.plans.plans.get(plan_id).map(|p| p.participants()).unwrap_or_default();
                    self.emit("plan_withdrawn", participants, json!({"plan_id": plan_id, "npc": id}));
                }
            }
        }
        complete_past_plans(&mut self.state.plans, day);
        let next = day + 1;
        for id in &ids {
            let Some(ctx) = full_routine_context(&self.state, id) else { continue };
            let mut fresh = generate_routine(&ctx, next, &mut self.oracle);
            let agent = self.state.agents.get_mut(id).expect("listed");
            if let Some(booked) = agent.routines.remove(&next) {
                // plans and commands booked ahead survive the regeneration
                for e in booked.entries.into_iter().filter(|e| !matches!(e.source, EntrySource::Generated | EntrySource::Deviation)) {
                    let _ = fresh.insert_block(e);
                }
            }
            agent.routines.insert(next, fresh);
            agent.routines.retain(|d, _| *d >= day);
        }
    }
}
