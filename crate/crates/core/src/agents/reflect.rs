use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::memory::{MemoryKind, SimTime};
use super::plan::{withdraw_from_plan, PlanBook, PlanStatus};
use super::Agents;
use crate::oracle::{slots, Embedder, OracleClient, OracleError, ResponseSchema};
use crate::population::{TraitChange, MAX_TRAITS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub npc_id: String,
    pub day: u32,
    pub insight: String,
    pub memory_id: u64,
    pub trait_change: Option<TraitChange>,
    pub withdrawn: Vec<String>,
    /// The oracle failed and the templated summary was stored instead.
    pub fallback: bool,
}

/// The day's three longest activities, longest first.
pub fn top_activities(agents: &Agents, npc: &str, day: u32) -> Vec<String> {
    let Some(routine) = agents.get(npc).and_then(|a| a.routines.get(&day)) else {
        return vec![];
    };
    let mut totals: Vec<(String, u32, usize)> = Vec::new();
    for (i, e) in routine.entries.iter().enumerate() {
        match totals.iter_mut().find(|t| t.0 == e.activity) {
            Some(t) => t.1 += e.duration(),
            None => totals.push((e.activity.clone(), e.duration(), i)),
        }
    }
    totals.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    totals.into_iter().take(3).map(|t| t.0).collect()
}

fn templated(top: &[String]) -> String {
    if top.is_empty() {
        "Today I rested.".to_string()
    } else {
        format!("Today I {}.", top.join(", "))
    }
}

/// End-of-day reflection for one NPC.
///
/// Stores one insight memory, applies at most one trait change, and lets
/// the NPC back out of plans it no longer wants to attend. If the insight
/// itself cannot be produced a templated summary is stored and nothing
/// else changes. `None` if there is no such NPC.
pub fn reflect(
    npc: &str,
    day: u32,
    agents: &mut Agents,
    plans: &mut PlanBook,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
    now: SimTime,
) -> Result<Option<ReflectionOutcome>, OracleError> {
    let top = top_activities(agents, npc, day);
    let Some(agent) = agents.get_mut(npc) else { return Ok(None) };
    let mut log = agent.day_log.clone();
    if !top.is_empty() {
        log.insert(0, format!("spent most of the day on {}", top.join(", ")));
    }
    agent.day_log.clear();
    let name = agent.profile.full_name();
    let traits = agent.profile.traits_text();
    let insight = oracle
        .ask(
            "reflection_insight",
            slots([("name", name.clone()), ("traits", traits.clone()), ("day", day.to_string()), ("day_log", log.join("; "))]),
            ResponseSchema::FreeText,
        )
        .ok()
        .map(|r| r.as_text().trim().to_string())
        .filter(|t| !t.is_empty());
    let Some(insight) = insight else {
        let text = templated(&top);
        let importance = MemoryKind::Reflection.default_importance();
        let memory_id = agent.memory.add(MemoryKind::Reflection, &text, now, importance, embedder)?;
        return Ok(Some(ReflectionOutcome {
            npc_id: npc.to_string(),
            day,
            insight: text,
            memory_id,
            trait_change: None,
            withdrawn: vec![],
            fallback: true,
        }));
    };

    let importance = oracle
        .ask(
            "rate_importance",
            slots([("name", name.clone()), ("text", insight.clone())]),
            ResponseSchema::Score { min: 1.0, max: 10.0 },
        )
        .ok()
        .and_then(|r| r.as_score())
        .map_or(MemoryKind::Reflection.default_importance(), |s| (s / 10.0).clamp(0.0, 1.0));
    let memory_id = agent.memory.add(MemoryKind::Reflection, &insight, now, importance, embedder)?;

    let trait_change = oracle
        .ask(
            "trait_evolution",
            slots([("name", name.clone()), ("traits", traits.clone()), ("insight", insight.clone())]),
            ResponseSchema::JsonObject,
        )
        .ok()
        .and_then(|r| r.as_json().cloned())
        .and_then(|obj| {
            let field = |k: &str| obj.get(k).and_then(|v| v.as_str()).map(str::trim).filter(|s| !s.is_empty()).map(String::from);
            let has = |t: &str| agent.profile.traits.iter().any(|x| x.eq_ignore_ascii_case(t));
            if let Some(add) = field("add").filter(|a| !has(a) && agent.profile.traits.len() < MAX_TRAITS) {
                agent.profile.traits.push(add.clone());
                return Some(TraitChange {
                    day,
                    added: Some(add),
                    removed: None,
                    insight_ref: memory_id,
                });
            }
            let remove = field("remove").filter(|r| has(r) && agent.profile.traits.len() > 1)?;
            agent.profile.traits.retain(|x| !x.eq_ignore_ascii_case(&remove));
            Some(TraitChange {
                day,
                added: None,
                removed: Some(remove),
                insight_ref: memory_id,
            })
        });
    if let Some(c) = &trait_change {
        agent.profile.evolution.push(c.clone());
    }

    let mut withdrawn = vec![];
    let upcoming: Vec<String> = plans
        .plans
        .values()
        .filter(|p| p.status == PlanStatus::Scheduled && p.scheduled_day.is_some_and(|d| d > day) && p.participants().iter().any(|x| x == npc))
        .map(|p| p.plan_id.clone())
        .collect();
    for plan_id in upcoming {
        let plan = plans.plans.get_mut(&plan_id).expect("listed above");
        let answer = oracle.ask(
            "reconsider_plan",
            slots([("name", name.clone()), ("traits", traits.clone()), ("insight", insight.clone()), ("plan", plan.activity.clone())]),
            ResponseSchema::Choice(vec!["attend".into(), "withdraw".into()]),
        );
        if answer.ok().and_then(|a| a.as_choice().map(String::from)).as_deref() != Some("withdraw") {
            continue;
        }
        withdraw_from_plan(plan, npc, agents);
        let text = format!("I decided not to attend {}.", plan.activity);
        if let Some(a) = agents.get_mut(npc) {
            a.memory.add(MemoryKind::PlanDecision, &text, now, MemoryKind::PlanDecision.default_importance(), embedder)?;
        }
        withdrawn.push(plan_id);
    }
    Ok(Some(ReflectionOutcome {
        npc_id: npc.to_string(),
        day,
        insight,
        memory_id,
        trait_change,
        withdrawn,
        fallback: false,
    }))
}

/// Plans whose day is over become completed.
pub fn complete_past_plans(plans: &mut PlanBook, day: u32) {
    for p in plans.plans.values_mut() {
        if p.status == PlanStatus::Scheduled && p.scheduled_day.is_some_and(|d| d <= day) {
            p.status = PlanStatus::Completed;
        }
    }
}

/// Activity totals by name, used in reports.
pub fn activity_minutes(agents: &Agents, npc: &str, day: u32) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    if let Some(r) = agents.get(npc).and_then(|a| a.routines.get(&day)) {
        for e in &r.entries {
            *out.entry(e.activity.clone()).or_insert(0) += e.duration();
        }
    }
    out
}
