use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::routine::{EntrySource, Location, Routine, RoutineEntry};

/// Evening slot used when a proposal names no time.
pub const DEFAULT_PLAN_START: u32 = 1140;
pub const DEFAULT_PLAN_END: u32 = 1260;
/// Days after the proposal on which a plan may be held.
pub const DEFAULT_HORIZON: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Proposed,
    Scheduled,
    Cancelled,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_id: String,
    pub proposer: String,
    pub invitees: Vec<String>,
    pub decisions: BTreeMap<String, Decision>,
    /// Earliest day asked for in the proposal, if any.
    pub requested_day: Option<u32>,
    pub scheduled_day: Option<u32>,
    pub start: u32,
    pub end: u32,
    pub location: Location,
    pub activity: String,
    pub status: PlanStatus,
    /// Day the plan was proposed on.
    pub created_day: u32,
}

impl Plan {
    /// Proposer first, then accepting invitees in invitation order.
    pub fn participants(&self) -> Vec<String> {
        std::iter::once(self.proposer.clone())
            .chain(
                self.invitees
                    .iter()
                    .filter(|i| self.decisions.get(*i) == Some(&Decision::Accepted))
                    .cloned(),
            )
            .collect()
    }

    pub fn accepted_by_invitee(&self) -> bool {
        self.invitees.iter().any(|i| self.decisions.get(i) == Some(&Decision::Accepted))
    }

    pub fn entry(&self) -> RoutineEntry {
        RoutineEntry::new(self.start, self.end, self.location.clone(), &self.activity, EntrySource::Plan(self.plan_id.clone()))
    }
}

/// Accepted plans waiting for a day, per NPC.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanBuffer {
    pub queues: BTreeMap<String, Vec<String>>,
}

impl PlanBuffer {
    pub fn push(&mut self, npc: &str, plan_id: &str) {
        let q = self.queues.entry(npc.to_string()).or_default();
        if !q.iter().any(|p| p == plan_id) {
            q.push(plan_id.to_string());
        }
    }

    pub fn remove_plan(&mut self, plan_id: &str) {
        for q in self.queues.values_mut() {
            q.retain(|p| p != plan_id);
        }
        self.queues.retain(|_, q| !q.is_empty());
    }

    pub fn contains(&self, plan_id: &str) -> bool {
        self.queues.values().any(|q| q.iter().any(|p| p == plan_id))
    }

    /// Buffered plan ids, each once, in ascending order.
    pub fn pending(&self) -> Vec<String> {
        let mut all: Vec<String> = self.queues.values().flatten().cloned().collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn validate(&self) -> Result<(), String> {
        for (npc, q) in &self.queues {
            let mut sorted = q.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != q.len() {
                return Err(format!("plan queued twice for {npc}"));
            }
        }
        Ok(())
    }
}

/// All plans ever proposed plus the buffer of unscheduled ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanBook {
    pub plans: BTreeMap<String, Plan>,
    pub buffer: PlanBuffer,
    pub next_id: u64,
}

impl PlanBook {
    pub fn next_plan_id(&mut self) -> String {
        let id = format!("plan-{:04}", self.next_id);
        self.next_id += 1;
        id
    }

    /// Files a decided proposal: buffered if some invitee accepted,
    /// cancelled otherwise.
    pub fn file(&mut self, mut plan: Plan) {
        if plan.accepted_by_invitee() {
            plan.status = PlanStatus::Proposed;
            for p in plan.participants() {
                self.buffer.push(&p, &plan.plan_id);
            }
        } else {
            plan.status = PlanStatus::Cancelled;
        }
        self.plans.insert(plan.plan_id.clone(), plan);
    }
}

/// Access to routines by NPC and day. Asking for a day that has no routine
/// yet should create a placeholder so plans can be booked ahead.
pub trait RoutineStore {
    fn routine_mut(&mut self, npc: &str, day: u32) -> Option<&mut Routine>;
    fn routine(&self, npc: &str, day: u32) -> Option<&Routine>;
    fn home(&self, npc: &str) -> Option<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no feasible day for `{0}` within the horizon")]
    NoFeasibleDay(String),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
}

/// Books `plan` on the earliest designated day that suits every
/// participant. Returns the day, or `None` if the plan was cancelled for
/// lack of an accepting invitee. On `NoFeasibleDay` nothing changes and the
/// plan stays buffered.
pub fn schedule_plan(
    plan: &mut Plan,
    store: &mut dyn RoutineStore,
    buffer: &mut PlanBuffer,
    current_day: u32,
    horizon: u32,
) -> Result<Option<u32>, PlanError> {
    if !plan.accepted_by_invitee() {
        plan.status = PlanStatus::Cancelled;
        buffer.remove_plan(&plan.plan_id);
        return Ok(None);
    }
    let participants = plan.participants();
    let first = plan.requested_day.unwrap_or(0).max(current_day + 1);
    for day in first..first + horizon {
        let mut free = true;
        for p in &participants {
            let r = match store.routine_mut(p, day) {
                Some(r) => &*r,
                None => return Err(PlanError::UnknownParticipant(p.clone())),
            };
            if plan.start < r.wake || plan.end > r.sleep || r.plan_conflict(plan.start, plan.end).is_some() {
                free = false;
                break;
            }
        }
        if !free {
            continue;
        }
        for p in &participants {
            let r = store.routine_mut(p, day).expect("checked above");
            r.insert_block(plan.entry()).expect("slot checked free");
            debug_assert!(r.check_contiguity().is_ok());
        }
        plan.scheduled_day = Some(day);
        plan.status = PlanStatus::Scheduled;
        buffer.remove_plan(&plan.plan_id);
        return Ok(Some(day));
    }
    Err(PlanError::NoFeasibleDay(plan.plan_id.clone()))
}

/// Takes `npc` out of a scheduled plan. When no invitee is left the plan
/// is cancelled and the proposer's entry goes too. Returns the NPCs whose
/// routine changed.
pub fn withdraw_from_plan(plan: &mut Plan, npc: &str, store: &mut dyn RoutineStore) -> Vec<String> {
    let Some(day) = plan.scheduled_day else { return vec![] };
    if plan.status != PlanStatus::Scheduled {
        return vec![];
    }
    let mut leaving = vec![npc.to_string()];
    if npc == plan.proposer {
        // the host leaving calls the whole thing off
        leaving = plan.participants();
        plan.status = PlanStatus::Cancelled;
    } else {
        plan.decisions.insert(npc.to_string(), Decision::Rejected);
        if !plan.accepted_by_invitee() {
            leaving.push(plan.proposer.clone());
            plan.status = PlanStatus::Cancelled;
        }
    }
    for p in &leaving {
        let home = store.home(p).unwrap_or_default();
        if let Some(r) = store.routine_mut(p, day) {
            r.remove_plan_entry(&plan.plan_id, &home);
        }
    }
    leaving
}

/// Scheduled plans must have exactly one matching entry per participant,
/// and no one else may hold one.
pub fn check_plan_consistency(plan: &Plan, store: &dyn RoutineStore, all_npcs: &[String]) -> Result<(), String> {
    let Some(day) = plan.scheduled_day.filter(|_| plan.status == PlanStatus::Scheduled) else {
        return Ok(());
    };
    let participants = plan.participants();
    let expected = plan.entry();
    for npc in all_npcs {
        let Some(r) = store.routine(npc, day) else {
            if participants.contains(npc) {
                return Err(format!("{} has no routine on day {day} for {}", npc, plan.plan_id));
            }
            continue;
        };
        let matching: Vec<&RoutineEntry> = r.plan_entries(&plan.plan_id).collect();
        let want = usize::from(participants.contains(npc));
        if matching.len() != want || matching.iter().any(|e| **e != expected) {
            return Err(format!("{} holds {} entries of {} (expected {want})", npc, matching.len(), plan.plan_id));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agents::routine::{default_template, tests::ctx};

    #[derive(Default)]
    pub(crate) struct Store {
        pub routines: BTreeMap<(String, u32), Routine>,
    }

    impl RoutineStore for Store {
        fn routine_mut(&mut self, npc: &str, day: u32) -> Option<&mut Routine> {
            let r = self.routines.entry((npc.to_string(), day)).or_insert_with(|| {
                let mut c = ctx(true);
                c.npc_id = npc.to_string();
                default_template(&c, day)
            });
            Some(r)
        }
        fn routine(&self, npc: &str, day: u32) -> Option<&Routine> {
            self.routines.get(&(npc.to_string(), day))
        }
        fn home(&self, _: &str) -> Option<String> {
            Some("building-01".into())
        }
    }

    pub(crate) fn plan(id: &str, invitees: &[(&str, Decision)]) -> Plan {
        Plan {
            plan_id: id.into(),
            proposer: "a".into(),
            invitees: invitees.iter().map(|(n, _)| n.to_string()).collect(),
            decisions: invitees.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
            requested_day: None,
            scheduled_day: None,
            start: DEFAULT_PLAN_START,
            end: DEFAULT_PLAN_END,
            location: Location::Building("building-00".into()),
            activity: "cooking competition".into(),
            status: PlanStatus::Proposed,
            created_day: 0,
        }
    }

    #[test]
    fn free_slot_next_day() {
        let mut store = Store::default();
        let mut buffer = PlanBuffer::default();
        let mut p = plan("p1", &[("b", Decision::Accepted), ("c", Decision::Rejected)]);
        buffer.push("a", "p1");
        buffer.push("b", "p1");
        assert_eq!(schedule_plan(&mut p, &mut store, &mut buffer, 0, 7), Ok(Some(1)));
        assert_eq!(p.status, PlanStatus::Scheduled);
        assert!(!buffer.contains("p1"));
        let ea: Vec<_> = store.routine("a", 1).unwrap().plan_entries("p1").cloned().collect();
        let eb: Vec<_> = store.routine("b", 1).unwrap().plan_entries("p1").cloned().collect();
        assert_eq!(ea, eb);
        assert_eq!(ea.len(), 1);
        assert!(store.routine("c", 1).is_none());
        // the leisure block was cut, not dropped
        let r = store.routine("a", 1).unwrap();
        r.check_contiguity().unwrap();
        assert!(r.entries.iter().any(|e| e.activity == "leisure"));
        check_plan_consistency(&p, &store, &["a".into(), "b".into(), "c".into()]).unwrap();
    }

    #[test]
    fn conflict_pushes_to_next_day() {
        let mut store = Store::default();
        let mut buffer = PlanBuffer::default();
        let mut first = plan("p1", &[("b", Decision::Accepted)]);
        schedule_plan(&mut first, &mut store, &mut buffer, 0, 7).unwrap();
        let mut second = plan("p2", &[("c", Decision::Accepted)]);
        second.proposer = "b".into();
        assert_eq!(schedule_plan(&mut second, &mut store, &mut buffer, 0, 7), Ok(Some(2)));
    }

    #[test]
    fn no_feasible_day_keeps_buffer() {
        let mut store = Store::default();
        let mut buffer = PlanBuffer::default();
        let mut p = plan("p1", &[("b", Decision::Accepted)]);
        p.start = 100; // before waking
        buffer.push("a", "p1");
        assert!(matches!(schedule_plan(&mut p, &mut store, &mut buffer, 0, 7), Err(PlanError::NoFeasibleDay(_))));
        assert!(buffer.contains("p1"));
        assert_eq!(p.status, PlanStatus::Proposed);
    }

    #[test]
    fn rejection_by_all_cancels() {
        let mut buffer = PlanBuffer::default();
        let mut p = plan("p1", &[("b", Decision::Rejected)]);
        assert_eq!(schedule_plan(&mut p, &mut Store::default(), &mut buffer, 0, 7), Ok(None));
        assert_eq!(p.status, PlanStatus::Cancelled);
    }

    #[test]
    fn withdrawal_is_scoped() {
        let mut store = Store::default();
        let mut p = plan("p1", &[("b", Decision::Accepted), ("c", Decision::Accepted)]);
        schedule_plan(&mut p, &mut store, &mut PlanBuffer::default(), 0, 7).unwrap();
        let before_a = store.routine("a", 1).cloned();
        assert_eq!(withdraw_from_plan(&mut p, "b", &mut store), vec!["b"]);
        assert_eq!(store.routine("b", 1).unwrap().plan_entries("p1").count(), 0);
        store.routine("b", 1).unwrap().check_contiguity().unwrap();
        assert_eq!(store.routine("a", 1).cloned(), before_a);
        assert_eq!(p.status, PlanStatus::Scheduled);
        check_plan_consistency(&p, &store, &["a".into(), "b".into(), "c".into()]).unwrap();
        withdraw_from_plan(&mut p, "c", &mut store);
        assert_eq!(p.status, PlanStatus::Cancelled);
        assert_eq!(store.routine("a", 1).unwrap().plan_entries("p1").count(), 0);
    }
}
