//! Individual NPC behaviour: memory, routines, perception, conversation,
//! plans and reflection.

pub mod conversation;
pub mod memory;
pub mod perception;
pub mod plan;
pub mod reflect;
pub mod routine;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::Tile;
use crate::population::NpcProfile;

pub use conversation::{
    conversation_step, join_conversation, start_conversation, ConversationEnv, ConversationError, ConversationEvent, ConversationState,
    Phase, Utterance, DEFAULT_CONVERSATION_RADIUS, DEFAULT_MAX_TURNS,
};
pub use memory::{retrieve, MemoryEntry, MemoryKind, MemoryStream, ScoringWeights, SimTime};
pub use perception::{perceive, react, Observation, Perceivable, Reaction, SeenLog, StateClass, UrgencyTable};
pub use plan::{schedule_plan, withdraw_from_plan, Decision, Plan, PlanBook, PlanBuffer, PlanError, PlanStatus, RoutineStore};
pub use reflect::{reflect, ReflectionOutcome};
pub use routine::{
    default_template, generate_routine, waking_hours, EntrySource, Location, Routine, RoutineContext, RoutineEntry, RoutineError,
};

/// One NPC at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub profile: NpcProfile,
    pub memory: MemoryStream,
    /// Routines by day; future days may hold placeholders with booked plans.
    pub routines: BTreeMap<u32, Routine>,
    /// Remaining steps towards the current routine location.
    pub path: Vec<Tile>,
    pub path_target: Option<Tile>,
    pub conversation: Option<String>,
    pub seen: SeenLog,
    /// Last state seen per subject, to tell news from repetition.
    pub last_states: BTreeMap<String, String>,
    /// What happened today, in order, for the nightly reflection.
    pub day_log: Vec<String>,
    /// When the NPC last left a conversation.
    #[serde(default)]
    pub last_chat: Option<memory::SimTime>,
    pub wake: u32,
    pub sleep: u32,
}

impl Agent {
    pub fn new(profile: NpcProfile, memory: MemoryStream, wake: u32, sleep: u32) -> Self {
        Self {
            profile,
            memory,
            routines: BTreeMap::new(),
            path: vec![],
            path_target: None,
            conversation: None,
            seen: SeenLog::new(),
            last_states: BTreeMap::new(),
            day_log: vec![],
            last_chat: None,
            wake,
            sleep,
        }
    }

    pub fn id(&self) -> &str {
        &self.profile.npc_id
    }

    /// Routine context without object details, for placeholder days.
    pub fn bare_context(&self) -> RoutineContext {
        RoutineContext {
            npc_id: self.profile.npc_id.clone(),
            name: self.profile.full_name(),
            traits: self.profile.traits_text(),
            lore: self.profile.individual_lore.clone(),
            home: self.profile.home.clone(),
            workplace: self.profile.workplace.clone(),
            objects: BTreeMap::new(),
            object_descriptions: BTreeMap::new(),
            wake: self.wake,
            sleep: self.sleep,
        }
    }

    pub fn is_awake(&self, minute: u32) -> bool {
        (self.wake..self.sleep).contains(&minute)
    }

    pub fn current_entry(&self, day: u32, minute: u32) -> Option<&RoutineEntry> {
        self.routines.get(&day).and_then(|r| r.entry_at(minute))
    }
}

pub type Agents = BTreeMap<String, Agent>;

impl RoutineStore for Agents {
    fn routine_mut(&mut self, npc: &str, day: u32) -> Option<&mut Routine> {
        let agent = self.get_mut(npc)?;
        if !agent.routines.contains_key(&day) {
            let placeholder = default_template(&agent.bare_context(), day);
            agent.routines.insert(day, placeholder);
        }
        agent.routines.get_mut(&day)
    }

    fn routine(&self, npc: &str, day: u32) -> Option<&Routine> {
        self.get(npc)?.routines.get(&day)
    }

    fn home(&self, npc: &str) -> Option<String> {
        self.get(npc).map(|a| a.profile.home.clone())
    }
}
