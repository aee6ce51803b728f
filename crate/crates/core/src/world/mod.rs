//! The running world: generation pipeline, tick loop, commands and saves.

mod generate;
mod save;
mod tick;

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::perception::{DEFAULT_COOLDOWN, DEFAULT_DEVIATION_THRESHOLD, DEFAULT_PERCEPTION_RADIUS};
use crate::agents::plan::DEFAULT_HORIZON;
use crate::agents::{Agents, ConversationState, Location, PlanBook, ScoringWeights, SimTime, StateClass, UrgencyTable};
use crate::commands::{end_interview, interview, CommandError, CommandPlan, InterviewSession, Referents};
use crate::geom::Tile;
use crate::oracle::{Embedder, HashEmbedder, OracleClient};
use crate::population::{FamilyLore, Relationship};
use crate::settlement::{BuildingKind, CostGrid, Interior, RoadNetwork, Settlement};
use crate::terrain::{BiomeTable, NaturalObject, TerrainGrid, WorldSpec};

pub use generate::{generate_world, GenerationError, GenerationOptions, GenerationReport, Stage, StageError, StageReport};
pub use save::{load_world, save_world, validate_state, SaveError, FORMAT_VERSION};
pub use tick::TickPhase;

/// Seed for one named random stream, independent of every other stream.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

pub fn stream_rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationClock {
    pub tick: u64,
    pub minutes_per_tick: u32,
}

impl Default for SimulationClock {
    fn default() -> Self {
        Self {
            tick: 0,
            minutes_per_tick: 1,
        }
    }
}

impl SimulationClock {
    pub fn now(&self) -> SimTime {
        (self.tick * u64::from(self.minutes_per_tick)) as SimTime
    }
}

/// Simulation knobs. Saved with the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub perception_radius: u32,
    pub perception_cooldown: SimTime,
    pub deviation_threshold: f64,
    pub urgency: UrgencyTable,
    pub weights: ScoringWeights,
    pub conversation_radius: u32,
    pub max_turns: u32,
    pub plan_horizon: u32,
    /// Per-minute chance that an idle NPC strikes up a chat with a neighbour.
    pub chat_chance: f64,
    /// Minutes an NPC waits after a conversation before starting another.
    pub chat_cooldown: SimTime,
    /// A queued command is dropped after waiting this many minutes.
    pub command_expiry: SimTime,
    /// When false, commands that contradict an NPC's lore are refused.
    pub allow_lore_contradictions: bool,
    /// Slope limit the settlement was placed with; checked again on load.
    pub slope_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            perception_radius: DEFAULT_PERCEPTION_RADIUS,
            perception_cooldown: DEFAULT_COOLDOWN,
            deviation_threshold: DEFAULT_DEVIATION_THRESHOLD,
            urgency: UrgencyTable::default(),
            weights: ScoringWeights::default(),
            conversation_radius: crate::agents::DEFAULT_CONVERSATION_RADIUS,
            max_turns: crate::agents::DEFAULT_MAX_TURNS,
            plan_horizon: DEFAULT_HORIZON,
            chat_chance: 0.01,
            chat_cooldown: 180,
            command_expiry: 1440,
            allow_lore_contradictions: true,
            slope_threshold: crate::settlement::PlacementConfig::default().slope_threshold,
        }
    }
}

/// Something a player or script set on a world object, such as a fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Tile,
    pub state: String,
    pub class: StateClass,
}

/// A player command waiting in the queue. Parsing happens when the queue
/// is drained; a busy target keeps the remaining steps here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedCommand {
    pub command_id: String,
    pub issuer: String,
    pub target_npc: String,
    pub text: String,
    pub submitted_at: SimTime,
    pub plan: Option<CommandPlan>,
    /// A busy notice was already emitted.
    #[serde(default)]
    pub waiting: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub commands: u64,
    pub conversations: u64,
}

/// Everything that defines the world at a tick. Saved as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub spec: WorldSpec,
    pub config: SimConfig,
    pub biomes: BiomeTable,
    #[serde(with = "save::terrain_codec")]
    pub terrain: TerrainGrid,
    pub settlement: Settlement,
    pub interiors: Vec<Interior>,
    pub roads: RoadNetwork,
    pub flora: Vec<NaturalObject>,
    pub families: Vec<FamilyLore>,
    pub agents: Agents,
    pub relationships: Vec<Relationship>,
    pub conversations: BTreeMap<String, ConversationState>,
    pub finished_conversations: Vec<ConversationState>,
    pub plans: PlanBook,
    pub clock: SimulationClock,
    pub commands: VecDeque<QueuedCommand>,
    pub object_states: BTreeMap<String, ObjectState>,
    pub counters: Counters,
}

impl WorldState {
    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn day(&self) -> u32 {
        (self.now() / SimTime::from(self.spec.day_length)) as u32
    }

    pub fn minute(&self) -> u32 {
        (self.now() % SimTime::from(self.spec.day_length)) as u32
    }

    pub fn npc_name(&self, id: &str) -> String {
        self.agents.get(id).map_or_else(|| id.to_string(), |a| a.profile.full_name())
    }

    /// Street tile in front of a building, or the tile itself.
    pub fn location_tile(&self, loc: &Location) -> Option<Tile> {
        match loc {
            Location::Building(id) => self.settlement.get(id).map(|b| b.entrance),
            Location::Tile(t) => Some(*t),
        }
    }

    /// Readable name of a workplace: `the farmer and baker workshop`.
    pub fn workplace_label(&self, building_id: &str) -> String {
        match self.settlement.get(building_id) {
            Some(b) if !b.spec.roles.is_empty() => format!("the {} workshop", b.spec.roles.join(" and ")),
            Some(b) => b.name().to_string(),
            None => building_id.to_string(),
        }
    }

    /// Names players and NPCs may use for places, lower-case.
    pub fn place_names(&self) -> BTreeMap<String, Location> {
        let mut out = BTreeMap::new();
        let surnames: BTreeMap<&str, &str> = self.families.iter().map(|f| (f.residence.as_str(), f.surname.as_str())).collect();
        for b in &self.settlement.buildings {
            let here = Location::Building(b.id.clone());
            out.insert(b.id.to_lowercase(), here.clone());
            match b.spec.kind {
                BuildingKind::Residence => {
                    if let Some(s) = surnames.get(b.id.as_str()) {
                        let s = s.to_lowercase();
                        out.insert(format!("{s} house"), here.clone());
                        out.insert(format!("the {s} house"), here.clone());
                    }
                }
                BuildingKind::Workplace => {
                    let label = self.workplace_label(&b.id).to_lowercase();
                    out.insert(label.trim_start_matches("the ").to_string(), here.clone());
                    out.insert(label, here.clone());
                    for r in &b.spec.roles {
                        out.insert(format!("{} workshop", r.to_lowercase()), here.clone());
                    }
                }
                BuildingKind::Civic => {
                    let tag = b.spec.function_tag.replace('-', " ");
                    for name in [tag.clone(), format!("the {tag}"), "town hall".into(), "the town hall".into()] {
                        out.insert(name, here.clone());
                    }
                    let square = Location::Tile(b.approach());
                    for name in ["square", "the square", "town square", "the town square"] {
                        out.insert(name.into(), square.clone());
                    }
                }
            }
        }
        out
    }

    /// Everything a command may refer to.
    pub fn referents(&self) -> Referents {
        let mut refs = Referents {
            places: self.place_names(),
            ..Referents::default()
        };
        for (id, a) in &self.agents {
            refs.add_npc(id, &[a.profile.name.clone(), a.profile.full_name()]);
            refs.homes.insert(id.clone(), (a.profile.home.clone(), a.profile.workplace.clone()));
        }
        refs
    }
}

/// One entry of the event log. The log is not part of the save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: String,
    /// NPCs the event concerns, for per-NPC feeds.
    pub npcs: Vec<String>,
    pub payload: serde_json::Value,
}

/// A world plus the services it runs with.
pub struct World {
    pub state: WorldState,
    pub oracle: OracleClient,
    pub embedder: Box<dyn Embedder>,
    pub events: Vec<Event>,
    /// Phase markers of the most recent tick, in execution order.
    pub phase_trace: Vec<TickPhase>,
    movement: Option<CostGrid>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World").field("tick", &self.state.clock.tick).finish_non_exhaustive()
    }
}

impl World {
    pub fn new(state: WorldState, oracle: OracleClient, embedder: Box<dyn Embedder>) -> Self {
        Self {
            state,
            oracle,
            embedder,
            events: vec![],
            phase_trace: vec![],
            movement: None,
        }
    }

    /// A world with the offline embedder.
    pub fn with_oracle(state: WorldState, oracle: OracleClient) -> Self {
        Self::new(state, oracle, Box::new(HashEmbedder::default()))
    }

    pub fn tick_count(&self) -> u64 {
        self.state.clock.tick
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn emit(&mut self, kind: &str, npcs: Vec<String>, payload: serde_json::Value) {
        self.events.push(Event {
            tick: self.state.clock.tick,
            kind: kind.to_string(),
            npcs,
            payload,
        });
    }

    /// Queues a player command; it is parsed and run by the next tick.
    pub fn submit_command(&mut self, issuer: &str, target_npc: &str, text: &str) -> String {
        let command_id = format!("cmd-{:04}", self.state.counters.commands);
        self.state.counters.commands += 1;
        self.state.commands.push_back(QueuedCommand {
            command_id: command_id.clone(),
            issuer: issuer.to_string(),
            target_npc: target_npc.to_string(),
            text: text.to_string(),
            submitted_at: self.state.now(),
            plan: None,
            waiting: false,
        });
        command_id
    }

    /// Marks an object as being in some state, e.g. `burning`.
    pub fn set_object_state(&mut self, object_id: &str, position: Tile, state: &str) {
        let class = if state.to_lowercase().contains("burn") || state.to_lowercase().contains("fire") {
            StateClass::Burning
        } else {
            StateClass::Routine
        };
        self.state.object_states.insert(
            object_id.to_string(),
            ObjectState {
                position,
                state: state.to_string(),
                class,
            },
        );
    }

    pub fn clear_object_state(&mut self, object_id: &str) {
        self.state.object_states.remove(object_id);
    }

    /// Ends an interview. Only `remember` touches the world: one summary
    /// memory for the NPC.
    pub fn finish_interview(&mut self, session: &mut InterviewSession, remember: bool, oracle: &mut OracleClient) -> Result<Option<u64>, CommandError> {
        let now = self.state.now();
        let npc = session.npc_id.clone();
        let agent = self.state.agents.get_mut(&npc).ok_or(CommandError::UnknownNpc(npc))?;
        end_interview(session, remember, agent, oracle, self.embedder.as_ref(), now)
    }
}

/// One interview question, answered against a read-only view of the world.
pub fn interview_turn(
    state: &WorldState,
    session: &mut InterviewSession,
    question: &str,
    oracle: &mut OracleClient,
    embedder: &dyn Embedder,
) -> Result<String, CommandError> {
    let agent = state
        .agents
        .get(&session.npc_id)
        .ok_or_else(|| CommandError::UnknownNpc(session.npc_id.clone()))?;
    interview(session, question, agent, oracle, embedder, &state.config.weights, state.now())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_purpose_and_index() {
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
    }

    #[test]
    fn clock_minutes() {
        let c = SimulationClock {
            tick: 10,
            minutes_per_tick: 3,
        };
        assert_eq!(c.now(), 30);
    }
}
