use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::{World, WorldState};
use crate::agents::plan::check_plan_consistency;
use crate::agents::{Phase, PlanStatus};
use crate::oracle::{Embedder, OracleClient, OracleLedger};
use crate::population::{diameter, validate_population, SocialGraph};
use crate::settlement::ROAD_COST_FACTOR;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaveError {
    #[error("save format {found} is not the supported format {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt save: {0}")]
    CorruptSave(String),
    #[error("invariant violated in {module}: {detail}")]
    InvariantViolation { module: String, detail: String },
    #[error("io: {0}")]
    Io(String),
}

fn violation(module: &str, detail: impl Into<String>) -> SaveError {
    SaveError::InvariantViolation {
        module: module.to_string(),
        detail: detail.into(),
    }
}

/// Terrain on disk: the three fields as base64 little-endian u16 and the
/// biome ids run-length encoded. Passability and move costs are derived
/// data and are rebuilt from the biome table and the roads on load.
pub(super) mod terrain_codec {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::terrain::{ScalarField, TerrainGrid};

    #[derive(Serialize, Deserialize)]
    struct Packed {
        width: u32,
        height: u32,
        sea_level: f64,
        elevation: String,
        precipitation: String,
        temperature: String,
        /// `(biome id, run length)` in row-major order.
        biome_runs: Vec<(u16, u32)>,
    }

    fn pack(f: &ScalarField) -> String {
        let bytes: Vec<u8> = f.values.iter().flat_map(|v| ScalarField::to_u16(*v).to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    fn unpack(text: &str, width: u32, height: u32) -> Result<ScalarField, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() != 2 * (width * height) as usize {
            return Err("field size does not match the grid".into());
        }
        let values = bytes.chunks_exact(2).map(|c| ScalarField::from_u16(u16::from_le_bytes([c[0], c[1]]))).collect();
        Ok(ScalarField::new(width, height, values))
    }

    pub fn serialize<S: Serializer>(t: &TerrainGrid, s: S) -> Result<S::Ok, S::Error> {
        let mut runs: Vec<(u16, u32)> = Vec::new();
        for &b in &t.biome_ids {
            match runs.last_mut() {
                Some((id, n)) if *id == b => *n += 1,
                _ => runs.push((b, 1)),
            }
        }
        Packed {
            width: t.width,
            height: t.height,
            sea_level: t.sea_level,
            elevation: pack(&t.elevation),
            precipitation: pack(&t.precipitation),
            temperature: pack(&t.temperature),
            biome_runs: runs,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TerrainGrid, D::Error> {
        let p = Packed::deserialize(d)?;
        let n = (p.width as usize) * (p.height as usize);
        let mut biome_ids = Vec::with_capacity(n);
        for (id, len) in p.biome_runs {
            biome_ids.extend(std::iter::repeat_n(id, len as usize));
        }
        if biome_ids.len() != n {
            return Err(D::Error::custom("biome runs do not cover the grid"));
        }
        Ok(TerrainGrid {
            width: p.width,
            height: p.height,
            sea_level: p.sea_level,
            elevation: unpack(&p.elevation, p.width, p.height).map_err(D::Error::custom)?,
            precipitation: unpack(&p.precipitation, p.width, p.height).map_err(D::Error::custom)?,
            temperature: unpack(&p.temperature, p.width, p.height).map_err(D::Error::custom)?,
            biome_ids,
            passable: vec![false; n],
            move_cost: vec![None; n],
        })
    }
}

// Loading goes field by field instead: flattened structs lose integer map keys.
#[derive(Serialize)]
struct WorldSave<'a> {
    format_version: u32,
    #[serde(flatten)]
    state: &'a WorldState,
    /// Every oracle request so far, for replay without the model.
    #[serde(skip_serializing_if = "Option::is_none")]
    journal: Option<&'a OracleLedger>,
}

/// Rebuilds passability and move costs from the biome table and roads.
fn restore_costs(state: &mut WorldState) -> Result<(), SaveError> {
    let t = &mut state.terrain;
    for i in 0..t.biome_ids.len() {
        let b = state
            .biomes
            .biomes
            .get(t.biome_ids[i] as usize)
            .ok_or_else(|| violation("terrain", format!("tile {i} has unknown biome {}", t.biome_ids[i])))?;
        let cost = if b.water { None } else { b.move_cost };
        t.passable[i] = cost.is_some();
        t.move_cost[i] = cost;
    }
    for tile in &state.roads.road_tiles {
        if !t.in_bounds(*tile) {
            return Err(violation("roads", format!("road tile ({}, {}) is off the map", tile.x, tile.y)));
        }
        t.scale_cost(*tile, ROAD_COST_FACTOR);
    }
    Ok(())
}

/// Checks every module invariant of a world.
pub fn validate_state(state: &WorldState) -> Result<(), SaveError> {
    let t = &state.terrain;
    let n = (t.width * t.height) as usize;
    if t.biome_ids.len() != n || !t.elevation.is_valid() || !t.precipitation.is_valid() || !t.temperature.is_valid() {
        return Err(violation("terrain", "field sizes or ranges are wrong"));
    }
    if t.width != state.spec.width || t.height != state.spec.height {
        return Err(violation("terrain", "grid size differs from the spec"));
    }

    state
        .settlement
        .validate(Some(t), state.config.slope_threshold)
        .map_err(|e| violation("settlement", e))?;
    for interior in &state.interiors {
        interior.validate().map_err(|e| violation("settlement", format!("{}: {e}", interior.building_id)))?;
        if state.settlement.get(&interior.building_id).is_none() {
            return Err(violation("settlement", format!("interior for unknown building {}", interior.building_id)));
        }
    }
    let entrances: Vec<_> = state.settlement.buildings.iter().map(|b| b.entrance).collect();
    if !state.roads.connects(&entrances) {
        return Err(violation("roads", "road tiles do not join every entrance"));
    }
    for tile in &state.roads.road_tiles {
        if !t.is_passable(*tile) {
            return Err(violation("roads", format!("road on impassable tile ({}, {})", tile.x, tile.y)));
        }
    }
    let footprints = state.settlement.footprint_mask(t.width, t.height);
    for f in &state.flora {
        if !t.in_bounds(f.position) || footprints[t.index(f.position)] {
            return Err(violation("terrain", format!("{} stands on a building or off the map", f.id)));
        }
    }

    let profiles: Vec<_> = state.agents.values().map(|a| a.profile.clone()).collect();
    validate_population(&state.families, &profiles).map_err(|e| violation("population", e))?;
    for (id, a) in &state.agents {
        if *id != a.profile.npc_id {
            return Err(violation("population", format!("{id} is stored under the wrong key")));
        }
        if state.settlement.get(&a.profile.home).is_none() {
            return Err(violation("population", format!("{id} lives in unknown building {}", a.profile.home)));
        }
    }
    let ids: Vec<String> = state.agents.keys().cloned().collect();
    for r in &state.relationships {
        if !state.agents.contains_key(&r.a) || !state.agents.contains_key(&r.b) || r.a >= r.b {
            return Err(violation("population", format!("bad relationship {} - {}", r.a, r.b)));
        }
    }
    if ids.len() > 1 {
        let graph = SocialGraph::new(&ids, &state.relationships);
        match diameter(&graph) {
            Some(d) if d <= state.spec.degrees_cap => {}
            Some(d) => return Err(violation("population", format!("social graph diameter {d} exceeds {}", state.spec.degrees_cap))),
            None => return Err(violation("population", "social graph is disconnected")),
        }
    }

    for (id, a) in &state.agents {
        a.memory.validate().map_err(|e| violation("agents", format!("{id}: {e}")))?;
        if a.memory.npc_id != *id {
            return Err(violation("agents", format!("{id} holds another NPC's memories")));
        }
        for r in a.routines.values() {
            r.check_contiguity().map_err(|e| violation("agents", format!("{id} day {}: {e}", r.day)))?;
        }
        if let Some(c) = &a.conversation {
            let ok = state.conversations.get(c).is_some_and(|s| s.participants.contains(id));
            if !ok {
                return Err(violation("agents", format!("{id} is in unknown conversation {c}")));
            }
        }
    }
    for (cid, c) in &state.conversations {
        if c.phase == Phase::Ended || c.conversation_id != *cid {
            return Err(violation("agents", format!("conversation {cid} is ended or misfiled")));
        }
        for p in &c.participants {
            if state.agents.get(p).and_then(|a| a.conversation.as_deref()) != Some(cid.as_str()) {
                return Err(violation("agents", format!("{p} is not marked as in {cid}")));
            }
        }
    }

    state.plans.buffer.validate().map_err(|e| violation("plans", e))?;
    let known: BTreeSet<&str> = state.plans.plans.keys().map(String::as_str).collect();
    for plan_id in state.plans.buffer.queues.values().flatten() {
        if !known.contains(plan_id.as_str()) {
            return Err(violation("plans", format!("buffer holds unknown plan {plan_id}")));
        }
    }
    let oldest = state.agents.values().flat_map(|a| a.routines.keys()).min().copied();
    for p in state.plans.plans.values() {
        // completed plans may point at days whose routines were dropped
        if p.status == PlanStatus::Scheduled && p.scheduled_day.zip(oldest).is_some_and(|(d, o)| d >= o) {
            check_plan_consistency(p, &state.agents, &ids).map_err(|e| violation("plans", e))?;
        }
    }
    Ok(())
}

fn to_canonical(save: &WorldSave) -> Result<String, SaveError> {
    // through Value so every object has sorted keys
    let value = serde_json::to_value(save).map_err(|e| SaveError::CorruptSave(e.to_string()))?;
    let mut text = serde_json::to_string(&value).map_err(|e| SaveError::CorruptSave(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

impl World {
    /// Canonical save text: sorted keys, shortest round-trip floats.
    pub fn to_save_string(&self, with_journal: bool) -> Result<String, SaveError> {
        let save = WorldSave {
            format_version: FORMAT_VERSION,
            state: &self.state,
            journal: with_journal.then(|| self.oracle.ledger()),
        };
        to_canonical(&save)
    }

    /// Restores a world from save text. The journal, when present, becomes
    /// the oracle client's ledger so request ids carry on.
    pub fn from_save_str(text: &str, mut oracle: OracleClient, embedder: Box<dyn Embedder>) -> Result<World, SaveError> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| SaveError::CorruptSave(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| SaveError::CorruptSave("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(SaveError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let corrupt = |e: serde_json::Error| SaveError::CorruptSave(e.to_string());
        let fields = value.as_object_mut().ok_or_else(|| SaveError::CorruptSave("save is not an object".into()))?;
        fields.remove("format_version");
        let journal: Option<OracleLedger> = match fields.remove("journal") {
            Some(j) => Some(serde_json::from_value(j).map_err(corrupt)?),
            None => None,
        };
        let mut state: WorldState = serde_json::from_value(value).map_err(corrupt)?;
        restore_costs(&mut state)?;
        validate_state(&state)?;
        if let Some(ledger) = journal {
            oracle.set_ledger(ledger);
        }
        Ok(World::new(state, oracle, embedder))
    }
}

pub fn save_world(world: &World, path: &Path, with_journal: bool) -> Result<(), SaveError> {
    let text = world.to_save_string(with_journal)?;
    std::fs::write(path, text).map_err(|e| SaveError::Io(format!("{}: {e}", path.display())))
}

pub fn load_world(path: &Path, oracle: OracleClient, embedder: Box<dyn Embedder>) -> Result<World, SaveError> {
    let text = std::fs::read_to_string(path).map_err(|e| SaveError::Io(format!("{}: {e}", path.display())))?;
    World::from_save_str(&text, oracle, embedder)
}
