use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{stream_rng, Counters, SimConfig, SimulationClock, World, WorldState};
use crate::agents::{generate_routine, waking_hours, Agent, MemoryStream, PlanBook, RoutineContext};
use crate::assets::{resolve_asset, AssetError, AssetLibrary, SizeTable};
use crate::oracle::{slots, Embedder, OracleClient, OracleError, ResponseSchema};
use crate::population::{
    assign_buildings, ensure_connectedness, generate_lore, plan_families, seed_relationships, validate_population, FamilyRole, NpcProfile,
    PopulationConfig, Site,
};
use crate::settlement::{
    build_roads, derive_building_needs, layout_interior, place_buildings, BuildingKind, FurnitureCatalog, PlacementConfig, SettlementError,
};
use crate::terrain::{analogize_biomes, classify_biomes, generate_fields, place_flora, BiomeTable, TerrainConfig, TerrainError, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Spec,
    Terrain,
    Analogy,
    Families,
    Settlement,
    Roads,
    Interiors,
    Flora,
    Population,
    Relationships,
    Assets,
    Routines,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("{0}")]
    Invalid(String),
}

/// A failed generation. No partial world is returned.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("generation failed at stage {stage}: {source}")]
pub struct GenerationError {
    pub stage: Stage,
    pub source: StageError,
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> GenerationError {
    move |e| GenerationError { stage, source: e.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub millis: u64,
    pub detail: String,
}

/// What a generation run produced and how long each stage took.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub stages: Vec<StageReport>,
    pub buildings: usize,
    pub families: usize,
    pub npcs: usize,
    pub relationships: usize,
    pub emergent_links: usize,
    pub flora: usize,
    pub road_tiles: usize,
    pub placement_attempts: u32,
    pub oracle_requests: u64,
    pub analogy_notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub terrain: TerrainConfig,
    pub placement: PlacementConfig,
    /// Fresh placements tried when the roads cannot join every building.
    pub placement_retries: u32,
    pub population: PopulationConfig,
    pub biomes: BiomeTable,
    pub furniture: FurnitureCatalog,
    pub sizes: SizeTable,
    /// Defaults to the built-in library embedded with the world's embedder.
    pub library: Option<AssetLibrary>,
    pub sim: SimConfig,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            terrain: TerrainConfig::default(),
            placement: PlacementConfig::default(),
            placement_retries: 8,
            population: PopulationConfig::default(),
            biomes: BiomeTable::default_table(),
            furniture: FurnitureCatalog::default_catalog(),
            sizes: SizeTable::default(),
            library: None,
            sim: SimConfig::default(),
        }
    }
}

struct Timer {
    report: GenerationReport,
    started: Instant,
}

impl Timer {
    fn done(&mut self, stage: Stage, detail: String) {
        self.report.stages.push(StageReport {
            stage,
            millis: self.started.elapsed().as_millis() as u64,
            detail,
        });
        self.started = Instant::now();
    }
}

fn routine_context(state: &WorldState, agent: &Agent) -> RoutineContext {
    let mut ctx = agent.bare_context();
    let buildings = std::iter::once(agent.profile.home.as_str()).chain(agent.profile.workplace.as_deref());
    for b in buildings {
        if let Some(interior) = state.interiors.iter().find(|i| i.building_id == b) {
            for f in &interior.furniture {
                ctx.objects.insert(f.id.clone(), b.to_string());
                ctx.object_descriptions.insert(f.id.clone(), f.description.clone());
            }
        }
    }
    ctx
}

pub(super) fn full_routine_context(state: &WorldState, npc: &str) -> Option<RoutineContext> {
    state.agents.get(npc).map(|a| routine_context(state, a))
}

/// Runs the whole pipeline: terrain, analogy, families, buildings, roads,
/// interiors, flora, people, relationships, assets and the first day's
/// routines.
pub fn generate_world(
    spec: &WorldSpec,
    options: &GenerationOptions,
    mut oracle: OracleClient,
    embedder: Box<dyn Embedder>,
) -> Result<(World, GenerationReport), GenerationError> {
    let mut timer = Timer {
        report: GenerationReport::default(),
        started: Instant::now(),
    };
    let seed = spec.seed;
    let desc = spec.description.as_str();
    spec.validate().map_err(at(Stage::Spec))?;
    timer.done(Stage::Spec, String::new());

    let fields = generate_fields(spec, &options.terrain);
    let mut terrain = classify_biomes(&fields, &options.biomes, spec.sea_level).map_err(at(Stage::Terrain))?;
    timer.done(Stage::Terrain, format!("{}x{}", terrain.width, terrain.height));

    let (biomes, notes) = analogize_biomes(&options.biomes, desc, &mut oracle).map_err(at(Stage::Analogy))?;
    timer.report.analogy_notes = notes;
    timer.done(Stage::Analogy, format!("{} biomes", biomes.biomes.len()));

    let plans = plan_families(spec.target_population, desc, &mut oracle, &options.population, &mut stream_rng(seed, "families", 0));
    timer.done(Stage::Families, format!("{} families", plans.len()));

    let mut specs = derive_building_needs(&plans).map_err(at(Stage::Settlement))?;
    for s in &mut specs {
        let function = s.function_phrase();
        s.description = oracle
            .ask("building_description", slots([("world", desc), ("function", function.as_str())]), ResponseSchema::FreeText)
            .ok()
            .map(|r| r.as_text().trim().to_string())
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| format!("a {function} with a large roof"));
    }
    let mut placed = None;
    let mut last_disconnect = None;
    for attempt in 0..options.placement_retries.max(1) {
        timer.report.placement_attempts = attempt + 1;
        let settlement = place_buildings(&specs, &terrain, &options.placement, &mut stream_rng(seed, "placement", u64::from(attempt)))
            .map_err(at(Stage::Settlement))?;
        let mut routed = terrain.clone();
        match build_roads(&settlement, &mut routed) {
            Ok(roads) => {
                placed = Some((settlement, roads, routed));
                break;
            }
            Err(e @ SettlementError::DisconnectedSettlement(_)) => last_disconnect = Some(e),
            Err(e) => return Err(at(Stage::Roads)(e)),
        }
    }
    let Some((mut settlement, roads, routed)) = placed else {
        return Err(at(Stage::Roads)(last_disconnect.expect("at least one attempt")));
    };
    terrain = routed;
    timer.done(Stage::Settlement, format!("{} buildings", settlement.buildings.len()));
    timer.done(Stage::Roads, format!("{} road tiles", roads.road_tiles.len()));

    let mut interiors = Vec::with_capacity(settlement.buildings.len());
    for (i, b) in settlement.buildings.iter().enumerate() {
        let interior = layout_interior(b, &options.furniture, &mut stream_rng(seed, "interior", i as u64));
        interior
            .validate()
            .map_err(|e| at(Stage::Interiors)(StageError::Invalid(format!("{}: {e}", b.id))))?;
        interiors.push(interior);
    }
    timer.done(Stage::Interiors, format!("{} furniture items", interiors.iter().map(|i| i.furniture.len()).sum::<usize>()));

    let mut reserved = settlement.footprint_mask(terrain.width, terrain.height);
    let keep_clear = roads
        .road_tiles
        .iter()
        .copied()
        .chain(settlement.buildings.iter().flat_map(|b| [b.entrance, b.approach()]));
    for t in keep_clear {
        if terrain.in_bounds(t) {
            reserved[terrain.index(t)] = true;
        }
    }
    let mut flora = place_flora(&terrain, &biomes, &reserved, &mut stream_rng(seed, "flora", 0));
    timer.done(Stage::Flora, format!("{} objects", flora.len()));

    let mut taken = BTreeSet::new();
    let mut families = Vec::with_capacity(plans.len());
    let mut profiles: Vec<NpcProfile> = Vec::new();
    for plan in &plans {
        let (lore, people) = generate_lore(plan, desc, &mut oracle, &mut taken).map_err(at(Stage::Population))?;
        families.push(lore);
        profiles.extend(people);
    }
    let site = |b: &crate::settlement::Building| Site {
        building_id: b.id.clone(),
        entrance: b.entrance,
        capacity: b.spec.capacity,
        roles: b.spec.roles.clone(),
    };
    let mut residences: Vec<(usize, Site)> = settlement
        .buildings
        .iter()
        .filter_map(|b| b.spec.family.map(|f| (f, site(b))))
        .collect();
    residences.sort_by_key(|r| r.0);
    let residences: Vec<Site> = residences.into_iter().map(|r| r.1).collect();
    let workplaces: Vec<Site> = settlement
        .buildings
        .iter()
        .filter(|b| b.spec.kind == BuildingKind::Workplace)
        .map(site)
        .collect();
    let invalid = |e: String| at(Stage::Population)(StageError::Invalid(e));
    assign_buildings(&mut families, &mut profiles, &residences, &workplaces).map_err(invalid)?;
    validate_population(&families, &profiles).map_err(invalid)?;
    timer.done(Stage::Population, format!("{} npcs", profiles.len()));

    let mut state = WorldState {
        spec: spec.clone(),
        config: options.sim.clone(),
        biomes,
        terrain,
        settlement: settlement.clone(),
        interiors,
        roads,
        flora: vec![],
        families,
        agents: Default::default(),
        relationships: vec![],
        conversations: Default::default(),
        finished_conversations: vec![],
        plans: PlanBook::default(),
        clock: SimulationClock::default(),
        commands: Default::default(),
        object_states: Default::default(),
        counters: Counters::default(),
    };

    let surnames: BTreeMap<String, String> = state.families.iter().map(|f| (f.family_id.clone(), f.surname.clone())).collect();
    let workplace_names: BTreeMap<String, String> = workplaces.iter().map(|w| (w.building_id.clone(), state.workplace_label(&w.building_id))).collect();
    let mut streams: BTreeMap<String, MemoryStream> = profiles.iter().map(|p| (p.npc_id.clone(), MemoryStream::new(&p.npc_id))).collect();
    let mut relationships = seed_relationships(&profiles, &surnames, &workplace_names, &mut oracle, embedder.as_ref(), &mut streams)
        .map_err(at(Stage::Relationships))?;
    let commonality = |a: &NpcProfile, b: &NpcProfile| -> Option<String> {
        match (&a.work_role, &b.work_role) {
            (Some(x), Some(y)) if x == y => Some(format!("their work as {x}s")),
            _ if a.family_role == FamilyRole::Child && b.family_role == FamilyRole::Child => Some("growing up in the village".to_string()),
            _ => None,
        }
    };
    let emergent = ensure_connectedness(
        &profiles,
        &mut relationships,
        spec.degrees_cap,
        &commonality,
        "the village square",
        &mut oracle,
        embedder.as_ref(),
        &mut streams,
        &mut stream_rng(seed, "connect", 0),
    )
    .map_err(at(Stage::Relationships))?;
    timer.report.emergent_links = emergent;
    timer.done(Stage::Relationships, format!("{} relationships", relationships.len()));

    let library = match &options.library {
        Some(l) => l.clone(),
        None => AssetLibrary::builtin(embedder.as_ref()),
    };
    let mut cache: BTreeMap<(String, String), (u32, String)> = BTreeMap::new();
    let mut resolve = |description: &str, tag: &str, oracle: &mut OracleClient| -> Result<(u32, String), GenerationError> {
        let key = (description.to_string(), tag.to_string());
        if let Some(hit) = cache.get(&key) {
            return Ok(hit.clone());
        }
        let (req, id) = resolve_asset(description, tag, &library, embedder.as_ref(), oracle, &options.sizes).map_err(at(Stage::Assets))?;
        cache.insert(key, (req.estimated_size, id.clone()));
        Ok((req.estimated_size, id))
    };
    for b in &mut settlement.buildings {
        let (_, id) = resolve(&b.spec.description, &b.spec.function_tag, &mut oracle)?;
        b.asset_ref = Some(id);
    }
    for interior in &mut state.interiors {
        for f in &mut interior.furniture {
            let (_, id) = resolve(&f.description, &f.furniture_tag, &mut oracle)?;
            f.asset_ref = Some(id);
        }
    }
    for obj in &mut flora {
        let (size, id) = resolve(&obj.descriptor, "flora", &mut oracle)?;
        obj.asset_ref = Some(id);
        obj.size = size;
    }
    state.settlement = settlement;
    state.flora = flora;
    timer.done(Stage::Assets, format!("{} distinct descriptions", cache.len()));

    let (wake, sleep) = waking_hours(spec.day_length);
    for p in profiles {
        let stream = streams.remove(&p.npc_id).unwrap_or_else(|| MemoryStream::new(&p.npc_id));
        state.agents.insert(p.npc_id.clone(), Agent::new(p, stream, wake, sleep));
    }
    state.relationships = relationships;
    let ids: Vec<String> = state.agents.keys().cloned().collect();
    for id in &ids {
        let ctx = full_routine_context(&state, id).expect("listed above");
        let routine = generate_routine(&ctx, 0, &mut oracle);
        state.agents.get_mut(id).expect("listed above").routines.insert(0, routine);
    }
    timer.done(Stage::Routines, format!("{} routines", ids.len()));

    super::validate_state(&state).map_err(|e| at(Stage::Routines)(StageError::Invalid(e.to_string())))?;

    let mut report = timer.report;
    report.buildings = state.settlement.buildings.len();
    report.families = state.families.len();
    report.npcs = state.agents.len();
    report.relationships = state.relationships.len();
    report.flora = state.flora.len();
    report.road_tiles = state.roads.road_tiles.len();
    report.oracle_requests = oracle.ledger().next_request_id;
    Ok((World::new(state, oracle, embedder), report))
}
