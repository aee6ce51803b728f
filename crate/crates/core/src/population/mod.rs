//! Families, individual profiles and the social graph that links them.

mod social;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Tile;
use crate::oracle::{slots, OracleClient, OracleError, ResponseSchema};

pub use social::{
    all_pairs_distances, diameter, ensure_connectedness, seed_relationships, Relationship, RelationshipKind, SocialGraph,
    SEED_MEMORY_TIME,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyRole {
    Parent,
    Adult,
    Child,
}

impl FamilyRole {
    pub fn is_adult(self) -> bool {
        !matches!(self, FamilyRole::Child)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyRole::Parent => "parent",
            FamilyRole::Adult => "adult",
            FamilyRole::Child => "child",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPlan {
    pub role: FamilyRole,
    pub work_role: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPlan {
    pub index: usize,
    pub members: Vec<MemberPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Relative weight of family sizes 1, 2, ...
    pub size_weights: Vec<u32>,
    pub fallback_roles: Vec<String>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            size_weights: vec![1, 1, 1, 1, 1],
            fallback_roles: ["farmer", "baker", "smith", "weaver", "merchant"].map(String::from).to_vec(),
        }
    }
}

/// Work roles for this world, from the oracle or the configured fallback.
pub fn workplace_roles(world_description: &str, oracle: &mut OracleClient, config: &PopulationConfig) -> Vec<String> {
    let from_oracle = oracle
        .ask("workplace_roles", slots([("world", world_description)]), ResponseSchema::JsonObject)
        .ok()
        .and_then(|r| r.as_json().and_then(|m| m.get("roles")).and_then(|v| v.as_array()).cloned())
        .map(|roles| {
            let mut out: Vec<String> = Vec::new();
            for r in roles.iter().filter_map(|v| v.as_str()).map(str::trim).filter(|r| !r.is_empty()) {
                if !out.iter().any(|o| o.eq_ignore_ascii_case(r)) {
                    out.push(r.to_string());
                }
            }
            out
        })
        .unwrap_or_default();
    if from_oracle.is_empty() {
        config.fallback_roles.clone()
    } else {
        from_oracle
    }
}

/// Splits the target population into families. Sizes are drawn from the
/// configured distribution and the last family takes the remainder, so the
/// sizes always sum to the target. The first two members of a larger family
/// are parents, the rest children; a family of one is a single adult.
pub fn plan_families<R: Rng + ?Sized>(
    target_population: u32,
    world_description: &str,
    oracle: &mut OracleClient,
    config: &PopulationConfig,
    rng: &mut R,
) -> Vec<FamilyPlan> {
    let roles = workplace_roles(world_description, oracle, config);
    let total_weight: u32 = config.size_weights.iter().sum();
    let mut remaining = target_population as usize;
    let mut plans = Vec::new();
    while remaining > 0 {
        let mut pick = rng.random_range(0..total_weight.max(1));
        let mut size = 1;
        for (i, w) in config.size_weights.iter().enumerate() {
            if pick < *w {
                size = i + 1;
                break;
            }
            pick -= w;
        }
        let size = size.min(remaining);
        remaining -= size;
        let members = (0..size)
            .map(|i| {
                let role = match (size, i) {
                    (1, _) => FamilyRole::Adult,
                    (_, 0 | 1) => FamilyRole::Parent,
                    _ => FamilyRole::Child,
                };
                let work_role = role.is_adult().then(|| roles[rng.random_range(0..roles.len())].clone());
                MemberPlan { role, work_role }
            })
            .collect();
        plans.push(FamilyPlan {
            index: plans.len(),
            members,
        });
    }
    plans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyLore {
    pub family_id: String,
    pub surname: String,
    pub background: String,
    pub residence: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitChange {
    pub day: u32,
    pub added: Option<String>,
    pub removed: Option<String>,
    /// Memory id of the reflection that motivated the change.
    pub insight_ref: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcProfile {
    pub npc_id: String,
    pub name: String,
    pub surname: String,
    pub family_id: String,
    pub family_role: FamilyRole,
    pub individual_lore: String,
    pub traits: Vec<String>,
    pub work_role: Option<String>,
    pub workplace: Option<String>,
    pub home: String,
    pub position: Tile,
    pub evolution: Vec<TraitChange>,
}

impl NpcProfile {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.name, self.surname)
    }

    pub fn traits_text(&self) -> String {
        self.traits.join(", ")
    }
}

pub const MIN_TRAITS: usize = 3;
pub const MAX_TRAITS: usize = 6;

const GIVEN_NAMES: &[&str] = &[
    "Ada", "Bram", "Cora", "Dain", "Elsa", "Finn", "Greta", "Hugo", "Ines", "Jon", "Kara", "Lars", "Mira", "Nils", "Orla", "Per",
    "Rhea", "Sven", "Tova", "Ulf", "Vera", "Wim", "Yara", "Zeno", "Alma", "Bo", "Cleo", "Dag", "Eva", "Fritz", "Gil", "Hedda",
    "Ivo", "Juna", "Knut", "Lena", "Mats", "Nora", "Otto", "Pia", "Quinn", "Rolf", "Sara", "Tor", "Una", "Vidar", "Wren", "Xena",
    "Yngve", "Zora",
];

const SURNAMES: &[&str] = &[
    "Miller", "Baker", "Fisher", "Carter", "Thatcher", "Weaver", "Cooper", "Mason", "Turner", "Fletcher", "Hayward", "Brewer",
    "Chandler", "Dyer", "Forester", "Glover", "Hunter", "Joiner", "Potter", "Sawyer", "Shepherd", "Tanner", "Walker", "Wright",
];

const TRAIT_POOL: &[&str] = &[
    "kind", "curious", "stubborn", "cheerful", "patient", "proud", "shy", "generous", "ambitious", "careful", "honest", "witty",
    "restless", "gentle",
];

fn fallback_traits(family: usize, member: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64((family as u64) << 16 | member as u64);
    let mut out = Vec::new();
    while out.len() < MIN_TRAITS {
        let t = TRAIT_POOL[rng.random_range(0..TRAIT_POOL.len())].to_string();
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

fn unused_name(taken: &BTreeSet<String>, start: usize) -> String {
    for k in 0.. {
        let base = GIVEN_NAMES[(start + k) % GIVEN_NAMES.len()];
        let round = (start + k) / GIVEN_NAMES.len();
        let name = if round == 0 { base.to_string() } else { format!("{base}{}", round + 1) };
        if !taken.contains(&name.to_lowercase()) {
            return name;
        }
    }
    unreachable!()
}

struct ParsedLore {
    surname: String,
    background: String,
    members: Vec<(String, String, Vec<String>)>,
}

fn parse_lore(map: &serde_json::Map<String, serde_json::Value>, size: usize) -> Option<ParsedLore> {
    let text = |m: &serde_json::Map<String, serde_json::Value>, k: &str| {
        m.get(k).and_then(|v| v.as_str()).map(str::trim).filter(|s| !s.is_empty()).map(String::from)
    };
    let surname = text(map, "surname")?;
    let background = text(map, "background")?;
    let members = map.get("members")?.as_array()?;
    if members.len() != size {
        return None;
    }
    let mut out = Vec::new();
    for m in members {
        let m = m.as_object()?;
        let name = text(m, "name")?;
        let lore = text(m, "lore")?;
        let mut traits: Vec<String> = Vec::new();
        for t in m.get("traits")?.as_array()? {
            let t = t.as_str()?.trim();
            if !t.is_empty() && !traits.iter().any(|o| o.eq_ignore_ascii_case(t)) {
                traits.push(t.to_string());
            }
        }
        if !(MIN_TRAITS..=MAX_TRAITS).contains(&traits.len()) {
            return None;
        }
        out.push((name, lore, traits));
    }
    Some(ParsedLore {
        surname,
        background,
        members: out,
    })
}

/// Background for a family and profiles for its members.
///
/// A malformed oracle answer is asked once more; if that also fails the
/// family gets templated lore. Names already used by earlier families are
/// replaced so every first name is unique. Homes, workplaces and positions
/// are filled in later by [`assign_buildings`].
pub fn generate_lore(
    plan: &FamilyPlan,
    world_description: &str,
    oracle: &mut OracleClient,
    taken_names: &mut BTreeSet<String>,
) -> Result<(FamilyLore, Vec<NpcProfile>), OracleError> {
    let roles: Vec<String> = plan
        .members
        .iter()
        .map(|m| match &m.work_role {
            Some(w) => format!("{} ({w})", m.role.as_str()),
            None => m.role.as_str().to_string(),
        })
        .collect();
    let request = slots([
        ("world", world_description.to_string()),
        ("family_index", plan.index.to_string()),
        ("size", plan.members.len().to_string()),
        ("roles", roles.join(", ")),
    ]);
    let mut parsed = None;
    for _ in 0..2 {
        match oracle.ask("family_lore", request.clone(), ResponseSchema::JsonObject) {
            Ok(r) => {
                parsed = r.as_json().and_then(|m| parse_lore(m, plan.members.len()));
                if parsed.is_some() {
                    break;
                }
            }
            Err(e) if e.is_schema_violation() => {}
            Err(OracleError::UnknownTemplate(t)) => return Err(OracleError::UnknownTemplate(t)),
            Err(_) => break,
        }
    }

    let family_id = format!("family-{:02}", plan.index);
    let surname = parsed
        .as_ref()
        .map(|p| p.surname.clone())
        .unwrap_or_else(|| SURNAMES[plan.index % SURNAMES.len()].to_string());
    let background = parsed
        .as_ref()
        .map(|p| p.background.clone())
        .unwrap_or_else(|| format!("The {surname} family has lived here for generations."));
    let mut profiles = Vec::new();
    for (i, m) in plan.members.iter().enumerate() {
        let given = parsed.as_ref().map(|p| p.members[i].0.clone());
        let name = match given {
            Some(n) if !taken_names.contains(&n.to_lowercase()) => n,
            _ => unused_name(taken_names, plan.index * 5 + i),
        };
        taken_names.insert(name.to_lowercase());
        let (lore, traits) = match &parsed {
            Some(p) => (p.members[i].1.clone(), p.members[i].2.clone()),
            None => {
                let role = m.work_role.clone().unwrap_or_else(|| m.role.as_str().to_string());
                (format!("{name}, a {role} of the {surname} family"), fallback_traits(plan.index, i))
            }
        };
        profiles.push(NpcProfile {
            npc_id: format!("npc-{:02}-{i}", plan.index),
            name,
            surname: surname.clone(),
            family_id: family_id.clone(),
            family_role: m.role,
            individual_lore: lore,
            traits,
            work_role: m.work_role.clone(),
            workplace: None,
            home: String::new(),
            position: Tile::new(0, 0),
            evolution: vec![],
        });
    }
    let lore = FamilyLore {
        family_id,
        surname,
        background,
        residence: String::new(),
        members: profiles.iter().map(|p| p.npc_id.clone()).collect(),
    };
    Ok((lore, profiles))
}

/// Where a building is, for assignment purposes.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub building_id: String,
    pub entrance: Tile,
    pub capacity: u32,
    pub roles: Vec<String>,
}

/// Gives family `i` residence `i` and every adult the workplace housing
/// their role. Positions start at the home entrance.
pub fn assign_buildings(families: &mut [FamilyLore], profiles: &mut [NpcProfile], residences: &[Site], workplaces: &[Site]) -> Result<(), String> {
    if residences.len() < families.len() {
        return Err(format!("{} families but {} residences", families.len(), residences.len()));
    }
    let by_role: BTreeMap<&str, &Site> = workplaces
        .iter()
        .flat_map(|w| w.roles.iter().map(move |r| (r.as_str(), w)))
        .collect();
    for (family, site) in families.iter_mut().zip(residences) {
        if (site.capacity as usize) < family.members.len() {
            return Err(format!("{} is too small for {}", site.building_id, family.family_id));
        }
        family.residence = site.building_id.clone();
        for p in profiles.iter_mut().filter(|p| p.family_id == family.family_id) {
            p.home = site.building_id.clone();
            p.position = site.entrance;
            if let Some(role) = &p.work_role {
                let w = by_role.get(role.as_str()).ok_or_else(|| format!("no workplace for role {role}"))?;
                p.workplace = Some(w.building_id.clone());
            }
        }
    }
    Ok(())
}

/// Invariants of a finished population.
pub fn validate_population(families: &[FamilyLore], profiles: &[NpcProfile]) -> Result<(), String> {
    let ids: BTreeSet<&str> = profiles.iter().map(|p| p.npc_id.as_str()).collect();
    if ids.len() != profiles.len() {
        return Err("duplicate npc id".into());
    }
    for f in families {
        if f.members.is_empty() {
            return Err(format!("{} has no members", f.family_id));
        }
    }
    for p in profiles {
        if p.family_role.is_adult() != p.workplace.is_some() {
            return Err(format!("{} workplace does not match family role", p.npc_id));
        }
        if p.traits.is_empty() {
            return Err(format!("{} has no traits", p.npc_id));
        }
        let mut seen = BTreeSet::new();
        if !p.traits.iter().all(|t| seen.insert(t.to_lowercase())) {
            return Err(format!("{} has duplicate traits", p.npc_id));
        }
        if !families.iter().any(|f| f.family_id == p.family_id && f.members.contains(&p.npc_id)) {
            return Err(format!("{} is not listed in its family", p.npc_id));
        }
    }
    Ok(())
}
