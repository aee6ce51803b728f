//! The built world: building roster, placement, interiors and roads.

mod interior;
mod placement;
mod roads;
mod routing;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Rect, Tile};
use crate::population::FamilyPlan;
use crate::terrain::TerrainGrid;

pub use interior::{layout_interior, FurnitureCatalog, FurnitureItem, Interior, PlacedFurniture, FURNITURE_CATALOG_VERSION};
pub use placement::{place_buildings, PlacementConfig};
pub use roads::{build_roads, RoadNetwork, ROAD_COST_FACTOR};
pub use routing::{astar, dijkstra, is_two_opt_optimal, tour_length, tsp_route, two_opt_gain, CostGrid, NoPath, Path};

pub const MIN_BUILDINGS: usize = 5;
pub const MAX_BUILDINGS: usize = 30;
/// A building counts as isolated when no other footprint is within this many tiles.
pub const ISOLATION_CLEARANCE: u32 = 6;
pub const FILLER_CAPACITY: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SettlementError {
    #[error("population needs {needed} buildings, more than the maximum of {MAX_BUILDINGS}")]
    PopulationTooLarge { needed: usize },
    #[error("not enough buildable area after {attempts} attempts")]
    InsufficientBuildableArea { attempts: u32 },
    #[error("building {0} cannot be reached from the others")]
    DisconnectedSettlement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingKind {
    Residence,
    Workplace,
    Civic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub kind: BuildingKind,
    /// `residence`, `workplace` or a civic kind such as `city-hall`.
    pub function_tag: String,
    pub width: i32,
    pub height: i32,
    pub capacity: u32,
    pub description: String,
    /// Work roles housed by a workplace.
    #[serde(default)]
    pub roles: Vec<String>,
    /// Index of the family a residence was planned for; fillers have none.
    #[serde(default)]
    pub family: Option<usize>,
}

impl BuildingSpec {
    pub fn residence(capacity: u32) -> Self {
        let (width, height) = match capacity {
            0..=2 => (4, 3),
            3..=4 => (5, 4),
            _ => (6, 4),
        };
        Self {
            kind: BuildingKind::Residence,
            function_tag: "residence".into(),
            width,
            height,
            capacity: capacity.max(1),
            description: String::new(),
            roles: vec![],
            family: None,
        }
    }

    pub fn workplace(roles: Vec<String>) -> Self {
        Self {
            kind: BuildingKind::Workplace,
            function_tag: "workplace".into(),
            width: 6,
            height: 4,
            capacity: 0,
            description: String::new(),
            roles,
            family: None,
        }
    }

    pub fn civic() -> Self {
        Self {
            kind: BuildingKind::Civic,
            function_tag: "city-hall".into(),
            width: 7,
            height: 5,
            capacity: 0,
            description: String::new(),
            roles: vec![],
            family: None,
        }
    }

    /// What the building is for, in words, for description prompts.
    pub fn function_phrase(&self) -> String {
        match self.kind {
            BuildingKind::Residence => "family home".into(),
            BuildingKind::Workplace => format!("workplace for {}", self.roles.join(" and ")),
            BuildingKind::Civic => self.function_tag.replace('-', " "),
        }
    }
}

/// Roster for the planned families: one residence each, one workplace per
/// role group, one civic building, then filler residences up to the
/// minimum. Role groups are merged when the maximum would be exceeded.
pub fn derive_building_needs(plans: &[FamilyPlan]) -> Result<Vec<BuildingSpec>, SettlementError> {
    let mut roles: Vec<String> = Vec::new();
    for plan in plans {
        for m in &plan.members {
            if let Some(r) = &m.work_role {
                if !roles.contains(r) {
                    roles.push(r.clone());
                }
            }
        }
    }
    let fixed = plans.len() + 1;
    let min_workplaces = usize::from(!roles.is_empty());
    if fixed + min_workplaces > MAX_BUILDINGS {
        return Err(SettlementError::PopulationTooLarge {
            needed: fixed + min_workplaces,
        });
    }
    let groups = roles.len().min(MAX_BUILDINGS - fixed);
    let mut specs: Vec<BuildingSpec> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| BuildingSpec {
            family: Some(i),
            ..BuildingSpec::residence(p.members.len() as u32)
        })
        .collect();
    if groups > 0 {
        // contiguous chunks, sizes differing by at most one
        let base = roles.len() / groups;
        let extra = roles.len() % groups;
        let mut it = roles.into_iter();
        for g in 0..groups {
            let take = base + usize::from(g < extra);
            specs.push(BuildingSpec::workplace(it.by_ref().take(take).collect()));
        }
    }
    specs.push(BuildingSpec::civic());
    while specs.len() < MIN_BUILDINGS {
        specs.push(BuildingSpec::residence(FILLER_CAPACITY));
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub spec: BuildingSpec,
    /// Top-left tile of the footprint.
    pub origin: Tile,
    /// Street tile directly below the centre of the facade (the bottom edge).
    pub entrance: Tile,
    pub asset_ref: Option<String>,
}

impl Building {
    pub fn new(id: String, spec: BuildingSpec, origin: Tile) -> Self {
        let entrance = Tile::new(origin.x + spec.width / 2, origin.y + spec.height);
        Self {
            id,
            spec,
            origin,
            entrance,
            asset_ref: None,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.origin.x, self.origin.y, self.spec.width, self.spec.height)
    }

    /// The tile that must stay clear in front of the entrance.
    pub fn approach(&self) -> Tile {
        self.entrance.offset(0, 1)
    }

    pub fn name(&self) -> &str {
        if self.spec.description.is_empty() {
            &self.id
        } else {
            &self.spec.description
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub buildings: Vec<Building>,
    pub street_rows: Vec<i32>,
    pub bounds: Rect,
}

impl Settlement {
    pub fn get(&self, id: &str) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    /// Row-major mask of footprint tiles.
    pub fn footprint_mask(&self, width: u32, height: u32) -> Vec<bool> {
        let mut mask = vec![false; (width * height) as usize];
        for b in &self.buildings {
            for t in b.rect().tiles() {
                if t.x >= 0 && t.y >= 0 && (t.x as u32) < width && (t.y as u32) < height {
                    mask[t.y as usize * width as usize + t.x as usize] = true;
                }
            }
        }
        mask
    }

    pub fn building_at(&self, t: Tile) -> Option<&Building> {
        self.buildings.iter().find(|b| b.rect().contains(t))
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        let r = self.buildings[i].rect();
        self.buildings
            .iter()
            .enumerate()
            .all(|(j, o)| j == i || r.chebyshev_gap(&o.rect()) > ISOLATION_CLEARANCE)
    }

    pub fn shares_street(&self, i: usize) -> bool {
        let row = self.buildings[i].entrance.y;
        self.street_rows.contains(&row)
            && self
                .buildings
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.entrance.y == row)
    }

    /// Checks every structural invariant; the message names the first failure.
    pub fn validate(&self, terrain: Option<&TerrainGrid>, slope_threshold: f64) -> Result<(), String> {
        let n = self.buildings.len();
        if !(MIN_BUILDINGS..=MAX_BUILDINGS).contains(&n) {
            return Err(format!("building count {n} outside [{MIN_BUILDINGS}, {MAX_BUILDINGS}]"));
        }
        let mut ids = BTreeSet::new();
        for (i, b) in self.buildings.iter().enumerate() {
            if !ids.insert(b.id.as_str()) {
                return Err(format!("duplicate building id {}", b.id));
            }
            if !(2..=12).contains(&b.spec.width) || !(2..=12).contains(&b.spec.height) {
                return Err(format!("{} footprint {}x{} out of range", b.id, b.spec.width, b.spec.height));
            }
            if b.spec.kind == BuildingKind::Residence && b.spec.capacity < 1 {
                return Err(format!("{} is a residence without capacity", b.id));
            }
            if b.entrance != Tile::new(b.origin.x + b.spec.width / 2, b.origin.y + b.spec.height) {
                return Err(format!("{} entrance is not centred below the facade", b.id));
            }
            for o in &self.buildings[i + 1..] {
                if b.rect().intersects(&o.rect()) {
                    return Err(format!("{} overlaps {}", b.id, o.id));
                }
            }
            for o in &self.buildings {
                if o.rect().contains(b.entrance) || o.rect().contains(b.approach()) {
                    return Err(format!("entrance of {} is blocked by {}", b.id, o.id));
                }
            }
            if !self.shares_street(i) && !self.is_isolated(i) {
                return Err(format!("{} is neither on a shared street nor isolated", b.id));
            }
            if let Some(t) = terrain {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for tile in b.rect().tiles().chain([b.entrance, b.approach()]) {
                    if !t.is_passable(tile) {
                        return Err(format!("{} stands on impassable tile ({}, {})", b.id, tile.x, tile.y));
                    }
                }
                for tile in b.rect().tiles() {
                    let e = t.elevation_at(tile);
                    lo = lo.min(e);
                    hi = hi.max(e);
                }
                if hi - lo > slope_threshold {
                    return Err(format!("{} stands on a slope of {:.3}", b.id, hi - lo));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{FamilyRole, MemberPlan};

    fn plan(index: usize, size: usize, role: &str) -> FamilyPlan {
        FamilyPlan {
            index,
            members: (0..size)
                .map(|i| MemberPlan {
                    role: if i == 0 { FamilyRole::Parent } else { FamilyRole::Child },
                    work_role: (i == 0).then(|| role.to_string()),
                })
                .collect(),
        }
    }

    fn count(specs: &[BuildingSpec], kind: BuildingKind) -> usize {
        specs.iter().filter(|s| s.kind == kind).count()
    }

    #[test]
    fn village_minimum() {
        let specs = derive_building_needs(&[plan(0, 4, "farmer")]).unwrap();
        assert_eq!(specs.len(), 5);
        assert_eq!(count(&specs, BuildingKind::Residence), 3);
        assert_eq!(count(&specs, BuildingKind::Workplace), 1);
        assert_eq!(count(&specs, BuildingKind::Civic), 1);
        assert_eq!(specs[0].capacity, 4);
    }

    #[test]
    fn twelve_families_twelve_roles() {
        let plans: Vec<_> = (0..12).map(|i| plan(i, 2, &format!("role{i}"))).collect();
        let specs = derive_building_needs(&plans).unwrap();
        assert_eq!(specs.len(), 25);
    }

    #[test]
    fn roles_merge_to_stay_under_thirty() {
        let plans: Vec<_> = (0..20).map(|i| plan(i, 1, &format!("role{i}"))).collect();
        let specs = derive_building_needs(&plans).unwrap();
        assert_eq!(specs.len(), 30);
        let roles: usize = specs.iter().map(|s| s.roles.len()).sum();
        assert_eq!(roles, 20);
    }

    #[test]
    fn forty_families_are_too_many() {
        let plans: Vec<_> = (0..40).map(|i| plan(i, 1, &format!("role{i}"))).collect();
        assert!(matches!(derive_building_needs(&plans), Err(SettlementError::PopulationTooLarge { .. })));
    }
}
