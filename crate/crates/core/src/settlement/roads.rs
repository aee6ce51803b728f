use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::routing::{astar, tsp_route, CostGrid};
use super::{Settlement, SettlementError};
use crate::geom::Tile;
use crate::terrain::TerrainGrid;

/// Move-cost multiplier applied to road tiles.
pub const ROAD_COST_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    /// Building ids in visiting order; the tour closes back on the first.
    pub tour: Vec<String>,
    /// One path per consecutive tour pair, entrance to entrance.
    pub segments: Vec<Vec<Tile>>,
    /// Sorted, deduplicated union of all segment tiles.
    pub road_tiles: Vec<Tile>,
}

impl RoadNetwork {
    /// Whether all `targets` lie in one 4-connected component of road tiles.
    pub fn connects(&self, targets: &[Tile]) -> bool {
        let set: BTreeSet<Tile> = self.road_tiles.iter().copied().collect();
        let Some(first) = targets.first() else { return true };
        if targets.len() == 1 {
            return true;
        }
        if !targets.iter().all(|t| set.contains(t)) {
            return false;
        }
        let mut seen = BTreeSet::from([*first]);
        let mut stack = vec![*first];
        while let Some(t) = stack.pop() {
            for n in t.neighbors4() {
                if set.contains(&n) && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        targets.iter().all(|t| seen.contains(t))
    }
}

/// Grid used for road routing: terrain costs with every footprint blocked.
pub fn road_grid(settlement: &Settlement, terrain: &TerrainGrid) -> CostGrid {
    let mut grid = CostGrid::from_terrain(terrain);
    for b in &settlement.buildings {
        grid.block(&b.rect());
    }
    grid
}

/// Orders the entrances with the tour solver and joins consecutive pairs by
/// cheapest paths. Road tiles get their move cost scaled on `terrain`.
///
/// Every pair is routable exactly when all entrances share one component of
/// the routing grid, so that is checked up front; a building outside the
/// largest group of mutually reachable entrances is reported.
pub fn build_roads(settlement: &Settlement, terrain: &mut TerrainGrid) -> Result<RoadNetwork, SettlementError> {
    let buildings = &settlement.buildings;
    if buildings.len() < 2 {
        return Ok(RoadNetwork {
            tour: buildings.iter().map(|b| b.id.clone()).collect(),
            ..RoadNetwork::default()
        });
    }
    let grid = road_grid(settlement, terrain);
    let labels = grid.components();
    let label = |t: Tile| if grid.in_bounds(t) { labels[grid.index(t)] } else { usize::MAX };
    let mut counts = std::collections::BTreeMap::new();
    for b in buildings {
        *counts.entry(label(b.entrance)).or_insert(0usize) += 1;
    }
    let main = counts
        .iter()
        .filter(|(l, _)| **l != usize::MAX)
        .max_by_key(|(l, c)| (**c, std::cmp::Reverse(**l)))
        .map(|(l, _)| *l);
    if let Some(outlier) = buildings.iter().find(|b| Some(label(b.entrance)) != main) {
        return Err(SettlementError::DisconnectedSettlement(outlier.id.clone()));
    }

    let points: Vec<(f64, f64)> = buildings
        .iter()
        .map(|b| (f64::from(b.entrance.x), f64::from(b.entrance.y)))
        .collect();
    let order = tsp_route(&points);
    let n = order.len();
    let pairs = if n == 2 { 1 } else { n };
    let mut segments = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let a = &buildings[order[k]];
        let b = &buildings[order[(k + 1) % n]];
        let path = astar(&grid, a.entrance, b.entrance).map_err(|_| SettlementError::DisconnectedSettlement(b.id.clone()))?;
        segments.push(path.tiles);
    }
    let road_tiles: Vec<Tile> = segments
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for t in &road_tiles {
        terrain.scale_cost(*t, ROAD_COST_FACTOR);
    }
    Ok(RoadNetwork {
        tour: order.iter().map(|&i| buildings[i].id.clone()).collect(),
        segments,
        road_tiles,
    })
}
