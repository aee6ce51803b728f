use rand::Rng;

use super::{Building, BuildingSpec, Settlement, SettlementError, ISOLATION_CLEARANCE};
use crate::geom::{Rect, Tile};
use crate::terrain::TerrainGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementConfig {
    /// Largest elevation spread allowed under one footprint.
    pub slope_threshold: f64,
    /// Row seeds tried before giving up.
    pub max_attempts: u32,
    /// Width of the band searched along each street.
    pub street_length: i32,
    pub max_rows: i32,
    /// Search radius for isolated placements, in tiles from the anchor.
    pub isolated_radius: i32,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            slope_threshold: 0.08,
            max_attempts: 50,
            street_length: 48,
            max_rows: 8,
            isolated_radius: 64,
        }
    }
}

struct Site<'a> {
    terrain: &'a TerrainGrid,
    config: &'a PlacementConfig,
    components: Vec<usize>,
    placed: Vec<Building>,
}

impl Site<'_> {
    fn component(&self, t: Tile) -> usize {
        self.components[self.terrain.index(t)]
    }

    /// Whether `spec` can stand at `origin` next to everything placed so
    /// far, keeping at least `gap` empty tiles to other footprints.
    fn fits(&self, spec: &BuildingSpec, origin: Tile, gap: u32, anchor_component: usize) -> bool {
        let probe = Building::new(String::new(), spec.clone(), origin);
        let rect = probe.rect();
        let t = self.terrain;
        let (entrance, approach) = (probe.entrance, probe.approach());
        if !t.is_passable(entrance) || !t.is_passable(approach) || self.component(entrance) != anchor_component {
            return false;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for tile in rect.tiles() {
            if !t.is_passable(tile) {
                return false;
            }
            let e = t.elevation_at(tile);
            lo = lo.min(e);
            hi = hi.max(e);
        }
        if hi - lo > self.config.slope_threshold {
            return false;
        }
        self.placed.iter().all(|b| {
            rect.chebyshev_gap(&b.rect()) > gap
                && !rect.contains(b.entrance)
                && !rect.contains(b.approach())
                && !b.rect().contains(entrance)
                && !b.rect().contains(approach)
        })
    }

    fn push(&mut self, spec: &BuildingSpec, origin: Tile) {
        let id = format!("building-{:02}", self.placed.len());
        self.placed.push(Building::new(id, spec.clone(), origin));
    }
}

fn pick_anchor<R: Rng + ?Sized>(terrain: &TerrainGrid, rng: &mut R) -> Option<Tile> {
    let (w, h) = (terrain.width as i32, terrain.height as i32);
    for _ in 0..256 {
        let t = Tile::new(rng.random_range(w / 4..=3 * w / 4), rng.random_range(h / 4..=3 * h / 4));
        if terrain.is_passable(t) {
            return Some(t);
        }
    }
    let passable: Vec<usize> = (0..terrain.len()).filter(|&i| terrain.passable[i]).collect();
    if passable.is_empty() {
        None
    } else {
        Some(terrain.tile_at(passable[rng.random_range(0..passable.len())]))
    }
}

/// Places the roster: greedy left-to-right packing along horizontal streets
/// around a random anchor, then isolated placements for whatever is left.
///
/// Streets are spaced so that buildings of neighbouring rows never block
/// each other's entrances. A street that ends up with a single building is
/// abandoned, since a lone building must be isolated instead. Each attempt
/// draws a new anchor; after `max_attempts` the area is deemed insufficient.
pub fn place_buildings<R: Rng + ?Sized>(
    specs: &[BuildingSpec],
    terrain: &TerrainGrid,
    config: &PlacementConfig,
    rng: &mut R,
) -> Result<Settlement, SettlementError> {
    let fail = SettlementError::InsufficientBuildableArea {
        attempts: config.max_attempts,
    };
    if specs.is_empty() {
        return Err(fail);
    }
    let components = crate::settlement::CostGrid::from_terrain(terrain).components();
    let h_max = specs.iter().map(|s| s.height).max().unwrap_or(2);
    let spacing = h_max + 2;
    for _ in 0..config.max_attempts {
        let Some(anchor) = pick_anchor(terrain, rng) else {
            return Err(fail);
        };
        let mut site = Site {
            terrain,
            config,
            components: components.clone(),
            placed: Vec::new(),
        };
        let anchor_component = site.component(anchor);
        let mut pool: Vec<usize> = (0..specs.len()).collect();
        let mut street_rows = Vec::new();

        let x_lo = (anchor.x - config.street_length / 2).max(0);
        let x_hi = (anchor.x + config.street_length / 2).min(terrain.width as i32 - 1);
        for k in 0..config.max_rows {
            if pool.is_empty() {
                break;
            }
            // 0, +1, -1, +2, -2, ...
            let step = if k % 2 == 0 { k / 2 } else { -(k / 2 + 1) };
            let row = anchor.y + step * spacing;
            let before = site.placed.len();
            let mut used = Vec::new();
            let mut x = x_lo;
            while x <= x_hi && !pool.is_empty() {
                let hit = pool.iter().position(|&s| {
                    let spec = &specs[s];
                    let origin = Tile::new(x - spec.width / 2, row - spec.height);
                    origin.x >= x_lo && origin.x + spec.width - 1 <= x_hi && site.fits(spec, origin, 1, anchor_component)
                });
                match hit {
                    Some(p) => {
                        let s = pool.remove(p);
                        let spec = &specs[s];
                        site.push(spec, Tile::new(x - spec.width / 2, row - spec.height));
                        used.push(s);
                        x += spec.width - spec.width / 2 + 1 + 1;
                    }
                    None => x += 1,
                }
            }
            match site.placed.len() - before {
                0 => {}
                1 => {
                    site.placed.pop();
                    pool.insert(0, used[0]);
                    pool.sort_unstable();
                }
                _ => street_rows.push(row),
            }
        }

        // isolated placements, nearest to the anchor first
        let mut i = 0;
        while i < pool.len() {
            let spec = &specs[pool[i]];
            let mut found = None;
            'search: for r in 0..=config.isolated_radius {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs() != r && dy.abs() != r {
                            continue;
                        }
                        let origin = anchor.offset(dx, dy);
                        if !site.fits(spec, origin, ISOLATION_CLEARANCE, anchor_component) {
                            continue;
                        }
                        found = Some(origin);
                        break 'search;
                    }
                }
            }
            match found {
                Some(origin) => {
                    site.push(spec, origin);
                    pool.remove(i);
                }
                None => i += 1,
            }
        }
        if !pool.is_empty() {
            continue;
        }

        let bounds = site
            .placed
            .iter()
            .map(Building::rect)
            .reduce(|a, b| a.union(&b))
            .unwrap_or(Rect::new(anchor.x, anchor.y, 1, 1));
        street_rows.sort_unstable();
        let settlement = Settlement {
            buildings: site.placed,
            street_rows,
            bounds,
        };
        // isolation is judged against the final layout; retry if a late
        // placement crowded a building that relied on it
        if (0..settlement.buildings.len()).all(|i| settlement.shares_street(i) || settlement.is_isolated(i)) {
            return Ok(settlement);
        }
    }
    Err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{classify_biomes, BiomeTable, Fields, ScalarField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn flat_world(size: u32, elevation: f64) -> TerrainGrid {
        let f = |v| ScalarField::filled(size, size, v);
        let fields = Fields {
            elevation: f(elevation),
            precipitation: f(0.3),
            temperature: f(0.5),
        };
        classify_biomes(&fields, &BiomeTable::default_table(), 0.35).unwrap()
    }

    fn five() -> Vec<BuildingSpec> {
        vec![
            BuildingSpec::residence(4),
            BuildingSpec::workplace(vec!["farmer".into()]),
            BuildingSpec::civic(),
            BuildingSpec::residence(2),
            BuildingSpec::residence(2),
        ]
    }

    #[test]
    fn five_small_buildings_share_one_street() {
        let terrain = flat_world(64, 0.5);
        let s = place_buildings(&five(), &terrain, &PlacementConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.buildings.len(), 5);
        assert_eq!(s.street_rows.len(), 1);
        assert!(s.buildings.iter().all(|b| b.entrance.y == s.street_rows[0]));
        s.validate(Some(&terrain), 0.08).unwrap();
    }

    #[test]
    fn all_water_is_insufficient() {
        let terrain = flat_world(64, 0.1);
        let r = place_buildings(&five(), &terrain, &PlacementConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(r, Err(SettlementError::InsufficientBuildableArea { .. })));
    }

    #[test]
    fn thirty_buildings_fit_on_flat_land() {
        let terrain = flat_world(128, 0.5);
        let mut specs = vec![BuildingSpec::civic()];
        specs.extend((0..20).map(|i| BuildingSpec::residence(1 + i % 5)));
        specs.extend((0..9).map(|i| BuildingSpec::workplace(vec![format!("r{i}")])));
        for seed in 0..5 {
            let s = place_buildings(&specs, &terrain, &PlacementConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(s.buildings.len(), 30);
            s.validate(Some(&terrain), 0.08).unwrap();
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let terrain = flat_world(64, 0.5);
        let cfg = PlacementConfig::default();
        let a = place_buildings(&five(), &terrain, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = place_buildings(&five(), &terrain, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
