use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BiomeTable, TerrainGrid};
use crate::geom::Tile;

/// A plant, rock or similar object placed on open ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalObject {
    pub id: String,
    pub position: Tile,
    pub biome: u16,
    /// Generic description the analog was derived from.
    pub generic: String,
    pub descriptor: String,
    pub asset_ref: Option<String>,
    pub size: u32,
}

/// Minimum Chebyshev distance between two natural objects.
pub const FLORA_SPACING: u32 = 2;

/// Scatters each biome's flora over its free tiles.
///
/// Every descriptor aims for `round(density * biome_tiles / 100)` objects.
/// Candidates are visited in a shuffled order and accepted only when no
/// object lies within [`FLORA_SPACING`] - 1 tiles, which keeps the result a
/// Poisson-disc-like sample. `reserved` is a row-major mask of tiles that
/// must stay clear (footprints, roads).
pub fn place_flora<R: Rng + ?Sized>(terrain: &TerrainGrid, table: &BiomeTable, reserved: &[bool], rng: &mut R) -> Vec<NaturalObject> {
    assert_eq!(reserved.len(), terrain.len(), "reservation mask size mismatch");
    let mut occupied = vec![false; terrain.len()];
    let mut objects = Vec::new();
    for (b, biome) in table.biomes.iter().enumerate() {
        if biome.water || biome.flora.iter().all(|f| f.density <= 0.0) {
            continue;
        }
        let tiles: Vec<usize> = (0..terrain.len()).filter(|&i| terrain.biome_ids[i] as usize == b).collect();
        let mut candidates: Vec<usize> = tiles.iter().copied().filter(|&i| terrain.passable[i] && !reserved[i]).collect();
        candidates.shuffle(rng);
        let mut cursor = candidates.into_iter();
        for (d, flora) in biome.flora.iter().enumerate() {
            let target = (flora.density * tiles.len() as f64 / 100.0).round() as usize;
            let mut placed = 0;
            while placed < target {
                let Some(i) = cursor.next() else { break };
                let t = terrain.tile_at(i);
                if crowded(terrain, &occupied, t) {
                    continue;
                }
                occupied[i] = true;
                objects.push(NaturalObject {
                    id: format!("flora-{}", objects.len()),
                    position: t,
                    biome: b as u16,
                    generic: flora.description.clone(),
                    descriptor: biome.flora_description(d).to_string(),
                    asset_ref: None,
                    size: 1,
                });
                placed += 1;
            }
        }
    }
    objects
}

fn crowded(terrain: &TerrainGrid, occupied: &[bool], t: Tile) -> bool {
    let r = FLORA_SPACING as i32 - 1;
    for dy in -r..=r {
        for dx in -r..=r {
            let n = t.offset(dx, dy);
            if terrain.in_bounds(n) && occupied[terrain.index(n)] {
                return true;
            }
        }
    }
    false
}
