use serde::{Deserialize, Serialize};

use super::TerrainError;
use crate::oracle::{slots, OracleClient, OracleError, ResponseSchema};

pub const BIOME_TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloraDescriptor {
    pub description: String,
    /// Objects per 100 tiles of the biome.
    pub density: f64,
}

/// One priority-ordered rule of the biome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biome {
    pub generic_id: String,
    /// Water rules match every tile below sea level, ahead of all other rules.
    #[serde(default)]
    pub water: bool,
    pub elevation: [f64; 2],
    pub temperature: [f64; 2],
    pub precipitation: [f64; 2],
    pub tile_kind: String,
    /// `None` means impassable.
    pub move_cost: Option<f64>,
    #[serde(default)]
    pub flora: Vec<FloraDescriptor>,
    #[serde(default)]
    pub analog_name: String,
    #[serde(default)]
    pub analog_flora: Vec<String>,
}

impl Biome {
    fn contains(&self, e: f64, t: f64, p: f64) -> bool {
        let within = |r: &[f64; 2], v: f64| v >= r[0] && v <= r[1];
        within(&self.elevation, e) && within(&self.temperature, t) && within(&self.precipitation, p)
    }

    /// The analog flora description for descriptor `i`, or the generic one.
    pub fn flora_description(&self, i: usize) -> &str {
        self.analog_flora
            .get(i)
            .filter(|s| !s.is_empty())
            .map(String::as_str)
            .unwrap_or(&self.flora[i].description)
    }

    pub fn display_name(&self) -> &str {
        if self.analog_name.is_empty() {
            &self.generic_id
        } else {
            &self.analog_name
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomeTable {
    pub version: u32,
    pub biomes: Vec<Biome>,
}

/// The classification-relevant part of a rule, used to check that
/// analogization only re-skins.
pub type RuleBox = (String, bool, [f64; 2], [f64; 2], [f64; 2], Option<f64>);

impl BiomeTable {
    pub fn default_table() -> Self {
        Self::from_json(include_str!("../../data/biomes.json")).expect("bundled biome table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TerrainError> {
        let table: BiomeTable = serde_json::from_str(text).map_err(|e| TerrainError::Table(e.to_string()))?;
        if table.version != BIOME_TABLE_VERSION {
            return Err(TerrainError::Table(format!("unsupported version {}", table.version)));
        }
        if table.biomes.len() > usize::from(u16::MAX) {
            return Err(TerrainError::Table("too many biomes".into()));
        }
        for (i, b) in table.biomes.iter().enumerate() {
            if table.biomes[..i].iter().any(|o| o.generic_id == b.generic_id) {
                return Err(TerrainError::Table(format!("duplicate biome `{}`", b.generic_id)));
            }
            if let Some(c) = b.move_cost {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(TerrainError::Table(format!("biome `{}` has non-positive move cost", b.generic_id)));
                }
            }
            if b.flora.iter().any(|f| !(f.density >= 0.0)) {
                return Err(TerrainError::Table(format!("biome `{}` has negative flora density", b.generic_id)));
            }
        }
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("biome table serializes")
    }

    pub fn index_of(&self, generic_id: &str) -> Option<usize> {
        self.biomes.iter().position(|b| b.generic_id == generic_id)
    }

    /// First matching rule in priority order. The water rule is checked first.
    pub fn classify(&self, elevation: f64, temperature: f64, precipitation: f64, sea_level: f64) -> Result<usize, TerrainError> {
        if elevation < sea_level {
            if let Some(i) = self.biomes.iter().position(|b| b.water) {
                return Ok(i);
            }
        } else if let Some(i) = self
            .biomes
            .iter()
            .position(|b| !b.water && b.contains(elevation, temperature, precipitation))
        {
            return Ok(i);
        }
        Err(TerrainError::UncoveredTriple(elevation, temperature, precipitation))
    }

    /// Evaluates every triple on an `n`-point-per-axis grid of the unit cube.
    pub fn check_coverage(&self, sea_level: f64, n: usize) -> Result<(), TerrainError> {
        let step = |i: usize| i as f64 / (n - 1).max(1) as f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    self.classify(step(a), step(b), step(c), sea_level)?;
                }
            }
        }
        Ok(())
    }

    pub fn rule_boxes(&self) -> Vec<RuleBox> {
        self.biomes
            .iter()
            .map(|b| (b.generic_id.clone(), b.water, b.elevation, b.temperature, b.precipitation, b.move_cost))
            .collect()
    }
}

/// Re-skins the generic biomes for the described world.
///
/// An empty description is the identity analogy and makes no oracle calls.
/// A schema violation falls back to the generic text and is noted in the
/// returned log; any other oracle error aborts.
pub fn analogize_biomes(table: &BiomeTable, world_description: &str, oracle: &mut OracleClient) -> Result<(BiomeTable, Vec<String>), OracleError> {
    let mut out = table.clone();
    let mut log = Vec::new();
    let world = world_description.trim();
    for biome in &mut out.biomes {
        if world.is_empty() {
            biome.analog_name = biome.generic_id.clone();
            biome.analog_flora = biome.flora.iter().map(|f| f.description.clone()).collect();
            continue;
        }
        biome.analog_name = match oracle.ask(
            "analogize_biome",
            slots([("world", world), ("biome", biome.generic_id.as_str())]),
            ResponseSchema::FreeText,
        ) {
            Ok(r) => r.as_text().to_string(),
            Err(e) if e.is_schema_violation() => {
                log.push(format!("biome `{}` kept its generic name: {e}", biome.generic_id));
                biome.generic_id.clone()
            }
            Err(e) => return Err(e),
        };
        let mut analogs = Vec::with_capacity(biome.flora.len());
        for flora in &biome.flora {
            analogs.push(
                match oracle.ask(
                    "analogize_asset",
                    slots([("world", world), ("item", flora.description.as_str())]),
                    ResponseSchema::FreeText,
                ) {
                    Ok(r) => r.as_text().to_string(),
                    Err(e) if e.is_schema_violation() => {
                        log.push(format!("flora `{}` kept its generic description: {e}", flora.description));
                        flora.description.clone()
                    }
                    Err(e) => return Err(e),
                },
            );
        }
        biome.analog_flora = analogs;
    }
    Ok((out, log))
}
