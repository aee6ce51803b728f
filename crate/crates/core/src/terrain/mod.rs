//! The natural world: noise fields, biome classification and flora.

mod biome;
mod flora;
mod noise;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Tile;

pub use biome::{analogize_biomes, Biome, BiomeTable, FloraDescriptor, BIOME_TABLE_VERSION};
pub use flora::{place_flora, NaturalObject};
pub use noise::{fbm, perlin2, FbmParams, PerlinNoise};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("invalid noise parameters: {0}")]
    InvalidParams(String),
    #[error("biome table does not cover (elevation {0:.3}, temperature {1:.3}, precipitation {2:.3})")]
    UncoveredTriple(f64, f64, f64),
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("biome table: {0}")]
    Table(String),
}

/// The player's one-phrase world description plus generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub description: String,
    pub width: u32,
    pub height: u32,
    pub sea_level: f64,
    pub target_population: u32,
    pub degrees_cap: u32,
    /// Simulation minutes per day.
    pub day_length: u32,
}

impl WorldSpec {
    pub fn new(seed: u64, description: &str, target_population: u32) -> Self {
        Self {
            seed,
            description: description.to_string(),
            width: 256,
            height: 256,
            sea_level: 0.35,
            target_population,
            degrees_cap: 4,
            day_length: 1440,
        }
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        let fail = |m: &str| Err(TerrainError::InvalidSpec(m.to_string()));
        if self.width < 32 || self.height < 32 {
            return fail("width and height must be at least 32");
        }
        if self.target_population < 1 {
            return fail("target_population must be at least 1");
        }
        if !(self.sea_level > 0.0 && self.sea_level < 1.0) {
            return fail("sea_level must lie strictly between 0 and 1");
        }
        if self.degrees_cap < 1 {
            return fail("degrees_cap must be at least 1");
        }
        if self.day_length < 60 {
            return fail("day_length must be at least 60 minutes");
        }
        Ok(())
    }
}

/// Row-major values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width * height) as usize, "field size mismatch");
        Self { width, height, values }
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_u16(v: f64) -> u16 {
        (v.clamp(0.0, 1.0) * 65535.0).round() as u16
    }

    pub fn from_u16(q: u16) -> f64 {
        f64::from(q) / 65535.0
    }

    /// Snaps every value onto the 16-bit fixed-point grid used in saves.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.values {
            *v = Self::from_u16(Self::to_u16(*v));
        }
        self
    }

    pub fn is_valid(&self) -> bool {
        self.values.len() == (self.width * self.height) as usize && self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainConfig {
    /// Tiles per noise lattice cell at the base octave.
    pub noise_scale: f64,
    pub fbm: FbmParams,
    /// Temperature drop per unit of elevation above sea level.
    pub lapse_rate: f64,
    pub latitude_jitter: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            noise_scale: 64.0,
            fbm: FbmParams {
                octaves: 4,
                persistence: 0.5,
                lacunarity: 2.0,
            },
            lapse_rate: 0.6,
            latitude_jitter: 0.1,
        }
    }
}

const ELEVATION_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const PRECIPITATION_SALT: u64 = 0xC2B2_AE3D_27D4_EB4F;
const TEMPERATURE_SALT: u64 = 0x1656_67B1_9E37_79F9;

#[derive(Debug, Clone, PartialEq)]
pub struct Fields {
    pub elevation: ScalarField,
    pub precipitation: ScalarField,
    pub temperature: ScalarField,
}

/// Warm in the middle rows, cold at the top and bottom edges.
fn latitude_base(y: u32, height: u32) -> f64 {
    let t = (f64::from(y) + 0.5) / f64::from(height);
    1.0 - (2.0 * t - 1.0).abs()
}

pub fn lapse_temperature(base: f64, elevation: f64, sea_level: f64, lapse_rate: f64) -> f64 {
    (base - lapse_rate * (elevation - sea_level).max(0.0)).clamp(0.0, 1.0)
}

/// Elevation, precipitation and temperature for `spec`, at 16-bit precision.
///
/// Temperature is a per-row latitude base (lightly jittered by its own noise
/// stream) minus a linear lapse above sea level, so within a row it never
/// increases with elevation.
pub fn generate_fields(spec: &WorldSpec, config: &TerrainConfig) -> Fields {
    let (w, h) = (spec.width, spec.height);
    let elevation_noise = PerlinNoise::new(spec.seed ^ ELEVATION_SALT);
    let precipitation_noise = PerlinNoise::new(spec.seed ^ PRECIPITATION_SALT);
    let temperature_noise = PerlinNoise::new(spec.seed ^ TEMPERATURE_SALT);
    let remap = |v: f64| ((v + 1.0) * 0.5).clamp(0.0, 1.0);

    let n = (w * h) as usize;
    let mut elevation = Vec::with_capacity(n);
    let mut precipitation = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let sx = (f64::from(x) + 0.5) / config.noise_scale;
            let sy = (f64::from(y) + 0.5) / config.noise_scale;
            elevation.push(remap(elevation_noise.fbm(sx, sy, &config.fbm)));
            precipitation.push(remap(precipitation_noise.fbm(sx, sy, &config.fbm)));
        }
    }
    let elevation = ScalarField::new(w, h, elevation).quantized();

    let mut temperature = Vec::with_capacity(n);
    for y in 0..h {
        let jitter = temperature_noise.sample((f64::from(y) + 0.5) / config.noise_scale, 0.37);
        let base = (0.1 + 0.8 * latitude_base(y, h) + config.latitude_jitter * jitter).clamp(0.0, 1.0);
        for x in 0..w {
            let e = elevation.get(x, y);
            temperature.push(lapse_temperature(base, e, spec.sea_level, config.lapse_rate));
        }
    }
    Fields {
        elevation,
        precipitation: ScalarField::new(w, h, precipitation).quantized(),
        temperature: ScalarField::new(w, h, temperature).quantized(),
    }
}

/// Classified terrain. `move_cost` is `None` on impassable tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    pub width: u32,
    pub height: u32,
    pub sea_level: f64,
    pub elevation: ScalarField,
    pub precipitation: ScalarField,
    pub temperature: ScalarField,
    pub biome_ids: Vec<u16>,
    pub passable: Vec<bool>,
    pub move_cost: Vec<Option<f64>>,
}

impl TerrainGrid {
    pub fn in_bounds(&self, t: Tile) -> bool {
        t.x >= 0 && t.y >= 0 && (t.x as u32) < self.width && (t.y as u32) < self.height
    }

    pub fn index(&self, t: Tile) -> usize {
        debug_assert!(self.in_bounds(t));
        t.y as usize * self.width as usize + t.x as usize
    }

    pub fn tile_at(&self, index: usize) -> Tile {
        Tile::new((index % self.width as usize) as i32, (index / self.width as usize) as i32)
    }

    pub fn len(&self) -> usize {
        self.biome_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biome_ids.is_empty()
    }

    pub fn is_passable(&self, t: Tile) -> bool {
        self.in_bounds(t) && self.passable[self.index(t)]
    }

    pub fn cost(&self, t: Tile) -> Option<f64> {
        if self.in_bounds(t) {
            self.move_cost[self.index(t)]
        } else {
            None
        }
    }

    pub fn elevation_at(&self, t: Tile) -> f64 {
        self.elevation.values[self.index(t)]
    }

    pub fn biome_at(&self, t: Tile) -> u16 {
        self.biome_ids[self.index(t)]
    }

    /// Multiplies the cost of a passable tile; impassable tiles stay impassable.
    pub fn scale_cost(&mut self, t: Tile, factor: f64) {
        let i = self.index(t);
        if let Some(c) = self.move_cost[i] {
            self.move_cost[i] = Some(c * factor);
        }
    }

    /// Smallest finite move cost on the grid; the admissible A* scale.
    pub fn min_move_cost(&self) -> Option<f64> {
        self.move_cost.iter().flatten().copied().reduce(f64::min)
    }
}

/// Assigns biomes, passability and move costs tile by tile.
pub fn classify_biomes(fields: &Fields, table: &BiomeTable, sea_level: f64) -> Result<TerrainGrid, TerrainError> {
    let n = fields.elevation.values.len();
    let mut biome_ids = Vec::with_capacity(n);
    let mut passable = Vec::with_capacity(n);
    let mut move_cost = Vec::with_capacity(n);
    for i in 0..n {
        let e = fields.elevation.values[i];
        let t = fields.temperature.values[i];
        let p = fields.precipitation.values[i];
        let b = table.classify(e, t, p, sea_level)?;
        let biome = &table.biomes[b];
        let cost = if biome.water { None } else { biome.move_cost };
        biome_ids.push(b as u16);
        passable.push(cost.is_some());
        move_cost.push(cost);
    }
    Ok(TerrainGrid {
        width: fields.elevation.width,
        height: fields.elevation.height,
        sea_level,
        elevation: fields.elevation.clone(),
        precipitation: fields.precipitation.clone(),
        temperature: fields.temperature.clone(),
        biome_ids,
        passable,
        move_cost,
    })
}
