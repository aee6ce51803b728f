//! Sprites for analog descriptions: size estimates, library retrieval and
//! pixel-art post-processing.

mod sprite;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{cosine, slots, Embedder, EmbeddingVector, OracleClient, OracleError, ResponseSchema};

pub use sprite::{
    nearest_palette_color, remove_background, unify_sprite, Rgb, Rgba, Sprite, ALPHA_THRESHOLD, DEFAULT_PALETTE_SIZE,
    DEFAULT_TOLERANCE,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MIN_ASSET_SIZE: u32 = 1;
pub const MAX_ASSET_SIZE: u32 = 64;
pub const DEFAULT_PIXELS_PER_TILE: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssetError {
    #[error("asset library is empty")]
    EmptyLibrary,
    #[error("palette is empty")]
    EmptyPalette,
    #[error("invalid sprite: {0}")]
    InvalidSprite(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("image: {0}")]
    Image(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub asset_id: String,
    pub image_path: String,
    pub description_text: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub tags: Vec<String>,
    pub native_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetLibrary {
    pub manifest_version: u32,
    pub entries: Vec<AssetEntry>,
}

const BUILTIN_ASSETS: &[(&str, &str, &str, u32)] = &[
    ("tree-broadleaf", "broadleaf tree with a wide round crown", "tree", 2),
    ("tree-pine", "tall pine tree", "tree", 2),
    ("tree-fruit", "spreading apple tree", "tree", 2),
    ("bush", "small green bush shrub", "bush", 1),
    ("flowers", "patch of wildflowers", "flower", 1),
    ("rock", "grey boulder rock", "rock", 1),
    ("cactus", "desert cactus", "plant", 1),
    ("fern", "fern plant", "plant", 1),
    ("house", "small house residence with a large roof", "residence", 4),
    ("workshop", "workshop workplace building with a large roof", "workplace", 5),
    ("hall", "city hall civic building with a large roof", "civic", 6),
    ("bed", "wooden bed", "bed", 2),
    ("table", "wooden table", "table", 2),
    ("chair", "wooden chair", "chair", 1),
    ("chest", "storage chest", "storage", 1),
    ("stove", "cooking stove oven", "stove", 1),
    ("shelf", "shelf with goods", "storage", 1),
    ("workbench", "workbench with tools", "workbench", 2),
    ("desk", "writing desk", "desk", 2),
    ("counter", "shop counter", "counter", 2),
];

impl AssetLibrary {
    pub fn from_entries(entries: Vec<AssetEntry>) -> Result<Self, AssetError> {
        let lib = Self {
            manifest_version: MANIFEST_VERSION,
            entries,
        };
        lib.validate()?;
        Ok(lib)
    }

    /// A small generic library with no image files, used when the world
    /// is generated without a manifest.
    pub fn builtin(embedder: &dyn Embedder) -> Self {
        let entries = BUILTIN_ASSETS
            .iter()
            .map(|(id, desc, tag, size)| AssetEntry {
                asset_id: (*id).to_string(),
                image_path: format!("builtin/{id}.png"),
                description_text: (*desc).to_string(),
                embedding: embedder.embed(desc).expect("builtin descriptions are non-empty"),
                tags: vec![(*tag).to_string()],
                native_size: *size,
            })
            .collect();
        Self::from_entries(entries).expect("builtin library is valid")
    }

    pub fn validate(&self) -> Result<(), AssetError> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(AssetError::Manifest(format!("unsupported version {}", self.manifest_version)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.asset_id.as_str()) {
                return Err(AssetError::Manifest(format!("duplicate asset id `{}`", e.asset_id)));
            }
            if (e.embedding.norm() - 1.0).abs() > 1e-6 {
                return Err(AssetError::Manifest(format!("embedding of `{}` is not unit length", e.asset_id)));
            }
        }
        Ok(())
    }

    /// Loads a manifest; image paths are resolved relative to its directory
    /// and must exist.
    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let text = std::fs::read_to_string(path).map_err(|e| AssetError::Io(format!("{}: {e}", path.display())))?;
        let lib: AssetLibrary = serde_json::from_str(&text).map_err(|e| AssetError::Manifest(e.to_string()))?;
        lib.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &lib.entries {
            if !base.join(&e.image_path).is_file() {
                return Err(AssetError::Manifest(format!("image for `{}` not found: {}", e.asset_id, e.image_path)));
            }
        }
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<(), AssetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| AssetError::Io(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, asset_id: &str) -> Option<&AssetEntry> {
        self.entries.iter().find(|e| e.asset_id == asset_id)
    }

    /// Entry whose embedding is most similar to `query`; ties go to the
    /// lexicographically smallest id, so the answer does not depend on order.
    pub fn nearest(&self, query: &EmbeddingVector) -> Result<&AssetEntry, AssetError> {
        let mut best: Option<(&AssetEntry, f64)> = None;
        for e in &self.entries {
            let s = cosine(query, &e.embedding);
            best = match best {
                Some((b, bs)) if bs > s || (bs == s && b.asset_id <= e.asset_id) => Some((b, bs)),
                _ => Some((e, s)),
            };
        }
        best.map(|(e, _)| e).ok_or(AssetError::EmptyLibrary)
    }
}

pub fn retrieve_asset(description: &str, library: &AssetLibrary, embedder: &dyn Embedder) -> Result<String, AssetError> {
    if library.entries.is_empty() {
        return Err(AssetError::EmptyLibrary);
    }
    let q = embedder.embed(description)?;
    Ok(library.nearest(&q)?.asset_id.clone())
}

/// Scans `dir` for PNG files and describes each one. The description is read
/// from a sibling `.txt` file when present, else taken from the file stem.
pub fn build_manifest(dir: &Path, embedder: &dyn Embedder) -> Result<AssetLibrary, AssetError> {
    let io = |e: std::io::Error| AssetError::Io(format!("{}: {e}", dir.display()));
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let mut entries = Vec::new();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let sidecar = path.with_extension("txt");
        let description = match std::fs::read_to_string(&sidecar) {
            Ok(t) if !t.trim().is_empty() => t.trim().to_string(),
            _ => stem.replace(['_', '-'], " "),
        };
        let sprite = Sprite::load_png(&path)?;
        let extent = sprite.width.max(sprite.height);
        entries.push(AssetEntry {
            asset_id: stem,
            image_path: path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
            embedding: embedder.embed(&description)?,
            description_text: description,
            tags: vec![],
            native_size: extent.div_ceil(DEFAULT_PIXELS_PER_TILE).clamp(MIN_ASSET_SIZE, MAX_ASSET_SIZE),
        });
    }
    AssetLibrary::from_entries(entries)
}

/// Fallback sizes per function tag, in tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub sizes: BTreeMap<String, u32>,
    pub fallback: u32,
}

impl Default for SizeTable {
    fn default() -> Self {
        let sizes = [
            ("tree", 2),
            ("bush", 1),
            ("flower", 1),
            ("rock", 1),
            ("plant", 1),
            ("residence", 4),
            ("workplace", 5),
            ("civic", 6),
            ("bed", 2),
            ("table", 2),
            ("chair", 1),
            ("storage", 1),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { sizes, fallback: 1 }
    }
}

impl SizeTable {
    pub fn size_for(&self, function_tag: &str) -> u32 {
        self.sizes.get(function_tag).copied().unwrap_or(self.fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizedAssetRequest {
    pub description: String,
    pub function_tag: String,
    pub estimated_size: u32,
}

/// Tile extent from the oracle, clamped into `[1, 64]`. Any oracle failure
/// falls back to the size table.
pub fn estimate_size(description: &str, function_tag: &str, oracle: &mut OracleClient, defaults: &SizeTable) -> u32 {
    let schema = ResponseSchema::Score {
        min: f64::MIN,
        max: f64::MAX,
    };
    match oracle.ask(
        "estimate_size",
        slots([("description", description), ("function_tag", function_tag)]),
        schema,
    ) {
        Ok(r) => clamp_size(r.as_score().unwrap_or(0.0)),
        Err(_) => defaults.size_for(function_tag).clamp(MIN_ASSET_SIZE, MAX_ASSET_SIZE),
    }
}

fn clamp_size(v: f64) -> u32 {
    v.round().clamp(f64::from(MIN_ASSET_SIZE), f64::from(MAX_ASSET_SIZE)) as u32
}

/// Size estimate plus library lookup for one description.
pub fn resolve_asset(
    description: &str,
    function_tag: &str,
    library: &AssetLibrary,
    embedder: &dyn Embedder,
    oracle: &mut OracleClient,
    sizes: &SizeTable,
) -> Result<(SizedAssetRequest, String), AssetError> {
    let estimated_size = estimate_size(description, function_tag, oracle, sizes);
    let asset_id = retrieve_asset(description, library, embedder)?;
    Ok((
        SizedAssetRequest {
            description: description.to_string(),
            function_tag: function_tag.to_string(),
            estimated_size,
        },
        asset_id,
    ))
}
