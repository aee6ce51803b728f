//! `worldsim`: generate, run, serve and inspect worlds from the shell.
//!
//! Exit codes: 0 ok, 2 invalid input, 3 generation failed, 4 io.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use worldsim_core::assets::{build_manifest, remove_background, retrieve_asset, unify_sprite, AssetError, AssetLibrary, Rgb, Sprite};
use worldsim_core::oracle::{EndpointConfig, HashEmbedder, JournalOracle, LiveOracle, OracleClient, ScriptLoadError, ScriptTable};
use worldsim_core::population::{diameter, SocialGraph};
use worldsim_core::terrain::WorldSpec;
use worldsim_core::world::{generate_world, load_world, save_world, GenerationOptions, SaveError, World};

#[derive(Parser)]
#[command(name = "worldsim", version, about = "Generate and simulate small settlements and their inhabitants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a new world and write its save.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        desc: String,
        #[arg(long)]
        pop: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        /// Fraction of the elevation range under water.
        #[arg(long, default_value_t = 0.35)]
        sea_level: f64,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Advance a saved world.
    Run {
        #[arg(long)]
        save: PathBuf,
        #[arg(long)]
        ticks: u64,
        /// Where to write the result; defaults to overwriting `--save`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the request journal as JSON lines.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Write the event log as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Run a saved world behind the network protocol.
    Serve {
        #[arg(long)]
        save: PathBuf,
        #[arg(long)]
        bind: String,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        /// Stop after this many ticks; runs until killed otherwise.
        #[arg(long)]
        ticks: Option<u64>,
        /// Save the world here when the run stops.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Print part of a saved world as JSON.
    Inspect {
        #[arg(long)]
        save: PathBuf,
        #[command(flatten)]
        what: InspectWhat,
    },
    /// Work with the sprite library.
    #[command(subcommand)]
    Assets(AssetsCommand),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectWhat {
    #[arg(long)]
    npc: Option<String>,
    #[arg(long)]
    settlement: bool,
    #[arg(long)]
    graph: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Scripted responses, layered over the built-in defaults.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Replay the responses of an earlier journal.
    #[arg(long, conflicts_with = "script")]
    replay: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AssetsCommand {
    /// Index a directory of PNGs with a JSON sidecar per image.
    Manifest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The library entry closest to a description.
    Lookup {
        /// Defaults to the built-in library.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        desc: String,
    },
    /// Resize to a tile footprint and snap to a palette.
    Unify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tiles: u32,
        #[arg(long, default_value_t = worldsim_core::assets::DEFAULT_PIXELS_PER_TILE)]
        pixels_per_tile: u32,
        /// Comma separated hex colours, e.g. `2b2b2b,e0c080`.
        #[arg(long)]
        palette: String,
    },
    /// Clear the background connected to the image border.
    StripBackground {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = worldsim_core::assets::DEFAULT_TOLERANCE)]
        tolerance: u8,
    },
}

enum Failure {
    Invalid(String),
    Generation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Generation(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Generation(m) | Failure::Io(m) => m,
        }
    }
}

impl From<SaveError> for Failure {
    fn from(e: SaveError) -> Self {
        match e {
            SaveError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<AssetError> for Failure {
    fn from(e: AssetError) -> Self {
        match e {
            AssetError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn determinism() -> bool {
    std::env::var("DETERMINISM").is_ok_and(|v| v == "1")
}

/// Picks the oracle backend: a replayed journal, a script, the live
/// endpoint when one is configured, or the built-in script.
/// With `DETERMINISM=1` the live endpoint is never used.
fn oracle(args: &OracleArgs) -> Result<OracleClient, Failure> {
    if let Some(path) = &args.replay {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let journal = JournalOracle::from_jsonl(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        return Ok(OracleClient::new(Box::new(journal)));
    }
    let mut table = ScriptTable::builtin_defaults();
    if let Some(path) = &args.script {
        let extra = ScriptTable::load(path).map_err(|e| match e {
            ScriptLoadError::Io(io) => io_error(path, io),
            other => Failure::Invalid(format!("{}: {other}", path.display())),
        })?;
        table.merge(extra);
        return Ok(OracleClient::scripted(table));
    }
    if !determinism() {
        if let Some(config) = EndpointConfig::from_env() {
            return Ok(OracleClient::new(Box::new(LiveOracle::http(config))));
        }
    }
    Ok(OracleClient::scripted(table))
}

fn load(path: &Path, args: &OracleArgs) -> Result<World, Failure> {
    if !path.exists() {
        return Err(Failure::Io(format!("{}: no such file", path.display())));
    }
    Ok(load_world(path, oracle(args)?, Box::new(HashEmbedder::default()))?)
}

fn print(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), Failure> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| Failure::Io(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { seed, desc, pop, out, width, height, sea_level, oracle: oa } => {
            let spec = WorldSpec { width, height, sea_level, ..WorldSpec::new(seed, &desc, pop) };
            spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
            let (world, report) = generate_world(&spec, &GenerationOptions::default(), oracle(&oa)?, Box::new(HashEmbedder::default()))
                .map_err(|e| Failure::Generation(e.to_string()))?;
            save_world(&world, &out, true)?;
            print(&json!({
                "save": out,
                "buildings": report.buildings,
                "families": report.families,
                "npcs": report.npcs,
                "relationships": report.relationships,
                "road_tiles": report.road_tiles,
                "oracle_requests": report.oracle_requests,
                "stages": report.stages.iter().map(|s| json!({"stage": format!("{:?}", s.stage), "millis": s.millis})).collect::<Vec<_>>(),
            }));
            Ok(())
        }
        Command::Run { save, ticks, out, journal, events, oracle: oa } => {
            let mut world = load(&save, &oa)?;
            let mut log = vec![];
            for _ in 0..ticks {
                world.tick();
                log.extend(world.take_events());
            }
            save_world(&world, out.as_deref().unwrap_or(&save), true)?;
            if let Some(path) = journal {
                write_lines(&path, &world.oracle.ledger().journal)?;
            }
            if let Some(path) = events {
                write_lines(&path, &log)?;
            }
            print(&json!({"tick": world.tick_count(), "day": world.state.day(), "minute": world.state.minute(), "events": log.len()}));
            Ok(())
        }
        Command::Serve { save, bind, tick_ms, ticks, out, oracle: oa } => {
            let world = load(&save, &oa)?;
            let mut config = worldsim_server::ServerConfig::new(oracle(&oa)?);
            config.tick_interval = Duration::from_millis(tick_ms);
            config.stop_at_tick = ticks.map(|t| world.tick_count() + t);
            let handle = worldsim_server::serve(world, bind.as_str(), config).map_err(|e| Failure::Io(format!("{bind}: {e}")))?;
            eprintln!("serving on {}", handle.local_addr());
            let world = handle.join();
            if let Some(path) = out {
                save_world(&world, &path, true)?;
            }
            Ok(())
        }
        Command::Inspect { save, what } => {
            let world = load(&save, &OracleArgs { script: None, replay: None })?;
            let s = &world.state;
            if let Some(id) = what.npc {
                let agent = s.agents.get(&id).ok_or_else(|| Failure::Invalid(format!("no NPC {id}")))?;
                let (day, minute) = (s.day(), s.minute());
                let recent: Vec<Value> = agent
                    .memory
                    .entries
                    .iter()
                    .rev()
                    .take(10)
                    .map(|m| json!({"id": m.memory_id, "kind": m.kind, "text": m.text, "at": m.created_at, "importance": m.importance}))
                    .collect();
                print(&json!({
                    "profile": agent.profile,
                    "activity": agent.current_entry(day, minute).map(|e| e.activity.clone()),
                    "conversation": agent.conversation,
                    "memories": agent.memory.len(),
                    "recent_memories": recent,
                    "routine": agent.routines.get(&day).map(|r| &r.entries),
                }));
            } else if what.settlement {
                let buildings: Vec<Value> = s
                    .settlement
                    .buildings
                    .iter()
                    .map(|b| {
                        json!({
                            "id": b.id,
                            "function": b.spec.function_tag,
                            "description": b.spec.description,
                            "origin": b.origin,
                            "size": [b.spec.width, b.spec.height],
                            "entrance": b.entrance,
                            "capacity": b.spec.capacity,
                        })
                    })
                    .collect();
                print(&json!({
                    "bounds": s.settlement.bounds,
                    "buildings": buildings,
                    "tour": s.roads.tour,
                    "road_tiles": s.roads.road_tiles.len(),
                    "flora": s.flora.len(),
                }));
            } else {
                let ids: Vec<String> = s.agents.keys().cloned().collect();
                let graph = SocialGraph::new(&ids, &s.relationships);
                print(&json!({
                    "npcs": ids.iter().map(|id| json!({"id": id, "name": s.npc_name(id)})).collect::<Vec<_>>(),
                    "edges": s.relationships.iter().map(|r| json!({"a": r.a, "b": r.b, "kind": r.kind.as_str(), "context": r.context})).collect::<Vec<_>>(),
                    "diameter": diameter(&graph),
                }));
            }
            Ok(())
        }
        Command::Assets(cmd) => assets(cmd),
    }
}

fn parse_palette(text: &str) -> Result<Vec<Rgb>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let c = c.trim_start_matches('#');
            let bad = || Failure::Invalid(format!("bad colour {c:?}"));
            if c.len() != 6 {
                return Err(bad());
            }
            let v = u32::from_str_radix(c, 16).map_err(|_| bad())?;
            Ok([(v >> 16) as u8, (v >> 8) as u8, v as u8])
        })
        .collect()
}

fn assets(cmd: AssetsCommand) -> Result<(), Failure> {
    let embedder = HashEmbedder::default();
    match cmd {
        AssetsCommand::Manifest { dir, out } => {
            let library = build_manifest(&dir, &embedder)?;
            library.save(&out)?;
            print(&json!({"entries": library.entries.len(), "manifest": out}));
        }
        AssetsCommand::Lookup { manifest, desc } => {
            let library = match manifest {
                Some(path) => AssetLibrary::load(&path)?,
                None => AssetLibrary::builtin(&embedder),
            };
            let id = retrieve_asset(&desc, &library, &embedder)?;
            let entry = library.get(&id).expect("retrieved ids exist");
            print(&json!({"asset_id": entry.asset_id, "description": entry.description_text, "image_path": entry.image_path, "native_size": entry.native_size}));
        }
        AssetsCommand::Unify { input, out, tiles, pixels_per_tile, palette } => {
            let palette = parse_palette(&palette)?;
            let sprite = Sprite::load_png(&input)?;
            unify_sprite(&sprite, tiles, pixels_per_tile, &palette)?.save_png(&out)?;
        }
        AssetsCommand::StripBackground { input, out, tolerance } => {
            remove_background(&Sprite::load_png(&input)?, tolerance).save_png(&out)?;
        }
    }
    Ok(())
}
