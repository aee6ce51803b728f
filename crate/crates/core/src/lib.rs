//! Procedural world generation and a memory-driven NPC simulation.
//!
//! Every generated piece of text goes through [`oracle`]; with the scripted
//! backend and the hash embedder the whole pipeline is deterministic.

pub mod oracle;
pub mod geom;
pub mod terrain;
pub mod assets;
pub mod settlement;
pub mod population;
pub mod agents;
pub mod commands;
pub mod world;
