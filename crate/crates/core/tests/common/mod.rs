//! Shared fixture: the "cozy villages" world and its player trace.
#![allow(dead_code)]

use worldsim_core::commands::command_slots;
use worldsim_core::oracle::{HashEmbedder, OracleClient, ScriptTable};
use worldsim_core::terrain::WorldSpec;
use worldsim_core::world::{generate_world, GenerationOptions, World, WorldState};

pub const SEED: u64 = 42;
pub const POPULATION: u32 = 12;

pub fn spec() -> WorldSpec {
    WorldSpec::new(SEED, "cozy villages", POPULATION)
}

/// Built-in defaults plus longer conversations and some character growth.
pub fn base_script() -> ScriptTable {
    let mut s = ScriptTable::builtin_defaults();
    s.set_default("conversation_continue", "continue");
    s.set_default("rate_importance", "7");
    s.set_default("reflection_insight", "I want to spend more evenings with my neighbours.");
    s.set_default("trait_evolution", r#"{"add": "sociable", "remove": null}"#);
    s
}

/// One scripted player command: when to submit it and what it decomposes to.
pub struct TraceCommand {
    pub tick: u64,
    pub target: String,
    pub text: String,
    pub steps: String,
}

/// The three-command trace, phrased against the generated NPCs.
pub fn trace(state: &WorldState) -> Vec<TraceCommand> {
    let ids: Vec<&String> = state.agents.keys().collect();
    let a = &state.agents[ids[0]].profile;
    let b = &state.agents[ids[ids.len() - 1]].profile;
    vec![
        TraceCommand {
            tick: 420,
            target: a.npc_id.clone(),
            text: format!("have {} dance in the square", a.name),
            steps: r#"{"steps": [{"kind": "custom_action", "activity": "dancing in the square", "location": "square"}]}"#.into(),
        },
        TraceCommand {
            tick: 600,
            target: a.npc_id.clone(),
            text: format!("have {} talk with {} about the harvest", a.name, b.name),
            steps: format!(r#"{{"steps": [{{"kind": "engage_conversation", "targets": ["{}"], "intent": "the harvest"}}]}}"#, b.name),
        },
        TraceCommand {
            tick: 900,
            target: a.npc_id.clone(),
            text: format!("propose a cooking competition to {}", b.name),
            steps: format!(
                r#"{{"steps": [{{"kind": "propose_plan", "invitees": ["{}"], "location": "town hall", "start": "19:00", "end": "21:00", "day": 1, "activity": "a cooking competition using unusual ingredients"}}]}}"#,
                b.name
            ),
        },
    ]
}

pub fn generate(script: ScriptTable) -> World {
    generate_world(&spec(), &GenerationOptions::default(), OracleClient::scripted(script), Box::new(HashEmbedder::default()))
        .expect("fixture world generates")
        .0
}

/// Generates the fixture world, scripts the trace into the oracle and
/// returns it with the trace.
pub fn fixture() -> (World, Vec<TraceCommand>) {
    let probe = generate(base_script());
    let commands = trace(&probe.state);
    let refs = probe.state.referents();
    let mut script = base_script();
    for c in &commands {
        script.set_exact("parse_command", &command_slots(&c.target, &c.text, &refs), c.steps.clone());
    }
    (generate(script), commands)
}

/// Runs `ticks` ticks, submitting trace commands on their tick.
pub fn run_with_trace(world: &mut World, trace: &[TraceCommand], ticks: u64) {
    for _ in 0..ticks {
        let now = world.tick_count();
        for c in trace.iter().filter(|c| c.tick == now) {
            world.submit_command("player", &c.target, &c.text);
        }
        world.tick();
    }
}
