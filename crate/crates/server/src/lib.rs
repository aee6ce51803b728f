//! Serves a running world to remote clients.
//!
//! One simulation thread owns the [`World`]. Connections never touch it:
//! their requests go through a single FIFO channel that the simulation
//! drains between ticks, and everything they receive is pushed to them
//! through per-connection outboxes. A client that stalls or vanishes can
//! therefore never hold up or alter the simulation.

pub mod protocol;

use std::collections::BTreeMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::json;
use worldsim_core::commands::InterviewSession;
use worldsim_core::geom::{Rect, Tile};
use worldsim_core::oracle::OracleClient;
use worldsim_core::world::{interview_turn, Event, World};

pub use protocol::*;

pub struct ServerConfig {
    /// Wall-clock time between ticks; zero runs flat out.
    pub tick_interval: Duration,
    /// Stop after the world reaches this tick.
    pub stop_at_tick: Option<u64>,
    /// Hold the clock until [`ServerHandle::resume`]. Requests are still served.
    pub start_paused: bool,
    /// Answers interview questions, kept apart from the world's own oracle
    /// so interviews leave its journal alone.
    pub interview_oracle: OracleClient,
}

impl ServerConfig {
    pub fn new(interview_oracle: OracleClient) -> Self {
        Self {
            tick_interval: Duration::from_millis(100),
            stop_at_tick: None,
            start_paused: false,
            interview_oracle,
        }
    }
}

enum Outbound {
    Send(ServerMessage),
    /// Send, then drop the connection.
    Close(ServerMessage),
}

enum Inbound {
    Join { client: String, name: String, out: Sender<Outbound> },
    Request { client: String, message: ClientMessage },
    Leave { client: String },
}

struct Shared {
    stop: AtomicBool,
    paused: AtomicBool,
    next_client: AtomicU64,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    sim: JoinHandle<World>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn resume(&self) {
        self.shared.paused.store(false, Ordering::SeqCst);
    }

    /// Stops the clock and hands back the world.
    pub fn shutdown(self) -> World {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Waits for the simulation to finish on its own (see `stop_at_tick`).
    pub fn join(self) -> World {
        let world = self.sim.join().expect("simulation thread panicked");
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        world
    }

    pub fn is_finished(&self) -> bool {
        self.sim.is_finished()
    }
}

/// Binds `addr` and starts serving `world`.
pub fn serve(world: World, addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        paused: AtomicBool::new(config.start_paused),
        next_client: AtomicU64::new(1),
    });
    let (tx, rx) = mpsc::channel();
    let sim = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("sim".into())
            .spawn(move || Simulation::new(world, config, shared).run(rx))?
    };
    let acceptor = {
        let shared = shared.clone();
        thread::Builder::new().name("accept".into()).spawn(move || accept_loop(listener, tx, shared))?
    };
    Ok(ServerHandle { addr: local, shared, sim, acceptor })
}

fn accept_loop(listener: TcpListener, inbound: Sender<Inbound>, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = format!("client-{}", shared.next_client.fetch_add(1, Ordering::SeqCst));
                let inbound = inbound.clone();
                let _ = thread::Builder::new().name(id.clone()).spawn(move || connection(stream, id, inbound));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn connection(stream: TcpStream, client: String, inbound: Sender<Inbound>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else { return };
    let (out, outbox) = mpsc::channel();
    let writer = thread::spawn(move || write_loop(write_half, outbox));
    let mut reader = stream;
    let mut joined = false;
    loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) | Err(FrameError::Io(_)) => break,
            Err(e @ FrameError::TooLarge(_)) => {
                let _ = out.send(Outbound::Close(ServerMessage::error("frame_too_large", e.to_string())));
                break;
            }
        };
        let message = match decode_client(&body) {
            Ok(m) => m,
            Err(e) => {
                let _ = out.send(Outbound::Close(e.into_message()));
                break;
            }
        };
        match message {
            ClientMessage::Hello { .. } if joined => {
                let _ = out.send(Outbound::Close(ServerMessage::error("unexpected_hello", "already greeted")));
                break;
            }
            ClientMessage::Hello { client_name, protocol_version } => {
                if protocol_version != PROTOCOL_VERSION {
                    let msg = format!("server speaks version {PROTOCOL_VERSION}, client sent {protocol_version}");
                    let _ = out.send(Outbound::Close(ServerMessage::error("version_mismatch", msg)));
                    break;
                }
                joined = true;
                let join = Inbound::Join { client: client.clone(), name: client_name, out: out.clone() };
                if inbound.send(join).is_err() {
                    let _ = out.send(Outbound::Close(ServerMessage::error("shutting_down", "the simulation has stopped")));
                    break;
                }
            }
            _ if !joined => {
                let _ = out.send(Outbound::Close(ServerMessage::error("hello_required", "send hello first")));
                break;
            }
            ClientMessage::Ping => {
                let _ = out.send(Outbound::Send(ServerMessage::Pong));
            }
            message => {
                if inbound.send(Inbound::Request { client: client.clone(), message }).is_err() {
                    let _ = out.send(Outbound::Close(ServerMessage::error("shutting_down", "the simulation has stopped")));
                    break;
                }
            }
        }
    }
    if joined {
        let _ = inbound.send(Inbound::Leave { client });
    }
    drop(out);
    let _ = writer.join();
}

fn write_loop(mut stream: TcpStream, outbox: Receiver<Outbound>) {
    for item in outbox {
        let (message, close) = match item {
            Outbound::Send(m) => (m, false),
            Outbound::Close(m) => (m, true),
        };
        if write_frame(&mut stream, &message).is_err() {
            break;
        }
        if close {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

struct Client {
    name: String,
    out: Sender<Outbound>,
    regions: Vec<Rect>,
    npcs: Vec<String>,
    all_events: bool,
    /// Last NPC state sent, for deltas.
    shown: BTreeMap<String, NpcView>,
    interviews: BTreeMap<String, InterviewSession>,
    next_interview: u32,
}

impl Client {
    fn send(&self, m: ServerMessage) -> bool {
        self.out.send(Outbound::Send(m)).is_ok()
    }

    fn wants(&self, e: &Event) -> bool {
        if self.all_events || e.npcs.iter().any(|n| self.npcs.contains(n)) {
            return true;
        }
        e.payload.get("issuer").and_then(|i| i.as_str()) == Some(self.name.as_str())
    }

    fn watches(&self, t: Tile) -> bool {
        self.regions.iter().any(|r| r.contains(t))
    }
}

struct Simulation {
    world: World,
    config: ServerConfig,
    shared: Arc<Shared>,
    clients: BTreeMap<String, Client>,
}

impl Simulation {
    fn new(world: World, config: ServerConfig, shared: Arc<Shared>) -> Self {
        Self { world, config, shared, clients: BTreeMap::new() }
    }

    fn run(mut self, inbound: Receiver<Inbound>) -> World {
        let mut next_tick = Instant::now();
        loop {
            if self.shared.stop.load(Ordering::SeqCst) {
                break;
            }
            if self.config.stop_at_tick.is_some_and(|t| self.world.tick_count() >= t) {
                break;
            }
            let paused = self.shared.paused.load(Ordering::SeqCst);
            // Serve requests until the next tick is due.
            loop {
                let wait = if paused {
                    Duration::from_millis(10)
                } else {
                    next_tick.saturating_duration_since(Instant::now())
                };
                match inbound.recv_timeout(wait) {
                    Ok(m) => self.handle(m),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => {
                        if paused {
                            thread::sleep(wait);
                        }
                        break;
                    }
                }
                if !paused && Instant::now() >= next_tick {
                    // Drain what is already queued so requests keep FIFO order with the clock.
                    while let Ok(m) = inbound.try_recv() {
                        self.handle(m);
                    }
                    break;
                }
            }
            if paused {
                next_tick = Instant::now();
                continue;
            }
            self.world.tick();
            next_tick += self.config.tick_interval;
            if next_tick < Instant::now() {
                next_tick = Instant::now();
            }
            self.broadcast();
        }
        self.world.take_events();
        for c in self.clients.values() {
            let _ = c.out.send(Outbound::Close(ServerMessage::error("shutting_down", "the simulation has stopped")));
        }
        self.world
    }

    fn handle(&mut self, m: Inbound) {
        match m {
            Inbound::Join { client, name, out } => {
                let c = Client {
                    name,
                    out,
                    regions: vec![],
                    npcs: vec![],
                    all_events: false,
                    shown: BTreeMap::new(),
                    interviews: BTreeMap::new(),
                    next_interview: 0,
                };
                c.send(ServerMessage::Welcome {
                    protocol_version: PROTOCOL_VERSION,
                    session: client.clone(),
                    world: self.summary(),
                });
                self.clients.insert(client, c);
            }
            Inbound::Leave { client } => {
                self.clients.remove(&client);
            }
            Inbound::Request { client, message } => {
                let reply = self.request(&client, message);
                if let (Some(reply), Some(c)) = (reply, self.clients.get(&client)) {
                    c.send(reply);
                }
            }
        }
    }

    fn request(&mut self, client: &str, message: ClientMessage) -> Option<ServerMessage> {
        let known = |w: &World, npc: &str| w.state.agents.contains_key(npc);
        match message {
            ClientMessage::Subscribe { topic } => match topic {
                Subscription::Events => {
                    self.clients.get_mut(client)?.all_events = true;
                    None
                }
                Subscription::Npc { npc } => {
                    if !known(&self.world, &npc) {
                        return Some(ServerMessage::error("unknown_npc", format!("no NPC {npc}")));
                    }
                    self.clients.get_mut(client)?.npcs.push(npc);
                    None
                }
                Subscription::Region { x, y, w, h } => {
                    let t = &self.world.state.terrain;
                    let x0 = x.clamp(0, t.width as i32);
                    let y0 = y.clamp(0, t.height as i32);
                    let x1 = x.saturating_add(w).clamp(0, t.width as i32);
                    let y1 = y.saturating_add(h).clamp(0, t.height as i32);
                    if x1 <= x0 || y1 <= y0 {
                        return Some(ServerMessage::error("empty_region", "the region does not overlap the map"));
                    }
                    let region = Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
                    let snapshot = self.snapshot(region);
                    let c = self.clients.get_mut(client)?;
                    c.regions.push(region);
                    if let ServerMessage::Snapshot { npcs, .. } = &snapshot {
                        for n in npcs {
                            c.shown.insert(n.id.clone(), n.clone());
                        }
                    }
                    Some(snapshot)
                }
            },
            ClientMessage::Command { text, target_npc } => {
                if !known(&self.world, &target_npc) {
                    return Some(ServerMessage::error("unknown_npc", format!("no NPC {target_npc}")));
                }
                let issuer = self.clients.get(client)?.name.clone();
                let command_id = self.world.submit_command(&issuer, &target_npc, &text);
                Some(ServerMessage::Event {
                    tick: self.world.tick_count(),
                    kind: "command_received".into(),
                    npcs: vec![target_npc.clone()],
                    payload: json!({"command_id": command_id, "issuer": issuer, "target_npc": target_npc}),
                })
            }
            ClientMessage::InterviewStart { npc } => {
                if !known(&self.world, &npc) {
                    return Some(ServerMessage::error("unknown_npc", format!("no NPC {npc}")));
                }
                let c = self.clients.get_mut(client)?;
                let session = format!("{client}/interview-{}", c.next_interview);
                c.next_interview += 1;
                c.interviews.insert(session.clone(), InterviewSession::open(&session, &npc));
                Some(ServerMessage::InterviewReply { session, text: String::new() })
            }
            ClientMessage::InterviewTurn { session, text } => {
                let c = self.clients.get_mut(client)?;
                let Some(s) = c.interviews.get_mut(&session) else {
                    return Some(ServerMessage::error("unknown_session", format!("no interview {session}")));
                };
                let w = &self.world;
                match interview_turn(&w.state, s, &text, &mut self.config.interview_oracle, w.embedder.as_ref()) {
                    Ok(answer) => Some(ServerMessage::InterviewReply { session, text: answer }),
                    Err(e) => Some(ServerMessage::error("interview_failed", e.to_string())),
                }
            }
            ClientMessage::InterviewEnd { session, remember } => {
                let c = self.clients.get_mut(client)?;
                let Some(mut s) = c.interviews.remove(&session) else {
                    return Some(ServerMessage::error("unknown_session", format!("no interview {session}")));
                };
                match self.world.finish_interview(&mut s, remember, &mut self.config.interview_oracle) {
                    Ok(memory) => Some(ServerMessage::Event {
                        tick: self.world.tick_count(),
                        kind: "interview_ended".into(),
                        npcs: vec![s.npc_id.clone()],
                        payload: json!({"session": session, "remembered": memory}),
                    }),
                    Err(e) => Some(ServerMessage::error("interview_failed", e.to_string())),
                }
            }
            // Handled by the connection.
            ClientMessage::Hello { .. } | ClientMessage::Ping => None,
        }
    }

    fn summary(&self) -> WorldSummary {
        let s = &self.world.state;
        WorldSummary {
            seed: s.spec.seed,
            description: s.spec.description.clone(),
            width: s.terrain.width,
            height: s.terrain.height,
            tick: s.clock.tick,
            day: s.day(),
            minute: s.minute(),
            buildings: s.settlement.buildings.len(),
            npcs: s
                .agents
                .values()
                .map(|a| NpcSummary { id: a.profile.npc_id.clone(), name: a.profile.full_name() })
                .collect(),
        }
    }

    fn npc_views(&self) -> Vec<NpcView> {
        let s = &self.world.state;
        let (day, minute) = (s.day(), s.minute());
        s.agents
            .values()
            .map(|a| NpcView {
                id: a.profile.npc_id.clone(),
                name: a.profile.full_name(),
                position: a.profile.position,
                activity: match a.current_entry(day, minute) {
                    Some(e) => e.activity.clone(),
                    None if a.is_awake(minute) => "idle".into(),
                    None => "sleeping".into(),
                },
                conversation: a.conversation.clone(),
            })
            .collect()
    }

    fn snapshot(&self, region: Rect) -> ServerMessage {
        let s = &self.world.state;
        let tiles = region.tiles().map(|t| s.terrain.biome_ids[(t.y as u32 * s.terrain.width + t.x as u32) as usize]).collect();
        ServerMessage::Snapshot {
            tick: s.clock.tick,
            region,
            tiles,
            biome_names: s.biomes.biomes.iter().map(|b| b.generic_id.clone()).collect(),
            roads: s.roads.road_tiles.iter().copied().filter(|t| region.contains(*t)).collect(),
            buildings: s
                .settlement
                .buildings
                .iter()
                .map(|b| BuildingView {
                    id: b.id.clone(),
                    function: b.spec.function_tag.clone(),
                    footprint: Rect { x: b.origin.x, y: b.origin.y, w: b.spec.width, h: b.spec.height },
                    entrance: b.entrance,
                })
                .filter(|b| b.footprint.intersects(&region))
                .collect(),
            npcs: self.npc_views().into_iter().filter(|n| region.contains(n.position)).collect(),
        }
    }

    fn broadcast(&mut self) {
        let events = self.world.take_events();
        let views = self.npc_views();
        let tick = self.world.tick_count();
        let mut gone = vec![];
        for (id, c) in self.clients.iter_mut() {
            let mut ok = true;
            for e in events.iter().filter(|e| c.wants(e)) {
                ok &= c.send(ServerMessage::Event {
                    tick: e.tick,
                    kind: e.kind.clone(),
                    npcs: e.npcs.clone(),
                    payload: e.payload.clone(),
                });
            }
            if !c.regions.is_empty() {
                let mut changed = vec![];
                for v in &views {
                    let inside = c.watches(v.position);
                    let was = c.shown.get(&v.id);
                    if inside && was != Some(v) || !inside && was.is_some() {
                        changed.push(v.clone());
                        if inside {
                            c.shown.insert(v.id.clone(), v.clone());
                        } else {
                            c.shown.remove(&v.id);
                        }
                    }
                }
                if !changed.is_empty() {
                    ok &= c.send(ServerMessage::Delta { tick, npcs: changed });
                }
            }
            if !ok {
                gone.push(id.clone());
            }
        }
        for id in gone {
            self.clients.remove(&id);
        }
    }
}
