//! Wire format: each message is a JSON object preceded by its length as a
//! 4-byte big-endian integer. Both directions use the same framing.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use worldsim_core::geom::{Rect, Tile};

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames larger than this are refused without reading the body.
pub const MAX_FRAME: u32 = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("connection error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
}

/// What a client can follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subscription {
    /// Tiles once, then NPC movement inside the rectangle.
    Region { x: i32, y: i32, w: i32, h: i32 },
    /// Every event that concerns one NPC, utterances included.
    Npc { npc: String },
    /// The whole event log.
    Events,
}

impl Subscription {
    pub fn region(r: Rect) -> Self {
        Subscription::Region { x: r.x, y: r.y, w: r.w, h: r.h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello { client_name: String, protocol_version: u32 },
    Subscribe { topic: Subscription },
    Command { text: String, target_npc: String },
    InterviewStart { npc: String },
    InterviewTurn { session: String, text: String },
    InterviewEnd { session: String, remember: bool },
    Ping,
}

pub const CLIENT_MESSAGE_TYPES: &[&str] =
    &["hello", "subscribe", "command", "interview_start", "interview_turn", "interview_end", "ping"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcSummary {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub seed: u64,
    pub description: String,
    pub width: u32,
    pub height: u32,
    pub tick: u64,
    pub day: u32,
    pub minute: u32,
    pub buildings: usize,
    pub npcs: Vec<NpcSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcView {
    pub id: String,
    pub name: String,
    pub position: Tile,
    pub activity: String,
    pub conversation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingView {
    pub id: String,
    pub function: String,
    pub footprint: Rect,
    pub entrance: Tile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        protocol_version: u32,
        session: String,
        world: WorldSummary,
    },
    Snapshot {
        tick: u64,
        region: Rect,
        /// Biome index per tile, row-major over `region`.
        tiles: Vec<u16>,
        biome_names: Vec<String>,
        roads: Vec<Tile>,
        buildings: Vec<BuildingView>,
        npcs: Vec<NpcView>,
    },
    Delta {
        tick: u64,
        /// NPCs that moved or changed activity; ones that left the region
        /// are included once with their new position.
        npcs: Vec<NpcView>,
    },
    Event {
        tick: u64,
        kind: String,
        npcs: Vec<String>,
        payload: serde_json::Value,
    },
    InterviewReply { session: String, text: String },
    Error { code: String, message: String },
    Pong,
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.to_string(), message: message.into() }
    }
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, message: &T) -> Result<(), FrameError> {
    let body = serde_json::to_vec(message).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).map_err(|_| FrameError::TooLarge(u32::MAX))?;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame body. `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header);
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

/// Why a frame body was not a client message.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeError {
    Malformed(String),
    UnknownType(String),
}

impl DecodeError {
    pub fn into_message(self) -> ServerMessage {
        match self {
            DecodeError::Malformed(m) => ServerMessage::error("malformed_message", m),
            DecodeError::UnknownType(t) => ServerMessage::error("unknown_message", format!("unknown message type {t:?}")),
        }
    }
}

pub fn decode_client(body: &[u8]) -> Result<ClientMessage, DecodeError> {
    let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    if let Some(t) = value.get("type").and_then(|t| t.as_str()) {
        if !CLIENT_MESSAGE_TYPES.contains(&t) {
            return Err(DecodeError::UnknownType(t.to_string()));
        }
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            ClientMessage::Hello { client_name: "a".into(), protocol_version: 1 },
            ClientMessage::Subscribe { topic: Subscription::Region { x: 1, y: 2, w: 3, h: 4 } },
            ClientMessage::Subscribe { topic: Subscription::Npc { npc: "npc-0001".into() } },
            ClientMessage::Subscribe { topic: Subscription::Events },
            ClientMessage::Command { text: "dance".into(), target_npc: "npc-0001".into() },
            ClientMessage::InterviewStart { npc: "npc-0002".into() },
            ClientMessage::InterviewTurn { session: "s".into(), text: "hi".into() },
            ClientMessage::InterviewEnd { session: "s".into(), remember: true },
            ClientMessage::Ping,
        ];
        let mut buf = vec![];
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = io::Cursor::new(buf);
        for m in &msgs {
            let body = read_frame(&mut r).unwrap().unwrap();
            assert_eq!(&decode_client(&body).unwrap(), m);
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn header_is_big_endian_length() {
        let mut buf = vec![];
        write_frame(&mut buf, &ClientMessage::Ping).unwrap();
        let body = br#"{"type":"ping"}"#;
        assert_eq!(&buf[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&buf[4..], body);
    }

    #[test]
    fn oversized_and_truncated_frames() {
        let mut r = io::Cursor::new((MAX_FRAME + 1).to_be_bytes().to_vec());
        assert!(matches!(read_frame(&mut r), Err(FrameError::TooLarge(_))));
        let mut r = io::Cursor::new(vec![0, 0]);
        assert!(matches!(read_frame(&mut r), Err(FrameError::Io(_))));
        let mut r = io::Cursor::new(vec![0, 0, 0, 9, b'{']);
        assert!(matches!(read_frame(&mut r), Err(FrameError::Io(_))));
    }

    #[test]
    fn decoding_tells_unknown_from_malformed() {
        assert_eq!(decode_client(br#"{"type":"teleport"}"#), Err(DecodeError::UnknownType("teleport".into())));
        assert!(matches!(decode_client(b"not json"), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode_client(br#"{"type":"command","text":1}"#), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode_client(br#"{"type":"interview_start","npc":"a","extra":1}"#), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode_client(br#"[1,2]"#), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn server_messages_are_tagged() {
        let v = serde_json::to_value(ServerMessage::error("x", "y")).unwrap();
        assert_eq!(v, serde_json::json!({"type": "error", "code": "x", "message": "y"}));
        let v = serde_json::to_value(ServerMessage::Pong).unwrap();
        assert_eq!(v, serde_json::json!({"type": "pong"}));
    }
}
