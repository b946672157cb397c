//! Wire messages: one JSON object per line. See `PROTOCOL.md`.

use std::collections::BTreeMap;

use notepilot_core::runtime::{self, Ack, Snapshot, Update};
use notepilot_core::session::{Action, Target};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        version: u32,
        token: String,
        /// Session to rejoin; a new one is created when absent.
        #[serde(default)]
        session: Option<String>,
    },
    Command {
        #[serde(default)]
        cmd_id: Option<String>,
        command: WireCommand,
    },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum WireCommand {
    Touch { on: bool },
    Press { target: Target },
    Input { target: Target, action: Action },
    Transcript { text: String, start: u64, end: u64 },
    EndTranscript,
    /// Streams the configured demo trace into the session.
    PlayDemo,
}

impl WireCommand {
    /// `None` for commands the server handles itself.
    pub fn to_runtime(&self) -> Result<Option<runtime::Command>, String> {
        Ok(Some(match self {
            WireCommand::Touch { on } => runtime::Command::Touch { on: *on },
            WireCommand::Press { target } => runtime::Command::Press { target: target.clone() },
            WireCommand::Input { target, action } => runtime::Command::Input { target: target.clone(), action: *action },
            WireCommand::Transcript { text, start, end } => runtime::Command::Transcript(
                notepilot_core::transcript::TimedText::new(text.clone(), *start, *end).map_err(|e| e.to_string())?,
            ),
            WireCommand::EndTranscript => runtime::Command::EndOfTranscript,
            WireCommand::PlayDemo => return Ok(None),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        version: u32,
        session: String,
        /// Whether the session was created by this hello.
        created: bool,
    },
    Snapshot {
        session: String,
        seq: u64,
        parts: BTreeMap<String, Value>,
    },
    Update {
        session: String,
        seq: u64,
        part: String,
        data: Value,
    },
    Notice {
        session: String,
        seq: u64,
        code: String,
        message: String,
    },
    Ack {
        session: String,
        seq: u64,
        cmd_id: Option<String>,
        accepted: bool,
        duplicate: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn snapshot(session: &str, s: Snapshot) -> Self {
        ServerMessage::Snapshot { session: session.into(), seq: s.seq, parts: s.parts }
    }

    pub fn update(session: &str, u: Update) -> Self {
        match u {
            Update::Part { seq, part, data } => ServerMessage::Update { session: session.into(), seq, part, data },
            Update::Notice { seq, code, message } => ServerMessage::Notice { session: session.into(), seq, code, message },
        }
    }

    pub fn ack(session: &str, cmd_id: Option<String>, a: Ack) -> Self {
        ServerMessage::Ack {
            session: session.into(),
            seq: a.seq,
            cmd_id,
            accepted: a.accepted,
            duplicate: a.duplicate,
            error: a.error,
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.into(), message: message.into() }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s
    }
}
