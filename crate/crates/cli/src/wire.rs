//! JSON messages exchanged with teleoperation clients over the websocket.
//!
//! Every message is an object with a `type` field. Clients send `teleop`,
//! `record` and `load_failure`; the server streams `state` snapshots and
//! answers each client message with an ack or an `error`.

use serde::{Deserialize, Serialize};

use twinsim_core::body::BodyId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// Desired pusher position on the table plane (m).
    Teleop { target: [f64; 2] },
    Record { cmd: RecordCmd },
    /// Reset the world to a queued failure state.
    LoadFailure { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordCmd {
    Start,
    Stop,
    Discard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    Idle,
    Collecting,
    ReplayingFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSnapshot {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub q_desired: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    pub id: BodyId,
    pub p: [f64; 3],
    /// `[x, y, z, w]`.
    pub quat: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub mode: SessionMode,
    pub robot: RobotSnapshot,
    pub objects: Vec<ObjectSnapshot>,
    pub recording: bool,
    /// Twin/proxy discrepancy; only present when a proxy is attached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<f64>,
    /// Failure states still waiting for a re-demonstration.
    pub failures: usize,
    pub clients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(Snapshot),
    /// The teleop target after clamping to the workspace.
    TeleopAck { target: [f64; 2] },
    RecordAck { cmd: RecordCmd },
    Saved { path: String, frames: usize, tag: String },
    FailureLoaded { index: usize, remaining: usize },
    Error { message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        Self::Error { message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"teleop","target":[0.1,-0.2]}"#).unwrap();
        assert_eq!(m, ClientMessage::Teleop { target: [0.1, -0.2] });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"record","cmd":"discard"}"#).unwrap();
        assert_eq!(m, ClientMessage::Record { cmd: RecordCmd::Discard });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"load_failure","index":3}"#).unwrap();
        assert_eq!(m, ClientMessage::LoadFailure { index: 3 });
    }

    #[test]
    fn malformed_client_messages_fail() {
        for bad in [
            "not json",
            r#"{"type":"teleop"}"#,
            r#"{"type":"teleop","target":[1.0]}"#,
            r#"{"type":"record","cmd":"pause"}"#,
            r#"{"type":"fly"}"#,
            r#"{"type":"load_failure","index":-1}"#,
        ] {
            assert!(serde_json::from_str::<ClientMessage>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn snapshot_omits_absent_fields() {
        let s = ServerMessage::State(Snapshot {
            t: 0.5,
            mode: SessionMode::ReplayingFailure,
            robot: RobotSnapshot {
                q: vec![0.0, 0.0],
                qd: vec![0.0, 0.0],
                q_desired: vec![0.0, 0.0],
            },
            objects: vec![],
            recording: false,
            sync_error: None,
            progress: None,
            failures: 2,
            clients: 1,
        })
        .to_json();
        assert_eq!(
            s,
            r#"{"type":"state","t":0.5,"mode":"replaying-failure","robot":{"q":[0.0,0.0],"qd":[0.0,0.0],"q_desired":[0.0,0.0]},"objects":[],"recording":false,"failures":2,"clients":1}"#
        );
    }
}
