//! Messages exchanged with a tuning console over a WebSocket.
//!
//! Every message is one JSON object in one text frame, tagged by `kind`.
//!
//! Client to server:
//!
//! ```json
//! {"kind":"ParamUpdate","seq":4,"activity":"LevelWalk","phase":"EarlyStance","k":3.5,"b":0.05,"theta_eq":5.0}
//! {"kind":"ModeRequest","seq":5,"mode":"StairAscent"}
//! ```
//!
//! Server to client: `Snapshot` once on connect, `Telemetry` at the
//! decimated rate, and exactly one `Ack` or `Error` per request carrying the
//! request's `seq`.
//!
//! ```json
//! {"kind":"Ack","seq":4,"t":12.004,"revision":3}
//! {"kind":"Error","seq":5,"t":12.008,"reason":"unknown activity mode 'Skipping'"}
//! ```

use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::fsm::{ControllerState, EventSet, GaitPhase};
use crate::geometry::RawSensorFrame;
use crate::impedance::ImpedanceParams;
use crate::model::ActivityMode;
use crate::session::Command;

/// Request from a console.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ClientMessage {
    ParamUpdate {
        seq: u64,
        activity: ActivityMode,
        phase: GaitPhase,
        k: f64,
        b: f64,
        theta_eq: f64,
    },
    ModeRequest {
        seq: u64,
        mode: ActivityMode,
    },
}

impl ClientMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ClientMessage::ParamUpdate { seq, .. } | ClientMessage::ModeRequest { seq, .. } => *seq,
        }
    }

    pub fn command(&self) -> Command {
        match *self {
            ClientMessage::ParamUpdate {
                activity,
                phase,
                k,
                b,
                theta_eq,
                ..
            } => Command::UpdateParams {
                activity,
                phase,
                params: ImpedanceParams::new(k, b, theta_eq),
            },
            ClientMessage::ModeRequest { mode, .. } => Command::RequestMode(mode),
        }
    }
}

/// A message that could not be decoded, with the sequence number when one
/// could be recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct Malformed {
    pub seq: Option<u64>,
    pub reason: String,
}

pub fn decode_client(text: &str) -> Result<ClientMessage, Malformed> {
    serde_json::from_str(text).map_err(|e| {
        let seq = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("seq").and_then(serde_json::Value::as_u64));
        Malformed {
            seq,
            reason: e.to_string(),
        }
    })
}

/// Decimated sensor sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub theta_imu: f64,
    pub q: f64,
    pub q_dot: f64,
    pub f_vertical: f64,
    pub m_sagittal: f64,
    pub fresh_mask: u8,
}

impl From<&RawSensorFrame> for SensorSample {
    fn from(f: &RawSensorFrame) -> Self {
        Self {
            theta_imu: f.theta_imu,
            q: f.q,
            q_dot: f.q_dot,
            f_vertical: f.f_vertical,
            m_sagittal: f.m_sagittal,
            fresh_mask: f.fresh.bits(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub mode: ActivityMode,
    pub phase: GaitPhase,
    pub events: EventSet,
    pub tau_cmd: f64,
    pub saturated: bool,
    pub fault: bool,
    pub pending_mode: Option<ActivityMode>,
}

impl From<&ControllerState> for StateSample {
    fn from(s: &ControllerState) -> Self {
        Self {
            mode: s.mode,
            phase: s.phase,
            events: s.events,
            tau_cmd: s.tau_cmd,
            saturated: s.saturated,
            fault: s.fault,
            pending_mode: s.pending_mode,
        }
    }
}

/// The impedance cell that produced the sample's torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveParams {
    pub activity: ActivityMode,
    pub phase: GaitPhase,
    pub k: f64,
    pub b: f64,
    pub theta_eq: f64,
}

impl From<&ControllerState> for ActiveParams {
    fn from(s: &ControllerState) -> Self {
        Self {
            activity: s.mode,
            phase: s.phase,
            k: s.active_params.k,
            b: s.active_params.b,
            theta_eq: s.active_params.theta_eq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ServerMessage {
    /// Full session state: config with the live impedance table, controller
    /// state and table revision.
    Snapshot {
        t: f64,
        config: Box<SessionConfig>,
        state: StateSample,
        revision: u64,
    },
    Telemetry {
        t: f64,
        sample: SensorSample,
        state: StateSample,
        active_params: ActiveParams,
        /// Parameter-table revision in force for this sample.
        revision: u64,
    },
    Ack {
        seq: u64,
        /// Time of the tick boundary at which the request took effect.
        t: f64,
        revision: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        t: f64,
        reason: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    pub fn is_telemetry(&self) -> bool {
        matches!(self, ServerMessage::Telemetry { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_documented_examples() {
        let m = decode_client(
            r#"{"kind":"ParamUpdate","seq":4,"activity":"LevelWalk","phase":"EarlyStance","k":3.5,"b":0.05,"theta_eq":5.0}"#,
        )
        .unwrap();
        assert_eq!(m.seq(), 4);
        assert_eq!(
            m.command(),
            Command::UpdateParams {
                activity: ActivityMode::LevelWalk,
                phase: GaitPhase::EarlyStance,
                params: ImpedanceParams::new(3.5, 0.05, 5.0)
            }
        );
        let m = decode_client(r#"{"kind":"ModeRequest","seq":5,"mode":"StairAscent"}"#).unwrap();
        assert_eq!(m.command(), Command::RequestMode(ActivityMode::StairAscent));
    }

    #[test]
    fn malformed_keeps_seq_when_possible() {
        let e = decode_client(r#"{"kind":"ModeRequest","seq":9,"mode":"Skipping"}"#).unwrap_err();
        assert_eq!(e.seq, Some(9));
        assert!(e.reason.contains("Skipping"), "{}", e.reason);
        let e = decode_client("not json").unwrap_err();
        assert_eq!(e.seq, None);
    }

    #[test]
    fn server_messages_round_trip() {
        let msgs = [
            ServerMessage::Ack {
                seq: 1,
                t: 0.5,
                revision: 2,
            },
            ServerMessage::Error {
                seq: None,
                t: 0.5,
                reason: "bad".into(),
            },
            ServerMessage::Snapshot {
                t: 0.0,
                config: Box::default(),
                state: StateSample::from(&ControllerState::new(ActivityMode::LevelWalk)),
                revision: 0,
            },
        ];
        for m in msgs {
            let json = m.to_json();
            assert!(json.starts_with("{\"kind\":"), "{json}");
            assert_eq!(serde_json::from_str::<ServerMessage>(&json).unwrap(), m);
        }
        assert_eq!(
            ServerMessage::Ack {
                seq: 4,
                t: 12.004,
                revision: 3
            }
            .to_json(),
            r#"{"kind":"Ack","seq":4,"t":12.004,"revision":3}"#
        );
    }
}
