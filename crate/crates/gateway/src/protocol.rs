//! JSON wire format shared by the WebSocket and TCP transports.

use fesloop::cursor::ReferenceSpec;
use fesloop::session::{ParamUpdate, TickSnapshot};
use fesloop::stim::{FsmState, StimCommand};
use fesloop::Movement;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageType {
    StateUpdate,
    ParamUpdate,
    IntentInput,
    RefSpecUpdate,
    Ack,
    Error,
}

/// Envelope for every message in either direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// Loop state broadcast to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub tick: u64,
    pub t_us: u64,
    pub cursor: Point,
    pub reference: Point,
    pub label: Option<Movement>,
    pub fsm_state: FsmState,
    pub current_ma: f64,
    pub command: Option<StimCommand>,
    pub angle_deg: f64,
    pub intent_movement: Movement,
    pub intent_level: f64,
}

impl From<&TickSnapshot> for StateUpdate {
    fn from(s: &TickSnapshot) -> Self {
        StateUpdate {
            tick: s.tick,
            t_us: s.t_us,
            cursor: s.cursor.into(),
            reference: s.reference.into(),
            label: s.label,
            fsm_state: s.fsm_state,
            current_ma: s.current_ma,
            command: s.command.clone(),
            angle_deg: s.angle_deg,
            intent_movement: s.intent.movement,
            intent_level: s.intent.level,
        }
    }
}

/// Where the simulated participant's effort comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntentInput {
    Manual { movement: Movement, level: f64 },
    Scripted,
}

/// Replaces the reference script with `cycles` repetitions of `spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefSpecUpdate {
    pub spec: ReferenceSpec,
    #[serde(default = "one")]
    pub cycles: usize,
}

fn one() -> usize {
    1
}

/// Acknowledges a request; `t_us` is the loop time it took effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub t_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub reason: String,
}

/// Decoded client request.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Param(ParamUpdate),
    Intent(IntentInput),
    Reference(RefSpecUpdate),
}

impl WireMessage {
    pub fn new(kind: MessageType, seq: u64, payload: impl Serialize) -> Self {
        let payload = serde_json::to_value(payload).unwrap_or(Value::Null);
        WireMessage { kind, seq, payload }
    }

    pub fn ack(seq: u64, t_us: u64) -> Self {
        WireMessage::new(MessageType::Ack, seq, Ack { t_us })
    }

    pub fn error(seq: u64, reason: impl Into<String>) -> Self {
        WireMessage::new(
            MessageType::Error,
            seq,
            ErrorPayload {
                reason: reason.into(),
            },
        )
    }

    pub fn state(seq: u64, snap: &TickSnapshot) -> Self {
        WireMessage::new(MessageType::StateUpdate, seq, StateUpdate::from(snap))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

/// Parses a client text message. On failure returns the seq to echo
/// (0 when it could not be read) and a reason.
pub fn parse_request(text: &str) -> Result<(u64, Request), (u64, String)> {
    let msg: WireMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => {
            let seq = serde_json::from_str::<Value>(text)
                .ok()
                .and_then(|v| v.get("seq").and_then(Value::as_u64))
                .unwrap_or(0);
            return Err((seq, format!("malformed message: {e}")));
        }
    };
    let seq = msg.seq;
    let bad = |e: serde_json::Error| (seq, format!("invalid {:?} payload: {e}", msg.kind));
    let req = match msg.kind {
        MessageType::ParamUpdate => Request::Param(msg.payload_as().map_err(bad)?),
        MessageType::IntentInput => {
            let input: IntentInput = msg.payload_as().map_err(bad)?;
            if let IntentInput::Manual { level, .. } = input {
                if !(0.0..=1.0).contains(&level) {
                    return Err((seq, format!("intent level {level} outside [0, 1]")));
                }
            }
            Request::Intent(input)
        }
        MessageType::RefSpecUpdate => {
            let update: RefSpecUpdate = msg.payload_as().map_err(bad)?;
            if update.cycles == 0 {
                return Err((seq, "cycles must be at least 1".into()));
            }
            Request::Reference(update)
        }
        other => return Err((seq, format!("{other:?} is server-to-client only"))),
    };
    Ok((seq, req))
}
