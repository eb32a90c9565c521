//! Wire format shared with the operator console.
//!
//! Every frame is one JSON object (one WebSocket text frame). Outbound
//! frames carry an envelope:
//!
//! ```text
//! {"v": 1, "session": 3, "seq": 17, "type": "state", ...payload}
//! ```
//!
//! `seq` counts per session and per `type`, starts at 1 and has no gaps as
//! produced; a consumer that falls behind may skip `state` and
//! `plan_preview` frames (latest wins) but never `metrics`, `event` or `ack`
//! frames. Inbound frames need `v` and `type`; `session` and `seq` are
//! optional and, when present, `session` must name the connection's session.
//! Poses are `{"p": [x, y, z], "q": [w, x, y, z]}` in meters, world frame.
//! The JSON schema lives in `schema/session.schema.json`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use teleop_core::config::RobotConfig;
use teleop_core::kinematics::Pose;

pub const SCHEMA_VERSION: u32 = 1;

/// Session id used on frames that belong to no session (refusals).
pub const NO_SESSION: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePose {
    pub p: [f64; 3],
    /// Unit quaternion, `w, x, y, z`.
    pub q: [f64; 4],
}

impl WirePose {
    pub fn from_pose(pose: &Pose) -> Self {
        let q = pose.quaternion();
        Self {
            p: pose.position.into(),
            q: [q.w, q.i, q.j, q.k],
        }
    }

    /// Validated conversion; the quaternion is normalized.
    pub fn to_pose(&self) -> Result<Pose, String> {
        if !self.p.iter().chain(self.q.iter()).all(|v| v.is_finite()) {
            return Err("pose contains non-finite values".into());
        }
        let [w, x, y, z] = self.q;
        let quat = Quaternion::new(w, x, y, z);
        if quat.norm() < 1e-9 {
            return Err("pose quaternion has zero norm".into());
        }
        Ok(Pose::from_quaternion(
            Vector3::from(self.p),
            &UnitQuaternion::from_quaternion(quat),
        ))
    }
}

/// Client-to-service messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    /// First frame of a connection: opens a new session, or re-attaches to
    /// a live one when `resume` names it.
    Hello {
        #[serde(default)]
        resume: Option<u64>,
    },
    /// Device pose; passes through the clutch and retargeting map.
    SetTarget {
        pose: WirePose,
    },
    /// Built-in parameter set name (`P1` or `P2`).
    SetParams {
        name: String,
    },
    Clutch {
        engaged: bool,
    },
    Reset,
}

impl Inbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Inbound::Hello { .. } => "hello",
            Inbound::SetTarget { .. } => "set_target",
            Inbound::SetParams { .. } => "set_params",
            Inbound::Clutch { .. } => "clutch",
            Inbound::Reset => "reset",
        }
    }
}

/// A decoded inbound frame.
#[derive(Clone, Debug, PartialEq)]
pub struct InboundFrame {
    pub session: Option<u64>,
    pub seq: Option<u64>,
    pub message: Inbound,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unsupported schema version {found:?} (expected {SCHEMA_VERSION})")]
    Version { found: Option<Value> },
    #[error("invalid message: {0}")]
    Message(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Json(_) => "malformed_json",
            ProtocolError::Version { .. } => "unsupported_version",
            ProtocolError::Message(_) => "invalid_message",
        }
    }
}

pub fn decode_inbound(text: &str) -> Result<InboundFrame, ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::Message("frame must be a JSON object".into()));
    };
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        other => return Err(ProtocolError::Version { found: other }),
    }
    let session = take_id(&mut obj, "session")?;
    let seq = take_id(&mut obj, "seq")?;
    let message = serde_json::from_value(Value::Object(obj))
        .map_err(|e| ProtocolError::Message(e.to_string()))?;
    Ok(InboundFrame {
        session,
        seq,
        message,
    })
}

fn take_id(obj: &mut Map<String, Value>, key: &str) -> Result<Option<u64>, ProtocolError> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| {
            ProtocolError::Message(format!("`{key}` must be a non-negative integer"))
        }),
    }
}

/// Serializes an inbound message with its envelope (used by clients and tests).
pub fn encode_inbound(message: &Inbound, session: Option<u64>, seq: Option<u64>) -> String {
    let mut obj = match serde_json::to_value(message).expect("inbound messages serialize") {
        Value::Object(o) => o,
        _ => unreachable!("tagged enums serialize to objects"),
    };
    obj.insert("v".into(), SCHEMA_VERSION.into());
    if let Some(s) = session {
        obj.insert("session".into(), s.into());
    }
    if let Some(s) = seq {
        obj.insert("seq".into(), s.into());
    }
    Value::Object(obj).to_string()
}

/// Geometry and configuration sent once per connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub params: String,
    pub available_params: Vec<String>,
    pub loop_rate_hz: f64,
    pub horizon: usize,
    pub dt: f64,
    pub robot: RobotConfig,
    pub clutch: bool,
    /// Current arm state, same layout as a `state` payload.
    pub current: StateBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub cycle: u64,
    /// Session loop time (s).
    pub t: f64,
    pub params: String,
    pub clutch: bool,
    pub q: [f64; 6],
    pub qd: [f64; 6],
    pub ee: WirePose,
    /// Origins of the base and link frames, for drawing the links.
    pub frames: Vec<[f64; 3]>,
    /// World-frame collision sphere centers, in robot-config order.
    pub spheres: Vec<[f64; 3]>,
    /// First node of the predicted reference, if any target has arrived.
    pub reference: Option<WirePose>,
    /// Latest operator target after retargeting.
    pub target: Option<WirePose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanPreviewBody {
    pub cycle: u64,
    /// End-effector poses of plan nodes `1..=N`.
    pub poses: Vec<WirePose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub cycle: u64,
    pub t: f64,
    pub params: String,
    pub params_switched: bool,
    /// `a_local` of the executed segment (m/s^2).
    pub a_local: [f64; 3],
    pub lateral_accel: f64,
    pub tracking_error: f64,
    pub solve_ms: f64,
    pub iterations: usize,
    pub status: String,
    pub degraded: bool,
    pub overrun: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Info,
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventBody {
    pub level: Level,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AckBody {
    /// `type` of the acknowledged inbound message.
    pub of: String,
    /// Client `seq` of that message, when it sent one.
    pub client_seq: Option<u64>,
    /// Whether the command changed anything (a target sent with the clutch
    /// engaged is acknowledged but not applied).
    pub applied: bool,
}

/// Service-to-client payloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Snapshot(Box<Snapshot>),
    State(Box<StateBody>),
    PlanPreview(PlanPreviewBody),
    Metrics(MetricsBody),
    Event(EventBody),
    Ack(AckBody),
    Heartbeat {},
    Refused { reason: String },
}

impl Outbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Outbound::Snapshot(_) => "snapshot",
            Outbound::State(_) => "state",
            Outbound::PlanPreview(_) => "plan_preview",
            Outbound::Metrics(_) => "metrics",
            Outbound::Event(_) => "event",
            Outbound::Ack(_) => "ack",
            Outbound::Heartbeat {} => "heartbeat",
            Outbound::Refused { .. } => "refused",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub session: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub body: Outbound,
}

impl Envelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize")
    }

    /// Refusal outside any session.
    pub fn refused(session: u64, reason: impl Into<String>) -> Self {
        Self {
            v: SCHEMA_VERSION,
            session,
            seq: 1,
            body: Outbound::Refused {
                reason: reason.into(),
            },
        }
    }
}

/// Per-type sequence counters of one session.
#[derive(Clone, Debug, Default)]
pub struct Sequencer {
    counters: std::collections::BTreeMap<&'static str, u64>,
}

impl Sequencer {
    pub fn stamp(&mut self, session: u64, body: Outbound) -> Envelope {
        let c = self.counters.entry(body.kind()).or_insert(0);
        *c += 1;
        Envelope {
            v: SCHEMA_VERSION,
            session,
            seq: *c,
            body,
        }
    }
}
