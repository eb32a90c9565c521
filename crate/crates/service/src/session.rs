//! Transport-independent state of one live session: the planner loop, the
//! clutch, and the message sequencing.

use teleop_core::config::{ParamSet, RobotConfig, BUILTIN_PARAM_SETS};
use teleop_core::kinematics::Pose;
use teleop_core::reference::{Retargeter, TargetSample};
use teleop_core::runner::{CycleOutcome, Session, SessionOptions, LOOP_RATE_HZ};

use crate::protocol::{
    decode_inbound, AckBody, Envelope, EventBody, Inbound, InboundFrame, Level, MetricsBody,
    Outbound, PlanPreviewBody, Sequencer, Snapshot, StateBody, WirePose,
};

/// Smallest spacing forced between target timestamps that arrive at the
/// same instant (s).
const MIN_SAMPLE_SPACING: f64 = 1e-6;

/// Messages produced by one loop cycle.
#[derive(Clone, Debug)]
pub struct CycleMessages {
    pub state: Envelope,
    pub preview: Envelope,
    pub metrics: Envelope,
    /// Warnings and notices raised by the cycle.
    pub events: Vec<Envelope>,
}

pub struct SessionCore {
    id: u64,
    session: Session,
    retarget: Retargeter,
    seq: Sequencer,
    params_dir: Option<std::path::PathBuf>,
    cycle: u64,
    last_time: f64,
    last_sample_time: Option<f64>,
    last_reference: Option<WirePose>,
}

impl SessionCore {
    pub fn new(
        id: u64,
        robot: RobotConfig,
        params: ParamSet,
        params_dir: Option<std::path::PathBuf>,
    ) -> teleop_core::Result<Self> {
        Ok(Self {
            id,
            session: Session::new(robot, params, SessionOptions::default())?,
            retarget: Retargeter::identity(),
            seq: Sequencer::default(),
            params_dir,
            cycle: 0,
            last_time: 0.0,
            last_sample_time: None,
            last_reference: None,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn clutch_engaged(&self) -> bool {
        self.retarget.clutch_engaged()
    }

    fn stamp(&mut self, body: Outbound) -> Envelope {
        self.seq.stamp(self.id, body)
    }

    /// Sequenced `event` message.
    pub fn event(&mut self, level: Level, code: &str, message: impl Into<String>) -> Envelope {
        self.stamp(Outbound::Event(EventBody {
            level,
            code: code.into(),
            message: message.into(),
        }))
    }

    pub fn heartbeat(&mut self) -> Envelope {
        self.stamp(Outbound::Heartbeat {})
    }

    fn state_body(&self) -> StateBody {
        let s = &self.session;
        let kin = s.kinematics();
        let x = s.plant().state;
        let fk = kin.forward(&x.q);
        let spheres = kin
            .sphere_centers(&x.q, &s.robot().spheres)
            .expect("robot config was validated");
        StateBody {
            cycle: self.cycle,
            t: self.last_time,
            params: s.params().name.clone(),
            clutch: self.retarget.clutch_engaged(),
            q: x.q.into(),
            qd: x.qd.into(),
            ee: WirePose::from_pose(&fk.ee),
            frames: fk
                .frames
                .iter()
                .map(|f| f.translation.vector.into())
                .collect(),
            spheres: spheres.iter().map(|c| (*c).into()).collect(),
            reference: self.last_reference.clone(),
            target: s.latest_target().map(|t| WirePose::from_pose(&t.pose)),
        }
    }

    /// Geometry and current state for a newly attached client.
    pub fn snapshot(&mut self) -> Envelope {
        let problem = self.session.problem();
        let snapshot = Snapshot {
            params: self.session.params().name.clone(),
            available_params: BUILTIN_PARAM_SETS.iter().map(|s| s.to_string()).collect(),
            loop_rate_hz: LOOP_RATE_HZ,
            horizon: problem.horizon(),
            dt: problem.dt(),
            robot: self.session.robot().clone(),
            clutch: self.retarget.clutch_engaged(),
            current: self.state_body(),
        };
        self.stamp(Outbound::Snapshot(Box::new(snapshot)))
    }

    /// Decodes and applies one text frame. Malformed frames produce an error
    /// event and change nothing.
    pub fn handle_text(&mut self, text: &str, now: f64) -> Vec<Envelope> {
        match decode_inbound(text) {
            Ok(frame) => self.handle(frame, now),
            Err(e) => vec![self.event(Level::Error, e.code(), e.to_string())],
        }
    }

    /// Applies one decoded frame at session time `now`.
    pub fn handle(&mut self, frame: InboundFrame, now: f64) -> Vec<Envelope> {
        if let Some(s) = frame.session {
            if s != self.id {
                let msg = format!(
                    "frame addressed to session {s}, this is session {}",
                    self.id
                );
                return vec![self.event(Level::Error, "wrong_session", msg)];
            }
        }
        let kind = frame.message.kind();
        let applied = match frame.message {
            Inbound::Hello { .. } => {
                return vec![self.event(
                    Level::Error,
                    "invalid_message",
                    "hello is only valid as the first frame",
                )];
            }
            Inbound::SetTarget { pose } => {
                let pose = match pose.to_pose() {
                    Ok(p) => p,
                    Err(e) => return vec![self.event(Level::Error, "invalid_message", e)],
                };
                match self.push_target(&pose, now) {
                    Ok(applied) => applied,
                    Err(e) => {
                        return vec![self.event(Level::Error, "invalid_message", e.to_string())]
                    }
                }
            }
            Inbound::SetParams { name } => {
                let Some(builtin) = BUILTIN_PARAM_SETS
                    .iter()
                    .find(|n| n.eq_ignore_ascii_case(&name))
                else {
                    let msg = format!(
                        "unknown parameter set '{name}' (available: {})",
                        BUILTIN_PARAM_SETS.join(", ")
                    );
                    return vec![self.event(Level::Error, "unknown_params", msg)];
                };
                let params = ParamSet::resolve(builtin, self.params_dir.as_deref())
                    .and_then(|p| self.session.set_params(p.clone()).map(|_| p));
                if let Err(e) = params {
                    return vec![self.event(Level::Error, "invalid_params", e.to_string())];
                }
                true
            }
            Inbound::Clutch { engaged } => {
                let changed = engaged != self.retarget.clutch_engaged();
                self.retarget.set_clutch(engaged);
                if engaged {
                    self.session.freeze_target();
                }
                changed
            }
            Inbound::Reset => {
                self.session.reset();
                self.last_sample_time = None;
                self.last_reference = None;
                true
            }
        };
        vec![self.stamp(Outbound::Ack(AckBody {
            of: kind.into(),
            client_seq: frame.seq,
            applied,
        }))]
    }

    fn push_target(&mut self, device: &Pose, now: f64) -> teleop_core::Result<bool> {
        let Some(target) = self.retarget.map(device) else {
            return Ok(false);
        };
        let t = match self.last_sample_time {
            Some(last) if now <= last => last + MIN_SAMPLE_SPACING,
            _ => now,
        };
        self.session.push_sample(TargetSample::new(t, target))?;
        self.last_sample_time = Some(t);
        Ok(true)
    }

    /// Runs one loop cycle at session time `now`.
    pub fn tick(&mut self, now: f64) -> teleop_core::Result<CycleMessages> {
        let out: CycleOutcome = self.session.run_cycle(now)?;
        self.cycle += 1;
        self.last_time = now;
        let rec = &out.record;
        if self.session.latest_target().is_some() {
            self.last_reference = Some(WirePose {
                p: rec.ref_p,
                q: rec.ref_quat,
            });
        }
        let kin = self.session.kinematics();
        let poses = out.plan.states[1..]
            .iter()
            .map(|x| WirePose::from_pose(&kin.ee_pose(&x.q)))
            .collect();
        let metrics = MetricsBody {
            cycle: self.cycle,
            t: now,
            params: rec.params.clone(),
            params_switched: rec.params_switched,
            a_local: rec.a_local,
            lateral_accel: rec.lateral_accel,
            tracking_error: rec.tracking_error,
            solve_ms: rec.solve_ms,
            iterations: rec.iterations,
            status: rec.status.clone(),
            degraded: rec.degraded,
            overrun: rec.overrun,
        };
        let mut events = Vec::new();
        if rec.params_switched {
            let msg = format!(
                "parameter set {} active from cycle {}",
                rec.params, self.cycle
            );
            events.push(self.event(Level::Info, "params_switched", msg));
        }
        if rec.degraded {
            let msg = format!(
                "cycle {}: solver result rejected ({}), holding the last plan",
                self.cycle, rec.status
            );
            events.push(self.event(Level::Warning, "degraded", msg));
        }
        let state = self.state_body();
        let cycle = self.cycle;
        Ok(CycleMessages {
            state: self.stamp(Outbound::State(Box::new(state))),
            preview: self.stamp(Outbound::PlanPreview(PlanPreviewBody { cycle, poses })),
            metrics: self.stamp(Outbound::Metrics(metrics)),
            events,
        })
    }
}
