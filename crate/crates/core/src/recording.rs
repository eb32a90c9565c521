//! Recorded operator target streams.
//!
//! One JSON object per line:
//!
//! ```text
//! {"t": 0.02, "p": [x, y, z], "q": [w, x, y, z]}
//! ```
//!
//! `t` is in seconds and strictly increasing, `p` is the target position in
//! meters (world frame), `q` the target orientation as a unit quaternion in
//! `w, x, y, z` order (normalized on load). Blank lines are ignored.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::reference::TargetSample;

/// Bundled synthetic recording: [`SweepSpec::default`] around the home
/// end-effector pose of the built-in robot, 12 s at 50 Hz.
pub const AGGRESSIVE_SWEEP_JSONL: &str = include_str!("../fixtures/aggressive_sweep.jsonl");

/// Parsed [`AGGRESSIVE_SWEEP_JSONL`].
pub fn aggressive_sweep() -> Vec<TargetSample> {
    parse_recording(AGGRESSIVE_SWEEP_JSONL, "aggressive_sweep.jsonl")
        .expect("bundled fixture is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    t: f64,
    p: [f64; 3],
    q: [f64; 4],
}

impl Record {
    fn from_sample(s: &TargetSample) -> Self {
        let q = s.pose.quaternion();
        Self {
            t: s.timestamp,
            p: s.pose.position.into(),
            q: [q.w, q.i, q.j, q.k],
        }
    }
}

pub fn parse_recording(text: &str, source_name: &str) -> Result<Vec<TargetSample>> {
    let mut out: Vec<TargetSample> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: line_no,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let finite = std::iter::once(rec.t)
            .chain(rec.p)
            .chain(rec.q)
            .all(f64::is_finite);
        if !finite {
            return Err(err("non-finite value".into()));
        }
        let [w, x, y, z] = rec.q;
        let quat = Quaternion::new(w, x, y, z);
        if quat.norm() < 1e-9 {
            return Err(err("orientation quaternion has zero norm".into()));
        }
        if let Some(prev) = out.last() {
            if rec.t <= prev.timestamp {
                return Err(err(format!(
                    "timestamp {} does not increase (previous {})",
                    rec.t, prev.timestamp
                )));
            }
        }
        let pose =
            Pose::from_quaternion(Vector3::from(rec.p), &UnitQuaternion::from_quaternion(quat));
        out.push(TargetSample::new(rec.t, pose));
    }
    Ok(out)
}

pub fn read_recording(path: &Path) -> Result<Vec<TargetSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recording(&text, &path.display().to_string())
}

pub fn write_recording<W: Write>(samples: &[TargetSample], mut w: W) -> std::io::Result<()> {
    for s in samples {
        let line = serde_json::to_string(&Record::from_sample(s)).map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Synthetic aggressive operator motion: a lateral sinusoidal sweep combined
/// with a slow roll excursion of the container.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// Seconds.
    pub duration: f64,
    /// Samples per second.
    pub sample_rate: f64,
    /// Peak lateral (world y) displacement, m.
    pub amplitude: f64,
    /// Sweep frequency, Hz.
    pub frequency: f64,
    /// Peak roll about the world x axis, rad.
    pub roll_peak: f64,
    /// Roll excursion frequency, Hz.
    pub roll_frequency: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            duration: 12.0,
            sample_rate: 50.0,
            amplitude: 0.3,
            frequency: 0.5,
            roll_peak: PI / 2.0,
            roll_frequency: 0.25,
        }
    }
}

impl SweepSpec {
    /// Target pose at time `t` around `center`:
    /// `y(t) = A sin(2 pi f t)`, `roll(t) = roll_peak (1 - cos(2 pi f_r t)) / 2`.
    pub fn pose_at(&self, center: &Pose, t: f64) -> Pose {
        let y = self.amplitude * (2.0 * PI * self.frequency * t).sin();
        let roll = 0.5 * self.roll_peak * (1.0 - (2.0 * PI * self.roll_frequency * t).cos());
        Pose::new(
            center.position + Vector3::new(0.0, y, 0.0),
            Rotation3::from_axis_angle(&Vector3::x_axis(), roll).matrix() * center.rotation,
        )
    }

    pub fn generate(&self, center: &Pose) -> Vec<TargetSample> {
        let count = (self.duration * self.sample_rate).round() as usize;
        (0..=count)
            .map(|k| {
                let t = k as f64 / self.sample_rate;
                TargetSample::new(t, self.pose_at(center, t))
            })
            .collect()
    }
}
