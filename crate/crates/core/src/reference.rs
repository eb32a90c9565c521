//! Operator target handling: retargeting, twist estimation and the
//! constant-velocity reference prediction over the horizon.

use std::collections::VecDeque;

use nalgebra::{Isometry3, Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::Pose;

pub const DEFAULT_TWIST_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSample {
    /// Seconds.
    pub timestamp: f64,
    pub pose: Pose,
}

impl TargetSample {
    pub fn new(timestamp: f64, pose: Pose) -> Self {
        Self { timestamp, pose }
    }
}

/// Predicted target poses for nodes `1..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    pub dt: f64,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    /// The same pose held at every node.
    pub fn constant(pose: &Pose, dt: f64, horizon: usize) -> Self {
        Self {
            positions: vec![pose.position; horizon],
            rotations: vec![pose.rotation; horizon],
            dt,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
            && self
                .rotations
                .iter()
                .all(|r| r.iter().all(|v| v.is_finite()))
    }
}

/// Linear (m/s) and angular (rad/s, world frame) velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }
}

/// Least-squares velocity over the last `window` samples plus the mean of the
/// per-interval rotation rates. Fewer than two samples give a zero twist.
pub fn estimate_twist(samples: &[TargetSample], window: usize) -> Twist {
    let start = samples.len().saturating_sub(window.max(2));
    let recent = &samples[start..];
    if recent.len() < 2 {
        return Twist::zero();
    }
    let n = recent.len() as f64;
    let t_mean = recent.iter().map(|s| s.timestamp).sum::<f64>() / n;
    let p_mean = recent.iter().map(|s| s.pose.position).sum::<Vector3<f64>>() / n;
    let mut sxx = 0.0;
    let mut sxy = Vector3::zeros();
    for s in recent {
        let dt = s.timestamp - t_mean;
        sxx += dt * dt;
        sxy += (s.pose.position - p_mean) * dt;
    }
    let linear = if sxx > 0.0 {
        sxy / sxx
    } else {
        Vector3::zeros()
    };

    let mut angular = Vector3::zeros();
    let mut intervals = 0usize;
    for pair in recent.windows(2) {
        let elapsed = pair[1].timestamp - pair[0].timestamp;
        if elapsed <= 0.0 {
            continue;
        }
        let rel = Rotation3::from_matrix_unchecked(
            pair[1].pose.rotation * pair[0].pose.rotation.transpose(),
        );
        angular += rel.scaled_axis() / elapsed;
        intervals += 1;
    }
    if intervals > 0 {
        angular /= intervals as f64;
    }
    Twist { linear, angular }
}

/// Projects points outside the reach sphere radially onto it.
pub fn clip_to_reach(p: &Vector3<f64>, reach: f64) -> Vector3<f64> {
    let norm = p.norm();
    if norm > reach {
        p * (reach / norm)
    } else {
        *p
    }
}

/// Constant linear and angular velocity extrapolation for nodes `1..=horizon`.
pub fn predict(
    start: &Pose,
    twist: &Twist,
    dt: f64,
    horizon: usize,
    reach: f64,
) -> Result<ReferenceTrajectory> {
    if dt.is_nan() || dt <= 0.0 || horizon == 0 || reach.is_nan() || reach <= 0.0 {
        return Err(Error::Parameter(format!(
            "prediction needs dt > 0, horizon >= 1 and reach > 0 (got {dt}, {horizon}, {reach})"
        )));
    }
    let mut positions = Vec::with_capacity(horizon);
    let mut rotations = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let tau = k as f64 * dt;
        positions.push(clip_to_reach(&(start.position + twist.linear * tau), reach));
        let spin = Rotation3::new(twist.angular * tau);
        rotations.push(spin.matrix() * start.rotation);
    }
    Ok(ReferenceTrajectory {
        positions,
        rotations,
        dt,
    })
}

/// Bounded buffer of recent target samples with strictly increasing timestamps.
#[derive(Clone, Debug)]
pub struct SampleBuffer {
    samples: VecDeque<TargetSample>,
    capacity: usize,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity),
            capacity: capacity.max(2),
        }
    }

    pub fn push(&mut self, sample: TargetSample) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if sample.timestamp.is_nan() || sample.timestamp <= last.timestamp {
                return Err(Error::Input(format!(
                    "sample timestamp {} does not follow {}",
                    sample.timestamp, last.timestamp
                )));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn latest(&self) -> Option<&TargetSample> {
        self.samples.back()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Drops everything but the newest sample, so velocity estimates restart
    /// from zero.
    pub fn keep_latest(&mut self) {
        while self.samples.len() > 1 {
            self.samples.pop_front();
        }
    }

    /// Samples in chronological order.
    pub fn to_vec(&self) -> Vec<TargetSample> {
        self.samples.iter().cloned().collect()
    }
}

/// Fixed device-to-robot transform with a clutch.
///
/// While the clutch is engaged the output target is frozen. On release the
/// offset is recomputed so the target continues from the frozen pose.
#[derive(Clone, Debug)]
pub struct Retargeter {
    mapping: Isometry3<f64>,
    offset: Isometry3<f64>,
    engaged: bool,
    pending_release: bool,
    last_target: Option<Isometry3<f64>>,
}

impl Retargeter {
    pub fn new(mapping: Isometry3<f64>) -> Self {
        Self {
            mapping,
            offset: Isometry3::identity(),
            engaged: false,
            pending_release: false,
            last_target: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(Isometry3::identity())
    }

    pub fn clutch_engaged(&self) -> bool {
        self.engaged
    }

    pub fn set_clutch(&mut self, engaged: bool) {
        if self.engaged && !engaged {
            // offset is re-anchored on the first device pose after release
            self.pending_release = true;
        }
        self.engaged = engaged;
    }

    /// Maps a device pose. Returns `None` while the clutch is engaged.
    pub fn map(&mut self, device: &Pose) -> Option<Pose> {
        if self.engaged {
            return None;
        }
        let mapped = self.mapping * device.to_isometry();
        if self.pending_release {
            self.pending_release = false;
            if let Some(frozen) = self.last_target {
                self.offset = frozen * mapped.inverse();
            }
        }
        let target = self.offset * mapped;
        self.last_target = Some(target);
        Some(Pose::from_isometry(&target))
    }
}
