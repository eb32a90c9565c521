//! Joint box limits and sphere-pair self-collision constraints.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ArmKinematics, JointVector, SphereSpec};
use crate::model::{ControlInput, JointState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub q_min: Vector6<f64>,
    pub q_max: Vector6<f64>,
    pub qd_min: Vector6<f64>,
    pub qd_max: Vector6<f64>,
    pub u_min: Vector6<f64>,
    pub u_max: Vector6<f64>,
}

impl Limits {
    /// Symmetric limits `|q| <= q_abs` and so on.
    pub fn symmetric(q_abs: f64, qd_abs: f64, u_abs: f64) -> Self {
        Self {
            q_min: Vector6::repeat(-q_abs),
            q_max: Vector6::repeat(q_abs),
            qd_min: Vector6::repeat(-qd_abs),
            qd_max: Vector6::repeat(qd_abs),
            u_min: Vector6::repeat(-u_abs),
            u_max: Vector6::repeat(u_abs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let groups = [
            ("q", &self.q_min, &self.q_max),
            ("qd", &self.qd_min, &self.qd_max),
            ("u", &self.u_min, &self.u_max),
        ];
        for (name, lo, hi) in groups {
            for i in 0..6 {
                if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                    return Err(Error::Config(format!(
                        "{name} limits for joint {i} must satisfy min < max (got {} .. {})",
                        lo[i], hi[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn clamp_state(&self, x: &JointState) -> JointState {
        JointState::new(
            x.q.zip_zip_map(&self.q_min, &self.q_max, |v, lo, hi| v.clamp(lo, hi)),
            x.qd.zip_zip_map(&self.qd_min, &self.qd_max, |v, lo, hi| v.clamp(lo, hi)),
        )
    }

    pub fn clamp_control(&self, u: &ControlInput) -> ControlInput {
        u.zip_zip_map(&self.u_min, &self.u_max, |v, lo, hi| v.clamp(lo, hi))
    }
}

/// Exceedance of each bound, ordered q-low, q-high, qd-low, qd-high, u-low,
/// u-high (six joints each). Zero means the bound holds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxViolation {
    pub entries: [f64; 36],
}

impl BoxViolation {
    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }
}

pub fn box_violations(x: &JointState, u: &ControlInput, lim: &Limits) -> BoxViolation {
    let mut entries = [0.0; 36];
    let groups = [
        (&x.q, &lim.q_min, &lim.q_max),
        (&x.qd, &lim.qd_min, &lim.qd_max),
        (u, &lim.u_min, &lim.u_max),
    ];
    for (g, (v, lo, hi)) in groups.into_iter().enumerate() {
        for i in 0..6 {
            entries[12 * g + i] = (lo[i] - v[i]).max(0.0);
            entries[12 * g + 6 + i] = (v[i] - hi[i]).max(0.0);
        }
    }
    BoxViolation { entries }
}

/// Index pairs into a sphere list that must stay apart.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CollisionPairSet {
    pairs: Vec<(usize, usize)>,
}

impl CollisionPairSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Every pair `(i, j)`, `i < j`, whose links differ by at least two.
pub fn build_pairs(spheres: &[SphereSpec]) -> CollisionPairSet {
    let mut pairs = Vec::new();
    for i in 0..spheres.len() {
        for j in i + 1..spheres.len() {
            if spheres[i].link.abs_diff(spheres[j].link) >= 2 {
                pairs.push((i, j));
            }
        }
    }
    CollisionPairSet { pairs }
}

/// `||c_i - c_j||^2 - (r_i + r_j)^2` for two world-frame centers.
#[inline]
pub fn pair_margin(ci: &Vector3<f64>, cj: &Vector3<f64>, ri: f64, rj: f64) -> f64 {
    let sum = ri + rj;
    (ci - cj).norm_squared() - sum * sum
}

/// Squared-distance margins for every pair, in pair order. Non-negative
/// means separated.
pub fn collision_margins(
    kin: &ArmKinematics,
    q: &JointVector,
    spheres: &[SphereSpec],
    pairs: &CollisionPairSet,
) -> Result<Vec<f64>> {
    let centers = kin.sphere_centers(q, spheres)?;
    Ok(pairs
        .pairs
        .iter()
        .map(|&(i, j)| {
            pair_margin(
                &centers[i],
                &centers[j],
                spheres[i].radius,
                spheres[j].radius,
            )
        })
        .collect())
}
