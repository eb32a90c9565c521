//! Stage costs: position and orientation tracking, motion regularization and
//! the slosh (local lateral acceleration) penalty.
//!
//! The public functions evaluate each term directly from its formula. The
//! solver instead works with [`stage_residuals`], a stacked residual vector
//! whose squared norm is the same stage cost; the gradient tests compare the
//! two routes.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar};
use crate::error::{Error, Result};
use crate::kinematics::{ArmKinematics, Frame, JointVector, NQ};
use crate::model::{ControlInput, JointState};
use crate::reference::ReferenceTrajectory;

/// Objective weights of one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// Position tracking, per world axis.
    pub w1p: Vector3<f64>,
    /// Orientation tracking.
    pub w1o: f64,
    /// Joint velocity regularization.
    pub w2a: Vector6<f64>,
    /// Joint acceleration regularization.
    pub w2b: Vector6<f64>,
    /// Slosh penalty on the local acceleration error.
    pub w3: f64,
}

impl Weights {
    /// Tracking-focused set.
    pub fn p1() -> Self {
        Self {
            w1p: Vector3::repeat(500.0),
            w1o: 5.0,
            w2a: Vector6::repeat(0.1),
            w2b: Vector6::repeat(0.02),
            w3: 0.0,
        }
    }

    /// Anti-slosh set.
    pub fn p2() -> Self {
        Self {
            w3: 10.0,
            ..Self::p1()
        }
    }

    pub fn zeros() -> Self {
        Self {
            w1p: Vector3::zeros(),
            w1o: 0.0,
            w2a: Vector6::zeros(),
            w2b: Vector6::zeros(),
            w3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.w1o, self.w3];
        let all = self
            .w1p
            .iter()
            .chain(self.w2a.iter())
            .chain(self.w2b.iter())
            .chain(scalars.iter());
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Config(format!(
                    "weights must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

pub fn cost_position(p: &Vector3<f64>, p_ref: &Vector3<f64>, w1p: &Vector3<f64>) -> f64 {
    let e = p - p_ref;
    e.component_mul(&e).dot(w1p)
}

/// `w1o * ||I - R R_ref^T||_F^2`.
pub fn cost_orientation(r: &Matrix3<f64>, r_ref: &Matrix3<f64>, w1o: f64) -> f64 {
    w1o * (Matrix3::identity() - r * r_ref.transpose()).norm_squared()
}

pub fn cost_motion(
    qd: &JointVector,
    u: &ControlInput,
    w2a: &Vector6<f64>,
    w2b: &Vector6<f64>,
) -> f64 {
    qd.component_mul(qd).dot(w2a) + u.component_mul(u).dot(w2b)
}

pub fn cost_slosh(
    kin: &ArmKinematics,
    q: &JointVector,
    qd: &JointVector,
    u: &ControlInput,
    w3: f64,
    g: &Vector3<f64>,
) -> f64 {
    if w3 == 0.0 {
        return 0.0;
    }
    let a = kin.local_acceleration(q, qd, u, g).a_local;
    w3 * (a - g).norm_squared()
}

/// Riemann sum `dt * sum_{k=1..N} l(x_k, u_{k-1}, ref_k)`.
///
/// `states` holds `x_0 .. x_N` (`x_0` carries no cost), `controls` holds
/// `u_0 .. u_{N-1}`.
pub fn total_cost(
    kin: &ArmKinematics,
    states: &[JointState],
    controls: &[ControlInput],
    reference: &ReferenceTrajectory,
    w: &Weights,
    dt: f64,
    g: &Vector3<f64>,
) -> Result<f64> {
    let n = controls.len();
    if states.len() != n + 1 || reference.horizon() != n {
        return Err(Error::Parameter(format!(
            "expected {} states and {n} reference nodes for {n} controls, got {} and {}",
            n + 1,
            states.len(),
            reference.horizon()
        )));
    }
    let mut sum = 0.0;
    for k in 1..=n {
        let x = &states[k];
        let u = &controls[k - 1];
        let pose = kin.ee_pose(&x.q);
        sum += cost_position(&pose.position, &reference.positions[k - 1], &w.w1p)
            + cost_orientation(&pose.rotation, &reference.rotations[k - 1], w.w1o)
            + cost_motion(&x.qd, u, &w.w2a, &w.w2b)
            + cost_slosh(kin, &x.q, &x.qd, u, w.w3, g);
    }
    Ok(dt * sum)
}

/// Number of stacked residuals per node.
pub const RESIDUALS: usize = 27;

/// Stacked residual whose squared norm is the stage cost at one node.
///
/// `ee` must be the tool frame evaluated along the jet path
/// `q + qd t + (u/2) t^2`. Layout: position (3), orientation (9, row-major),
/// joint velocity (6), joint acceleration (6), local acceleration (3).
pub fn stage_residuals<S: Scalar>(
    ee: &Frame<Jet2<S>>,
    qd: &[S; NQ],
    u: &[S; NQ],
    p_ref: &Vector3<f64>,
    r_ref: &Matrix3<f64>,
    w: &Weights,
    g: &Vector3<f64>,
) -> [S; RESIDUALS] {
    let mut r = [S::constant(0.0); RESIDUALS];
    for i in 0..3 {
        r[i] = (ee.pos[i].c[0] + (-p_ref[i])) * w.w1p[i].sqrt();
    }
    let so = w.w1o.sqrt();
    for row in 0..3 {
        for col in 0..3 {
            let mut rel = S::constant(0.0);
            for k in 0..3 {
                rel += ee.rot(row, k).c[0] * r_ref[(col, k)];
            }
            let eye = if row == col { 1.0 } else { 0.0 };
            r[3 + 3 * row + col] = (-rel + eye) * so;
        }
    }
    for i in 0..NQ {
        r[12 + i] = qd[i] * w.w2a[i].sqrt();
        r[18 + i] = u[i] * w.w2b[i].sqrt();
    }
    if w.w3 > 0.0 {
        let s3 = w.w3.sqrt();
        let shifted: [S; 3] = std::array::from_fn(|i| ee.pos[i].second_derivative() + g[i]);
        for row in 0..3 {
            let mut a = S::constant(0.0);
            for (k, s) in shifted.iter().enumerate() {
                a += ee.rot(row, k).c[0] * *s;
            }
            r[24 + row] = (a + (-g[row])) * s3;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{gravity, DhTable};
    use nalgebra::Rotation3;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn position_cost_examples() {
        let w = Vector3::repeat(500.0);
        let p = Vector3::new(0.3, 0.2, 0.1);
        assert_eq!(cost_position(&p, &p, &w), 0.0);
        let e = Vector3::new(0.1, 0.0, 0.0);
        assert!((cost_position(&(p + e), &p, &w) - 5.0).abs() < 1e-12);
        let c1 = cost_position(&(p + e), &p, &w);
        let c2 = cost_position(&(p + 2.0 * e), &p, &w);
        assert!((c2 - 4.0 * c1).abs() < 1e-12);
    }

    #[test]
    fn orientation_cost_examples() {
        let r_ref = *Rotation3::from_euler_angles(0.3, -0.2, 1.0).matrix();
        assert!(cost_orientation(&r_ref, &r_ref, 5.0).abs() < 1e-12);
        let half = *Rotation3::from_axis_angle(&Vector3::z_axis(), PI).matrix();
        assert!((cost_orientation(&(half * r_ref), &r_ref, 5.0) - 40.0).abs() < 1e-12);
        let quarter = *Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).matrix();
        assert!((cost_orientation(&(quarter * r_ref), &r_ref, 5.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_cost_trace_identity() {
        let a = *Rotation3::from_euler_angles(0.7, 0.1, -0.4).matrix();
        let b = *Rotation3::from_euler_angles(-0.2, 0.5, 0.9).matrix();
        let direct = cost_orientation(&a, &b, 1.0);
        let trace = 6.0 - 2.0 * (a * b.transpose()).trace();
        assert!((direct - trace).abs() < 1e-12);
    }

    #[test]
    fn motion_cost_examples() {
        let w2a = Vector6::repeat(0.1);
        let w2b = Vector6::repeat(0.02);
        let z = JointVector::zeros();
        assert_eq!(cost_motion(&z, &z, &w2a, &w2b), 0.0);
        assert!((cost_motion(&JointVector::repeat(1.0), &z, &w2a, &w2b) - 0.6).abs() < 1e-12);
        assert!((cost_motion(&z, &JointVector::repeat(1.0), &w2a, &w2b) - 0.12).abs() < 1e-12);
    }

    #[test]
    fn slosh_cost_examples() {
        let k = ArmKinematics::new(DhTable::ur5e());
        let upright = JointVector::new(0.0, -2.0, 2.0, -FRAC_PI_2, FRAC_PI_2, FRAC_PI_2);
        let z = JointVector::zeros();
        assert!(cost_slosh(&k, &upright, &z, &z, 10.0, &gravity()) < 1e-20);
        let moving = JointVector::new(0.4, 0.2, -0.3, 0.1, 0.0, 0.5);
        assert_eq!(
            cost_slosh(&k, &upright, &moving, &moving, 0.0, &gravity()),
            0.0
        );
    }

    #[test]
    fn free_fall_slosh_cost() {
        // p'' = -g makes the local acceleration vanish for any rotation
        let a_local = Vector3::zeros();
        let cost = 10.0 * (a_local - gravity()).norm_squared();
        assert!((cost - 962.361).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_zero_cost() {
        let k = ArmKinematics::new(DhTable::ur5e());
        let states: Vec<_> = (0..4)
            .map(|i| {
                JointState::new(
                    JointVector::repeat(0.1 * i as f64),
                    JointVector::repeat(0.3),
                )
            })
            .collect();
        let controls = vec![JointVector::repeat(2.0); 3];
        let r = ReferenceTrajectory::constant(&crate::kinematics::Pose::identity(), 0.05, 3);
        let c = total_cost(
            &k,
            &states,
            &controls,
            &r,
            &Weights::zeros(),
            0.05,
            &gravity(),
        )
        .unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let k = ArmKinematics::new(DhTable::ur5e());
        let r = ReferenceTrajectory::constant(&crate::kinematics::Pose::identity(), 0.05, 3);
        let err = total_cost(
            &k,
            &[JointState::zeros(); 3],
            &[JointVector::zeros(); 3],
            &r,
            &Weights::p1(),
            0.05,
            &gravity(),
        );
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::p2().validate().is_ok());
        let mut w = Weights::p1();
        w.w1o = -1.0;
        assert!(w.validate().is_err());
    }
}
