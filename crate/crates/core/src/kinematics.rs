//! Serial-chain kinematics for a six-joint revolute arm.
//!
//! The chain uses the standard (distal) Denavit-Hartenberg convention:
//!
//! ```text
//! T_i = Rz(q_i + theta_offset_i) * Tz(d_i) * Tx(a_i) * Rx(alpha_i)
//! ```
//!
//! Frame `0` is the base, frame `i` is rigidly attached to link `i`, and the
//! end effector (the glass center) is frame `6` composed with a fixed tool
//! transform. All evaluation goes through one generic routine,
//! [`ArmKinematics::chain`], so `f64`, dual and jet scalars share the exact
//! same expression.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar};
use crate::error::{Error, Result};

/// Number of joints.
pub const NQ: usize = 6;

pub type JointVector = Vector6<f64>;

/// Standard gravity as used by the slosh terms, pointing up in the world frame.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 9.81)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length along the new x axis (m).
    pub a: f64,
    /// Offset along the previous z axis (m).
    pub d: f64,
    /// Twist about the new x axis (rad).
    pub alpha: f64,
    /// Constant added to the joint angle (rad).
    #[serde(default)]
    pub theta_offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DhTable {
    rows: [DhRow; NQ],
}

impl DhTable {
    pub fn new(rows: &[DhRow]) -> Result<Self> {
        if rows.len() != NQ {
            return Err(Error::Config(format!(
                "DH table needs exactly {NQ} rows, got {}",
                rows.len()
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if ![r.a, r.d, r.alpha, r.theta_offset]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Config(format!("DH row {i} has non-finite entries")));
            }
        }
        let mut out = [rows[0]; NQ];
        out.copy_from_slice(rows);
        Ok(Self { rows: out })
    }

    /// Universal Robots UR5e nominal parameters.
    pub fn ur5e() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let row = |a, d, alpha| DhRow {
            a,
            d,
            alpha,
            theta_offset: 0.0,
        };
        Self {
            rows: [
                row(0.0, 0.1625, FRAC_PI_2),
                row(-0.425, 0.0, 0.0),
                row(-0.3922, 0.0, 0.0),
                row(0.0, 0.1333, FRAC_PI_2),
                row(0.0, 0.0997, -FRAC_PI_2),
                row(0.0, 0.0996, 0.0),
            ],
        }
    }

    pub fn rows(&self) -> &[DhRow; NQ] {
        &self.rows
    }

    /// Sum of the per-row link extents `sqrt(a^2 + d^2)`.
    pub fn total_link_length(&self) -> f64 {
        self.rows.iter().map(|r| r.a.hypot(r.d)).sum()
    }
}

/// End-effector (or any frame) pose in the world.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Matrix3::identity())
    }

    pub fn from_quaternion(position: Vector3<f64>, q: &UnitQuaternion<f64>) -> Self {
        Self::new(position, *q.to_rotation_matrix().matrix())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(
            iso.translation.vector,
            *iso.rotation.to_rotation_matrix().matrix(),
        )
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        Isometry3::from_parts(
            Translation3::from(self.position),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Largest deviation of `R^T R` from identity, and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }
}

/// Collision sphere rigidly attached to a link frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub id: usize,
    /// Link frame index, `0` is the base and `NQ` the flange.
    pub link: usize,
    /// Center in link coordinates (m).
    pub center: Vector3<f64>,
    /// Radius (m).
    pub radius: f64,
}

impl SphereSpec {
    pub fn validate(&self) -> Result<()> {
        if self.link > NQ {
            return Err(Error::Config(format!(
                "sphere {} is attached to link {}, valid links are 0..={NQ}",
                self.id, self.link
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!(
                "sphere {} has non-positive radius {}",
                self.id, self.radius
            )));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "sphere {} center is not finite",
                self.id
            )));
        }
        Ok(())
    }
}

/// Acceleration of the end effector expressed with the literal `R (p'' + g)` map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalAcceleration {
    pub a_local: Vector3<f64>,
}

impl LocalAcceleration {
    /// Magnitude of the x/y components.
    pub fn lateral(&self) -> f64 {
        self.a_local.x.hypot(self.a_local.y)
    }
}

/// Rigid transform over a generic scalar. Columns of the rotation are stored
/// so that `R v = sum_j cols[j] * v[j]`.
#[derive(Clone, Copy, Debug)]
pub struct Frame<S> {
    pub cols: [[S; 3]; 3],
    pub pos: [S; 3],
}

impl<S: Scalar> Frame<S> {
    pub fn constant(iso: &Isometry3<f64>) -> Self {
        let r = iso.rotation.to_rotation_matrix();
        let m = r.matrix();
        let col = |j: usize| {
            [
                S::constant(m[(0, j)]),
                S::constant(m[(1, j)]),
                S::constant(m[(2, j)]),
            ]
        };
        let t = iso.translation.vector;
        Self {
            cols: [col(0), col(1), col(2)],
            pos: [S::constant(t.x), S::constant(t.y), S::constant(t.z)],
        }
    }

    /// `R v + p` for a constant vector.
    pub fn transform_point(&self, v: &Vector3<f64>) -> [S; 3] {
        let mut out = self.pos;
        for (k, o) in out.iter_mut().enumerate() {
            *o = *o + self.cols[0][k] * v.x + self.cols[1][k] * v.y + self.cols[2][k] * v.z;
        }
        out
    }

    /// `R m` for a constant matrix `m`.
    pub fn rotate_const(&self, m: &Matrix3<f64>) -> [[S; 3]; 3] {
        let mut cols = [[S::constant(0.0); 3]; 3];
        for (j, c) in cols.iter_mut().enumerate() {
            for (k, out) in c.iter_mut().enumerate() {
                *out = self.cols[0][k] * m[(0, j)]
                    + self.cols[1][k] * m[(1, j)]
                    + self.cols[2][k] * m[(2, j)];
            }
        }
        cols
    }

    /// Entry `(row, col)` of the rotation.
    #[inline]
    pub fn rot(&self, row: usize, col: usize) -> S {
        self.cols[col][row]
    }
}

impl Frame<f64> {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Pose::new(self.position(), self.rotation()).to_isometry()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.cols[c][r])
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.pos)
    }
}

/// All frames of one chain evaluation.
#[derive(Clone, Debug)]
pub struct Chain<S> {
    /// Base frame followed by one frame per link.
    pub frames: [Frame<S>; NQ + 1],
    /// Tool frame (flange composed with the tool transform).
    pub ee: Frame<S>,
}

/// Result of [`ArmKinematics::forward`].
#[derive(Clone, Debug)]
pub struct ForwardKinematics {
    pub frames: Vec<Isometry3<f64>>,
    pub ee: Pose,
}

#[derive(Clone, Debug)]
pub struct ArmKinematics {
    dh: DhTable,
    base: Isometry3<f64>,
    tool: Isometry3<f64>,
    tool_rotation: Matrix3<f64>,
}

impl ArmKinematics {
    pub fn new(dh: DhTable) -> Self {
        Self::with_transforms(dh, Isometry3::identity(), Isometry3::identity())
    }

    pub fn with_transforms(dh: DhTable, base: Isometry3<f64>, tool: Isometry3<f64>) -> Self {
        let tool_rotation = *tool.rotation.to_rotation_matrix().matrix();
        Self {
            dh,
            base,
            tool,
            tool_rotation,
        }
    }

    pub fn dh(&self) -> &DhTable {
        &self.dh
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn tool(&self) -> &Isometry3<f64> {
        &self.tool
    }

    /// Evaluates every frame of the chain for joint values of any scalar type.
    pub fn chain<S: Scalar>(&self, q: &[S; NQ]) -> Chain<S> {
        let mut frames = [Frame::<S>::constant(&self.base); NQ + 1];
        for (i, row) in self.dh.rows.iter().enumerate() {
            let prev = frames[i];
            let (s, c) = (q[i] + row.theta_offset).sin_cos();
            let (sa, ca) = row.alpha.sin_cos();
            let [x, y, z] = prev.cols;
            let mut u = [S::constant(0.0); 3];
            let mut v = [S::constant(0.0); 3];
            for k in 0..3 {
                u[k] = c * x[k] + s * y[k];
                v[k] = c * y[k] - s * x[k];
            }
            let mut next = prev;
            for k in 0..3 {
                next.cols[0][k] = u[k];
                next.cols[1][k] = v[k] * ca + z[k] * sa;
                next.cols[2][k] = z[k] * ca - v[k] * sa;
                next.pos[k] = prev.pos[k] + u[k] * row.a + z[k] * row.d;
            }
            frames[i + 1] = next;
        }
        let flange = frames[NQ];
        let ee = Frame {
            cols: flange.rotate_const(&self.tool_rotation),
            pos: flange.transform_point(&self.tool.translation.vector),
        };
        Chain { frames, ee }
    }

    pub fn forward(&self, q: &JointVector) -> ForwardKinematics {
        let qa: [f64; NQ] = (*q).into();
        let chain = self.chain(&qa);
        ForwardKinematics {
            frames: chain.frames.iter().map(Frame::to_isometry).collect(),
            ee: Pose::new(chain.ee.position(), chain.ee.rotation()),
        }
    }

    pub fn ee_pose(&self, q: &JointVector) -> Pose {
        let qa: [f64; NQ] = (*q).into();
        let ee = self.chain(&qa).ee;
        Pose::new(ee.position(), ee.rotation())
    }

    /// World-frame sphere centers, in input order.
    pub fn sphere_centers(
        &self,
        q: &JointVector,
        spheres: &[SphereSpec],
    ) -> Result<Vec<Vector3<f64>>> {
        if let Some(bad) = spheres.iter().find(|s| s.link > NQ) {
            return Err(Error::Config(format!(
                "sphere {} references link {} (valid 0..={NQ})",
                bad.id, bad.link
            )));
        }
        let qa: [f64; NQ] = (*q).into();
        let chain = self.chain(&qa);
        Ok(spheres
            .iter()
            .map(|s| Vector3::from(chain.frames[s.link].transform_point(&s.center)))
            .collect())
    }

    /// Second time derivative of the end-effector position, `J qdd + Jdot qd`.
    pub fn ee_acceleration(
        &self,
        q: &JointVector,
        qd: &JointVector,
        qdd: &JointVector,
    ) -> Vector3<f64> {
        let path: [Jet2<f64>; NQ] = std::array::from_fn(|i| Jet2::new(q[i], qd[i], 0.5 * qdd[i]));
        let ee = self.chain(&path).ee;
        Vector3::from(ee.pos.map(|p| p.second_derivative()))
    }

    /// `R(q) (p'' + g)`.
    pub fn local_acceleration(
        &self,
        q: &JointVector,
        qd: &JointVector,
        qdd: &JointVector,
        g: &Vector3<f64>,
    ) -> LocalAcceleration {
        let path: [Jet2<f64>; NQ] = std::array::from_fn(|i| Jet2::new(q[i], qd[i], 0.5 * qdd[i]));
        let ee = self.chain(&path).ee;
        let acc = Vector3::from(ee.pos.map(|p| p.second_derivative()));
        let rot = Matrix3::from_fn(|r, c| ee.cols[c][r].c[0]);
        LocalAcceleration {
            a_local: rot * (acc + g),
        }
    }
}
