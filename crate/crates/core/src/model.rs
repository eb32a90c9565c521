//! Joint-space double integrator and its exact zero-order-hold discretization.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointVector, NQ};

pub const NX: usize = 2 * NQ;

pub type StateMatrix = SMatrix<f64, NX, NX>;
pub type InputMatrix = SMatrix<f64, NX, NQ>;
pub type StateVector = SVector<f64, NX>;

/// Joint angles and velocities, the state `x = [q; qd]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVector,
    pub qd: JointVector,
}

impl JointState {
    pub fn new(q: JointVector, qd: JointVector) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: JointVector) -> Self {
        Self::new(q, JointVector::zeros())
    }

    pub fn zeros() -> Self {
        Self::at_rest(JointVector::zeros())
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_fn(|i, _| if i < NQ { self.q[i] } else { self.qd[i - NQ] })
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::new(
            JointVector::from_fn(|i, _| x[i]),
            JointVector::from_fn(|i, _| x[NQ + i]),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }

    /// Componentwise `(1 - s) a + s b`.
    pub fn lerp(&self, other: &JointState, s: f64) -> JointState {
        JointState::new(self.q.lerp(&other.q, s), self.qd.lerp(&other.qd, s))
    }
}

/// Joint accelerations applied over one step.
pub type ControlInput = JointVector;

/// `x_{k+1} = A_d x_k + B_d u_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteModel {
    pub a_d: StateMatrix,
    pub b_d: InputMatrix,
    pub dt: f64,
}

/// Exact discretization of `d/dt [q; qd] = [qd; u]` under piecewise-constant `u`.
pub fn discretize(dt: f64) -> Result<DiscreteModel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {dt}")));
    }
    let mut a_d = StateMatrix::identity();
    let mut b_d = InputMatrix::zeros();
    for i in 0..NQ {
        a_d[(i, NQ + i)] = dt;
        b_d[(i, i)] = 0.5 * dt * dt;
        b_d[(NQ + i, i)] = dt;
    }
    Ok(DiscreteModel { a_d, b_d, dt })
}

impl DiscreteModel {
    pub fn step(&self, x: &JointState, u: &ControlInput) -> JointState {
        JointState::from_vector(&(self.a_d * x.to_vector() + self.b_d * u))
    }

    /// States `x_0 .. x_N` reached by applying `controls` from `x0`.
    pub fn rollout(&self, x0: &JointState, controls: &[ControlInput]) -> Vec<JointState> {
        let mut out = Vec::with_capacity(controls.len() + 1);
        out.push(*x0);
        let mut x = *x0;
        for u in controls {
            x = self.step(&x, u);
            out.push(x);
        }
        out
    }

    /// `A_d^k`.
    pub fn a_power(&self, k: usize) -> StateMatrix {
        let mut m = StateMatrix::identity();
        for _ in 0..k {
            m = self.a_d * m;
        }
        m
    }
}
