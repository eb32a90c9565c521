//! Multiple-shooting optimal control problem over the prediction horizon.
//!
//! Decision variables are laid out as `[x_1 .. x_N, u_0 .. u_{N-1}]` with
//! `x_k = [q_k; qd_k]`; the measured state `x_0` is a parameter. The solver
//! eliminates the states through the linear dynamics, so every returned
//! trajectory satisfies `x_{k+1} = A_d x_k + B_d u_k` up to rounding.

mod eval;
pub mod qp;
mod sqp;
mod warm;

use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_pairs, CollisionPairSet, Limits};
use crate::cost::Weights;
use crate::error::{Error, Result};
use crate::kinematics::{gravity, ArmKinematics, SphereSpec, NQ};
use crate::model::{discretize, ControlInput, DiscreteModel, InputMatrix, JointState, NX};

pub use eval::ConstraintReport;
pub use warm::{shift_warm_start, ShiftedStart, WarmStart};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Major (SQP) iterations per solve.
    pub max_iterations: usize,
    /// Infinity norm of the Lagrangian gradient at convergence.
    pub stationarity_tol: f64,
    /// Allowed collision-margin violation (m^2) at convergence.
    pub constraint_tol: f64,
    /// Collision pairs with a margin below this value (m^2) are linearized
    /// into the subproblem; the rest are only monitored.
    pub collision_activation: f64,
    /// Wall-clock budget after which the best iterate is returned. `None`
    /// keeps the solver deterministic.
    #[serde(with = "opt_secs")]
    pub time_budget: Option<Duration>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            stationarity_tol: 1e-4,
            constraint_tol: 1e-6,
            collision_activation: 0.02,
            time_budget: None,
        }
    }
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|d| d.as_secs_f64()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let secs: Option<f64> = Option::deserialize(d)?;
        Ok(secs.filter(|s| *s > 0.0).map(Duration::from_secs_f64))
    }
}

/// Everything needed to set up the problem.
#[derive(Clone, Debug)]
pub struct OcpConfig {
    pub kinematics: ArmKinematics,
    pub weights: Weights,
    pub limits: Limits,
    pub spheres: Vec<SphereSpec>,
    pub horizon: usize,
    pub dt: f64,
    pub gravity: Vector3<f64>,
    pub options: SolverOptions,
}

impl OcpConfig {
    pub fn new(
        kinematics: ArmKinematics,
        weights: Weights,
        limits: Limits,
        horizon: usize,
        dt: f64,
    ) -> Self {
        Self {
            kinematics,
            weights,
            limits,
            spheres: Vec::new(),
            horizon,
            dt,
            gravity: gravity(),
            options: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub(crate) kin: ArmKinematics,
    pub(crate) model: DiscreteModel,
    pub(crate) weights: Weights,
    pub(crate) limits: Limits,
    pub(crate) spheres: Vec<SphereSpec>,
    pub(crate) pairs: CollisionPairSet,
    pub(crate) horizon: usize,
    pub(crate) gravity: Vector3<f64>,
    pub(crate) options: SolverOptions,
    pub(crate) active: [bool; NQ],
    /// `A_d^m B_d` for `m = 0 .. N-1`.
    pub(crate) input_sensitivity: Vec<InputMatrix>,
}

impl OcpProblem {
    pub fn build(cfg: OcpConfig) -> Result<Self> {
        if cfg.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        let model = discretize(cfg.dt).map_err(|e| Error::Config(e.to_string()))?;
        cfg.weights.validate()?;
        cfg.limits.validate()?;
        for s in &cfg.spheres {
            s.validate()?;
        }
        if !cfg.gravity.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        let o = &cfg.options;
        if !(o.stationarity_tol > 0.0 && o.constraint_tol > 0.0 && o.collision_activation >= 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        let pairs = build_pairs(&cfg.spheres);
        let mut input_sensitivity = Vec::with_capacity(cfg.horizon);
        let mut a_pow = crate::model::StateMatrix::identity();
        for _ in 0..cfg.horizon {
            input_sensitivity.push(a_pow * model.b_d);
            a_pow = model.a_d * a_pow;
        }
        Ok(Self {
            kin: cfg.kinematics,
            model,
            weights: cfg.weights,
            limits: cfg.limits,
            spheres: cfg.spheres,
            pairs,
            horizon: cfg.horizon,
            gravity: cfg.gravity,
            options: cfg.options,
            active: [true; NQ],
            input_sensitivity,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.model.dt
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.model
    }

    pub fn kinematics(&self) -> &ArmKinematics {
        &self.kin
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn spheres(&self) -> &[SphereSpec] {
        &self.spheres
    }

    pub fn pairs(&self) -> &CollisionPairSet {
        &self.pairs
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn options_mut(&mut self) -> &mut SolverOptions {
        &mut self.options
    }

    /// Replaces the objective weights (used for parameter hot-swaps).
    pub fn set_weights(&mut self, weights: Weights) -> Result<()> {
        weights.validate()?;
        self.weights = weights;
        Ok(())
    }

    /// Restricts optimization to a subset of joints; the others keep zero
    /// acceleration.
    pub fn with_active_joints(mut self, active: [bool; NQ]) -> Result<Self> {
        if !active.iter().any(|&a| a) {
            return Err(Error::Config("at least one joint must be active".into()));
        }
        self.active = active;
        Ok(self)
    }

    pub fn active_joints(&self) -> &[bool; NQ] {
        &self.active
    }

    /// Length of the full `[X, U]` decision vector.
    pub fn num_decision_variables(&self) -> usize {
        self.horizon * (NX + NQ)
    }

    /// One block `x_{k+1} = A_d x_k + B_d u_k` per step.
    pub fn num_dynamics_blocks(&self) -> usize {
        self.horizon
    }

    pub fn num_collision_constraints(&self) -> usize {
        self.pairs.len() * self.horizon
    }

    /// Box rows on `q`, `qd` (nodes `1..=N`) and `u` (nodes `0..N`), two per entry.
    pub fn num_box_constraints(&self) -> usize {
        2 * self.horizon * (NX + NQ)
    }

    /// Packs trajectories into the `[X, U]` layout.
    pub fn pack(&self, states: &[JointState], controls: &[ControlInput]) -> Vec<f64> {
        let n = self.horizon;
        let mut z = Vec::with_capacity(self.num_decision_variables());
        for x in &states[1..=n] {
            z.extend(x.q.iter());
            z.extend(x.qd.iter());
        }
        for u in &controls[..n] {
            z.extend(u.iter());
        }
        z
    }

    /// Inverse of [`pack`](Self::pack); `x0` is prepended to the states.
    pub fn unpack(&self, x0: &JointState, z: &[f64]) -> (Vec<JointState>, Vec<ControlInput>) {
        let n = self.horizon;
        let mut states = vec![*x0];
        for k in 0..n {
            let b = k * NX;
            states.push(JointState::new(
                ControlInput::from_column_slice(&z[b..b + NQ]),
                ControlInput::from_column_slice(&z[b + NQ..b + NX]),
            ));
        }
        let off = n * NX;
        let controls = (0..n)
            .map(|k| ControlInput::from_column_slice(&z[off + k * NQ..off + (k + 1) * NQ]))
            .collect();
        (states, controls)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleStartRecovered,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleStartRecovered => "infeasible_start_recovered",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// `x_0 .. x_N`.
    pub states: Vec<JointState>,
    /// `u_0 .. u_{N-1}`.
    pub controls: Vec<ControlInput>,
    pub objective: f64,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub kkt_residual: f64,
    pub max_constraint_violation: f64,
    pub max_bound_violation: f64,
    /// Most negative collision margin, clipped at zero (m^2).
    pub max_collision_violation: f64,
    pub dynamics_residual: f64,
    pub status: SolveStatus,
    /// Whether the wall-clock budget cut the solve short.
    pub deadline_hit: bool,
    /// Multipliers of the collision constraints that were linearized at the
    /// final iterate, as `(node, pair index, multiplier)`.
    pub collision_multipliers: Vec<(usize, usize, f64)>,
}

impl SolveResult {
    /// Whether the plan may be sent to the plant: finite, feasible to the
    /// stated tolerances, and produced by at least one solver iteration.
    pub fn is_usable(&self) -> bool {
        let finite = self.states.iter().all(JointState::is_finite)
            && self
                .controls
                .iter()
                .all(|u| u.iter().all(|v| v.is_finite()))
            && self.objective.is_finite();
        finite
            && self.max_bound_violation <= 1e-8
            && self.max_collision_violation <= 1e-6
            && self.dynamics_residual <= 1e-10
            && (self.iterations > 0 || self.status == SolveStatus::Converged)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Initial control sequence handed to the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub controls: Vec<ControlInput>,
}
