//! Objective, residual Jacobians and constraint evaluation for one horizon.

use nalgebra::{Matrix3, Vector3};

use crate::autodiff::{Dual, Jet2};
use crate::constraints::{box_violations, pair_margin};
use crate::cost::{stage_residuals, RESIDUALS};
use crate::error::{Error, Result};
use crate::kinematics::NQ;
use crate::model::{ControlInput, JointState, NX};
use crate::reference::ReferenceTrajectory;

use super::OcpProblem;

/// Number of local variables a stage residual depends on: `q_k`, `qd_k`, `u_{k-1}`.
pub(crate) const LOCAL: usize = NX + NQ;

/// Residual of one node and its Jacobian w.r.t. `(q_k, qd_k, u_{k-1})`.
pub(crate) struct StageLinearization {
    pub r: [f64; RESIDUALS],
    pub jac: [[f64; LOCAL]; RESIDUALS],
}

/// Margin of one collision pair at one node with its gradient in `q_k`.
pub(crate) struct MarginLinearization {
    pub pair: usize,
    pub margin: f64,
    pub grad: [f64; NQ],
}

/// Violations of every constraint family for one trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintReport {
    pub bound: f64,
    /// Largest negative collision margin, as a positive number.
    pub collision: f64,
    pub dynamics: f64,
}

impl ConstraintReport {
    pub fn max(&self) -> f64 {
        self.bound.max(self.collision).max(self.dynamics)
    }
}

impl OcpProblem {
    pub(crate) fn check_reference(&self, reference: &ReferenceTrajectory) -> Result<()> {
        if reference.horizon() != self.horizon {
            return Err(Error::Parameter(format!(
                "reference has {} nodes, the problem horizon is {}",
                reference.horizon(),
                self.horizon
            )));
        }
        if !reference.is_finite() {
            return Err(Error::Input("reference contains non-finite values".into()));
        }
        Ok(())
    }

    pub(crate) fn stage_value(
        &self,
        x: &JointState,
        u: &ControlInput,
        p_ref: &Vector3<f64>,
        r_ref: &Matrix3<f64>,
    ) -> f64 {
        let path: [Jet2<f64>; NQ] = std::array::from_fn(|i| Jet2::new(x.q[i], x.qd[i], 0.5 * u[i]));
        let ee = self.kin.chain(&path).ee;
        let qd: [f64; NQ] = x.qd.into();
        let uu: [f64; NQ] = (*u).into();
        let r = stage_residuals(&ee, &qd, &uu, p_ref, r_ref, &self.weights, &self.gravity);
        r.iter().map(|v| v * v).sum()
    }

    pub(crate) fn stage_linearization(
        &self,
        x: &JointState,
        u: &ControlInput,
        p_ref: &Vector3<f64>,
        r_ref: &Matrix3<f64>,
    ) -> StageLinearization {
        type D = Dual<LOCAL>;
        let path: [Jet2<D>; NQ] = std::array::from_fn(|i| {
            Jet2::new(
                D::variable(x.q[i], i),
                D::variable(x.qd[i], NQ + i),
                D::seeded(0.5 * u[i], NX + i, 0.5),
            )
        });
        let ee = self.kin.chain(&path).ee;
        let qd: [D; NQ] = std::array::from_fn(|i| D::variable(x.qd[i], NQ + i));
        let uu: [D; NQ] = std::array::from_fn(|i| D::variable(u[i], NX + i));
        let res = stage_residuals(&ee, &qd, &uu, p_ref, r_ref, &self.weights, &self.gravity);
        StageLinearization {
            r: res.map(|d| d.re),
            jac: res.map(|d| d.eps),
        }
    }

    /// `dt * sum_k l(x_k, u_{k-1})` for explicit state and control sequences.
    pub(crate) fn objective_of(
        &self,
        states: &[JointState],
        controls: &[ControlInput],
        reference: &ReferenceTrajectory,
    ) -> f64 {
        let mut sum = 0.0;
        for k in 1..=self.horizon {
            sum += self.stage_value(
                &states[k],
                &controls[k - 1],
                &reference.positions[k - 1],
                &reference.rotations[k - 1],
            );
        }
        self.model.dt * sum
    }

    pub(crate) fn margins(&self, q: &nalgebra::Vector6<f64>) -> Vec<f64> {
        if self.pairs.is_empty() {
            return Vec::new();
        }
        let qa: [f64; NQ] = (*q).into();
        let chain = self.kin.chain(&qa);
        let centers: Vec<Vector3<f64>> = self
            .spheres
            .iter()
            .map(|s| Vector3::from(chain.frames[s.link].transform_point(&s.center)))
            .collect();
        self.pairs
            .pairs()
            .iter()
            .map(|&(i, j)| {
                pair_margin(
                    &centers[i],
                    &centers[j],
                    self.spheres[i].radius,
                    self.spheres[j].radius,
                )
            })
            .collect()
    }

    /// Linearizes the pairs whose margin is below `activation`.
    pub(crate) fn margin_linearizations(
        &self,
        q: &nalgebra::Vector6<f64>,
        activation: f64,
    ) -> Vec<MarginLinearization> {
        let values = self.margins(q);
        if !values.iter().any(|&m| m < activation) {
            return Vec::new();
        }
        type D = Dual<NQ>;
        let qa: [D; NQ] = std::array::from_fn(|i| D::variable(q[i], i));
        let chain = self.kin.chain(&qa);
        let centers: Vec<[D; 3]> = self
            .spheres
            .iter()
            .map(|s| chain.frames[s.link].transform_point(&s.center))
            .collect();
        let mut out = Vec::new();
        for (p, &(i, j)) in self.pairs.pairs().iter().enumerate() {
            if values[p] >= activation {
                continue;
            }
            let mut m = D::constant(0.0);
            for (ci, cj) in centers[i].iter().zip(&centers[j]) {
                let d = *ci - *cj;
                m += d * d;
            }
            let sum = self.spheres[i].radius + self.spheres[j].radius;
            m = m + (-sum * sum);
            out.push(MarginLinearization {
                pair: p,
                margin: m.re,
                grad: m.eps,
            });
        }
        out
    }

    /// Constraint violations of a trajectory `x_0 .. x_N`, `u_0 .. u_{N-1}`.
    /// Bounds and collisions are checked at nodes `1..=N`.
    pub fn constraint_report(
        &self,
        states: &[JointState],
        controls: &[ControlInput],
    ) -> ConstraintReport {
        let mut rep = ConstraintReport::default();
        for k in 1..states.len() {
            let u = &controls[k - 1];
            rep.bound = rep
                .bound
                .max(box_violations(&states[k], u, &self.limits).max());
            for m in self.margins(&states[k].q) {
                rep.collision = rep.collision.max(-m);
            }
            let next = self.model.step(&states[k - 1], u);
            let diff = (next.to_vector() - states[k].to_vector()).amax();
            rep.dynamics = rep.dynamics.max(diff);
        }
        rep
    }

    fn split_full(
        &self,
        x0: &JointState,
        z: &[f64],
    ) -> Result<(Vec<JointState>, Vec<ControlInput>)> {
        if z.len() != self.num_decision_variables() {
            return Err(Error::Parameter(format!(
                "expected {} decision variables, got {}",
                self.num_decision_variables(),
                z.len()
            )));
        }
        if !x0.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(
                "decision vector contains non-finite values".into(),
            ));
        }
        Ok(self.unpack(x0, z))
    }

    /// Objective at a point of the full `[X, U]` layout. States are taken as
    /// given, not re-simulated.
    pub fn objective(
        &self,
        x0: &JointState,
        z: &[f64],
        reference: &ReferenceTrajectory,
    ) -> Result<f64> {
        self.check_reference(reference)?;
        let (states, controls) = self.split_full(x0, z)?;
        Ok(self.objective_of(&states, &controls, reference))
    }

    /// Gradient of [`objective`](Self::objective) w.r.t. every decision variable.
    pub fn objective_gradient(
        &self,
        x0: &JointState,
        z: &[f64],
        reference: &ReferenceTrajectory,
    ) -> Result<Vec<f64>> {
        self.check_reference(reference)?;
        let (states, controls) = self.split_full(x0, z)?;
        let n = self.horizon;
        let mut grad = vec![0.0; z.len()];
        let scale = 2.0 * self.model.dt;
        for k in 1..=n {
            let lin = self.stage_linearization(
                &states[k],
                &controls[k - 1],
                &reference.positions[k - 1],
                &reference.rotations[k - 1],
            );
            let xb = (k - 1) * NX;
            let ub = n * NX + (k - 1) * NQ;
            for (r, row) in lin.r.iter().zip(lin.jac.iter()) {
                for v in 0..NX {
                    grad[xb + v] += scale * r * row[v];
                }
                for v in 0..NQ {
                    grad[ub + v] += scale * r * row[NX + v];
                }
            }
        }
        Ok(grad)
    }
}
