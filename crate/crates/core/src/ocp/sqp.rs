//! Condensed Gauss-Newton SQP.
//!
//! The dynamics are linear, so the states are eliminated: `X` is a function
//! of `x_0` and `U`, and only the (active) joint accelerations remain as
//! unknowns. Each major iteration linearizes the stacked stage residuals,
//! forms the Gauss-Newton model with a Levenberg shift and solves a convex QP
//! with
//!
//! * control bounds as simple rows,
//! * joint angle and velocity bounds as rows over the condensed controls,
//! * linearized sphere-pair margins of the nearly active pairs. When a margin
//!   is violated and cannot be restored within one step, the row is relaxed
//!   to "do not get worse".
//!
//! Steps are globalized by backtracking on the l1 exact-penalty merit
//! `J + nu * sum max(0, -m)` over every node and pair. The best iterate seen
//! (feasible before infeasible, then lowest objective) is returned.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::constraints::box_violations;
use crate::cost::RESIDUALS;
use crate::error::{Error, Result};
use crate::kinematics::NQ;
use crate::model::{ControlInput, JointState};
use crate::reference::ReferenceTrajectory;

use super::qp::{Qp, QpSettings, QpStatus, SparseRow};
use super::{InitialGuess, OcpProblem, SolveResult, SolveStatus};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// Active joints and the index map into the condensed variable vector.
struct Layout {
    joints: Vec<usize>,
    horizon: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        self.horizon * self.joints.len()
    }

    fn var(&self, step: usize, slot: usize) -> usize {
        step * self.joints.len() + slot
    }

    fn controls(&self, v: &DVector<f64>) -> Vec<ControlInput> {
        (0..self.horizon)
            .map(|j| {
                let mut u = ControlInput::zeros();
                for (a, &i) in self.joints.iter().enumerate() {
                    u[i] = v[self.var(j, a)];
                }
                u
            })
            .collect()
    }

    fn vector(&self, controls: &[ControlInput]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (j, u) in controls.iter().enumerate().take(self.horizon) {
            for (a, &i) in self.joints.iter().enumerate() {
                v[self.var(j, a)] = u[i];
            }
        }
        v
    }
}

/// One evaluated iterate.
#[derive(Clone)]
struct Point {
    v: DVector<f64>,
    controls: Vec<ControlInput>,
    states: Vec<JointState>,
    objective: f64,
    /// Sum of scaled negative margins over all nodes and pairs.
    violation_sum: f64,
    /// Largest raw negative margin.
    violation_max: f64,
}

/// Stationarity information obtained from the subproblem at a point.
#[derive(Clone, Default)]
struct Dual {
    kkt: f64,
    collision: Vec<(usize, usize, f64)>,
}

struct Candidate {
    point: Point,
    dual: Dual,
}

impl Candidate {
    fn better_than(&self, other: &Candidate, tol: f64) -> bool {
        let fa = self.point.violation_max <= tol;
        let fb = other.point.violation_max <= tol;
        match (fa, fb) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.point.objective < other.point.objective,
            (false, false) => self.point.violation_max < other.point.violation_max,
        }
    }
}

struct Subproblem {
    qp: Qp,
    n_box: usize,
    /// `(node, pair)` of each collision row, in row order after the bounds.
    collisions: Vec<(usize, usize)>,
    /// Some linearized margin is currently violated and the rows ask for
    /// its full restoration.
    restoring: bool,
}

struct Solver<'a> {
    prob: &'a OcpProblem,
    x0: JointState,
    reference: &'a ReferenceTrajectory,
    layout: Layout,
    /// Collision margins are multiplied by this before entering the QP and
    /// the merit so that their multipliers are of the order of the
    /// objective gradient.
    margin_scale: f64,
}

impl Solver<'_> {
    fn evaluate(&self, v: DVector<f64>) -> Point {
        let controls = self.layout.controls(&v);
        let states = self.prob.model.rollout(&self.x0, &controls);
        let objective = self.prob.objective_of(&states, &controls, self.reference);
        let mut violation_sum = 0.0;
        let mut violation_max: f64 = 0.0;
        for x in &states[1..] {
            for m in self.prob.margins(&x.q) {
                if m < 0.0 {
                    violation_sum -= m * self.margin_scale;
                    violation_max = violation_max.max(-m);
                }
            }
        }
        Point {
            v,
            controls,
            states,
            objective,
            violation_sum,
            violation_max,
        }
    }

    fn merit(&self, p: &Point, nu: f64) -> f64 {
        p.objective + nu * p.violation_sum
    }

    /// `d q_{k,i} / d u_{j,i}` and `d qd_{k,i} / d u_{j,i}` for `m = k - 1 - j`.
    fn sens(&self, m: usize, i: usize) -> (f64, f64) {
        let s = &self.prob.input_sensitivity[m];
        (s[(i, i)], s[(NQ + i, i)])
    }

    /// Bound rows around `p`. Right-hand sides are floored at zero so that
    /// `d = 0` is always feasible; a bound that is already violated can then
    /// only be approached, never worsened.
    fn box_rows(&self, p: &Point, floor: bool, rows: &mut Vec<SparseRow>, h: &mut Vec<f64>) {
        let lim = &self.prob.limits;
        let fl = |v: f64| if floor { v.max(0.0) } else { v };
        for j in 0..self.layout.horizon {
            for (a, &i) in self.layout.joints.iter().enumerate() {
                let var = self.layout.var(j, a);
                let u = p.controls[j][i];
                rows.push(SparseRow::unit(var, 1.0));
                h.push(fl(lim.u_max[i] - u));
                rows.push(SparseRow::unit(var, -1.0));
                h.push(fl(u - lim.u_min[i]));
            }
        }
        for k in 1..=self.layout.horizon {
            let x = &p.states[k];
            for (a, &i) in self.layout.joints.iter().enumerate() {
                let mut rq = SparseRow::new();
                let mut rqd = SparseRow::new();
                for j in 0..k {
                    let (sq, sqd) = self.sens(k - 1 - j, i);
                    rq.push(self.layout.var(j, a), sq);
                    rqd.push(self.layout.var(j, a), sqd);
                }
                let neg = |r: &SparseRow| SparseRow {
                    idx: r.idx.clone(),
                    val: r.val.iter().map(|v| -v).collect(),
                };
                rows.push(neg(&rq));
                h.push(fl(x.q[i] - lim.q_min[i]));
                rows.push(rq);
                h.push(fl(lim.q_max[i] - x.q[i]));
                rows.push(neg(&rqd));
                h.push(fl(x.qd[i] - lim.qd_min[i]));
                rows.push(rqd);
                h.push(fl(lim.qd_max[i] - x.qd[i]));
            }
        }
    }

    /// Gauss-Newton model `(g, H)` of the objective at `p`.
    fn model(&self, p: &Point) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.layout.horizon;
        let nv = self.layout.dim();
        let mut jac = DMatrix::zeros(n * RESIDUALS, nv);
        let mut res = DVector::zeros(n * RESIDUALS);
        for k in 1..=n {
            let lin = self.prob.stage_linearization(
                &p.states[k],
                &p.controls[k - 1],
                &self.reference.positions[k - 1],
                &self.reference.rotations[k - 1],
            );
            let base = (k - 1) * RESIDUALS;
            for (r, (val, row)) in lin.r.iter().zip(lin.jac.iter()).enumerate() {
                res[base + r] = *val;
                for j in 0..k {
                    for (a, &i) in self.layout.joints.iter().enumerate() {
                        let (sq, sqd) = self.sens(k - 1 - j, i);
                        let mut d = row[i] * sq + row[NQ + i] * sqd;
                        if j == k - 1 {
                            d += row[2 * NQ + i];
                        }
                        jac[(base + r, self.layout.var(j, a))] = d;
                    }
                }
            }
        }
        let scale = 2.0 * self.prob.model.dt;
        let g = jac.tr_mul(&res) * scale;
        let h = jac.tr_mul(&jac) * scale;
        (g, h)
    }

    fn solve(&self, initial: DVector<f64>, started_clamped: bool) -> SolveResult {
        let started = Instant::now();
        let opts = &self.prob.options;
        let qp_settings = QpSettings::default();

        let mut recovered = started_clamped;
        let mut current = self.repair(self.evaluate(initial), &qp_settings, &mut recovered);
        let mut best: Option<Candidate> = None;
        let mut nu: f64 = 100.0;
        let mut mu = 0.0;
        let mut iterations = 0;
        let mut converged = false;
        let mut deadline_hit = false;

        for it in 0..=opts.max_iterations {
            let (g, hess) = self.model(&current);
            if it == 0 {
                mu = 1e-10 * (1.0 + hess.diagonal().amax());
            }
            let mut sub = self.subproblem(&current, &g, &hess, mu, false);
            let mut sol = sub.qp.solve(&qp_settings);
            if sol.status != QpStatus::Solved && sub.restoring {
                // linearized margins cannot all be restored within the
                // bounds: only forbid making them worse
                sub = self.subproblem(&current, &g, &hess, mu, true);
                sol = sub.qp.solve(&qp_settings);
            }
            let n_box = sub.n_box;
            let n_col = sub.collisions.len();

            // stationarity of the Lagrangian at the current point
            let mut lag = g.clone();
            for (r, zr) in sub.qp.rows.iter().zip(sol.z.iter()) {
                for (&i, v) in r.idx.iter().zip(&r.val) {
                    lag[i] += v * zr;
                }
            }
            let dual = Dual {
                kkt: lag.amax(),
                collision: sub
                    .collisions
                    .iter()
                    .enumerate()
                    .map(|(s, &(k, p))| (k, p, sol.z[n_box + s] * self.margin_scale))
                    .collect(),
            };
            let cand = Candidate {
                point: current.clone(),
                dual: dual.clone(),
            };
            if best
                .as_ref()
                .is_none_or(|b| cand.better_than(b, opts.constraint_tol))
            {
                best = Some(cand);
            }

            let bound_ok = self.bound_violation(&current) <= 1e-8;
            if dual.kkt <= opts.stationarity_tol
                && current.violation_max <= opts.constraint_tol
                && bound_ok
            {
                converged = true;
                break;
            }
            if it == opts.max_iterations {
                break;
            }
            if let Some(budget) = opts.time_budget {
                if started.elapsed() >= budget {
                    deadline_hit = true;
                    break;
                }
            }
            iterations += 1;
            if !sol.x.iter().all(|v| v.is_finite()) {
                mu = (mu * 100.0).max(1e-8);
                continue;
            }

            // penalty update
            let z_max = (0..n_col).map(|s| sol.z[n_box + s]).fold(0.0, f64::max);
            nu = nu.max(2.0 * z_max);

            let d = sol.x.clone();
            let phi0 = self.merit(&current, nu);
            let restored = if sub.restoring {
                current.violation_sum
            } else {
                0.0
            };
            let slope = (g.dot(&d) - nu * restored).min(0.0);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let trial = self.evaluate(&current.v + &d * alpha);
                let phi = self.merit(&trial, nu);
                if phi.is_finite() && phi <= phi0 + ARMIJO * alpha * slope && phi <= phi0 {
                    accepted = Some(trial);
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some(p) => {
                    if alpha == 1.0 {
                        mu = (mu * 0.1).max(1e-12);
                    } else if alpha < 0.1 {
                        mu *= 10.0;
                    }
                    current = p;
                }
                None => mu = (mu * 100.0).max(1e-8),
            }
        }

        let best = best.expect("at least one iterate is evaluated");
        self.finish(
            best,
            iterations,
            converged,
            recovered,
            deadline_hit,
            started,
        )
    }

    /// Convex subproblem around `p`: Gauss-Newton model with Levenberg
    /// shift `mu`, bound rows and linearized margins of the nearly active
    /// pairs. With `floor` set, violated margins may not decrease further
    /// instead of being required to reach zero.
    fn subproblem(
        &self,
        p: &Point,
        g: &DVector<f64>,
        hess: &DMatrix<f64>,
        mu: f64,
        floor: bool,
    ) -> Subproblem {
        let nv = self.layout.dim();
        let mut rows = Vec::new();
        let mut h = Vec::new();
        self.box_rows(p, true, &mut rows, &mut h);
        let n_box = rows.len();
        let mut collisions = Vec::new();
        let mut restoring = false;
        for k in 1..=self.layout.horizon {
            let q = p.states[k].q;
            for lin in self
                .prob
                .margin_linearizations(&q, self.prob.options.collision_activation)
            {
                let mut row = SparseRow::new();
                for j in 0..k {
                    for (a, &i) in self.layout.joints.iter().enumerate() {
                        let (sq, _) = self.sens(k - 1 - j, i);
                        row.push(self.layout.var(j, a), -lin.grad[i] * sq * self.margin_scale);
                    }
                }
                let rhs = lin.margin * self.margin_scale;
                restoring |= rhs < 0.0;
                rows.push(row);
                h.push(if floor { rhs.max(0.0) } else { rhs });
                collisions.push((k, lin.pair));
            }
        }
        let mut pm = hess.clone();
        for i in 0..nv {
            pm[(i, i)] += mu;
        }
        Subproblem {
            qp: Qp {
                p: pm,
                c: g.clone(),
                rows,
                h,
            },
            n_box,
            collisions,
            restoring: restoring && !floor,
        }
    }

    fn bound_violation(&self, p: &Point) -> f64 {
        (1..p.states.len())
            .map(|k| box_violations(&p.states[k], &p.controls[k - 1], &self.prob.limits).max())
            .fold(0.0, f64::max)
    }

    /// Projects the initial controls onto the bound constraints when the
    /// rolled-out guess violates them.
    fn repair(&self, p: Point, settings: &QpSettings, recovered: &mut bool) -> Point {
        if self.bound_violation(&p) <= 0.0 {
            return p;
        }
        let nv = self.layout.dim();
        let mut rows = Vec::new();
        let mut h = Vec::new();
        self.box_rows(&p, false, &mut rows, &mut h);
        let qp = Qp {
            p: DMatrix::identity(nv, nv),
            c: DVector::zeros(nv),
            rows,
            h,
        };
        let sol = qp.solve(settings);
        if sol.status == QpStatus::Solved {
            let fixed = self.evaluate(&p.v + sol.x);
            if self.bound_violation(&fixed) < self.bound_violation(&p) {
                return fixed;
            }
        }
        *recovered = true;
        p
    }

    fn finish(
        &self,
        best: Candidate,
        iterations: usize,
        converged: bool,
        recovered: bool,
        deadline_hit: bool,
        started: Instant,
    ) -> SolveResult {
        let lim = &self.prob.limits;
        let controls: Vec<ControlInput> = best
            .point
            .controls
            .iter()
            .map(|u| lim.clamp_control(u))
            .collect();
        let states = self.prob.model.rollout(&self.x0, &controls);
        let objective = self.prob.objective_of(&states, &controls, self.reference);
        let report = self.prob.constraint_report(&states, &controls);
        let status = if recovered {
            SolveStatus::InfeasibleStartRecovered
        } else if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIter
        };
        SolveResult {
            states,
            controls,
            objective,
            iterations,
            wall_time: started.elapsed().as_secs_f64(),
            kkt_residual: best.dual.kkt,
            max_constraint_violation: report.max(),
            max_bound_violation: report.bound,
            max_collision_violation: report.collision,
            dynamics_residual: report.dynamics,
            status,
            deadline_hit,
            collision_multipliers: best.dual.collision,
        }
    }
}

impl OcpProblem {
    /// Solves the horizon problem from the measured state `x0`.
    ///
    /// A measured state outside the bounds is clamped first and the result is
    /// flagged [`SolveStatus::InfeasibleStartRecovered`]. Without a guess the
    /// solver starts from zero acceleration.
    pub fn solve(
        &self,
        x0: &JointState,
        reference: &ReferenceTrajectory,
        guess: Option<&InitialGuess>,
    ) -> Result<SolveResult> {
        if !x0.is_finite() {
            return Err(Error::Input(
                "initial state contains non-finite values".into(),
            ));
        }
        self.check_reference(reference)?;
        if let Some(g) = guess {
            if g.controls.len() != self.horizon {
                return Err(Error::Parameter(format!(
                    "initial guess has {} controls, the problem horizon is {}",
                    g.controls.len(),
                    self.horizon
                )));
            }
            if g.controls.iter().any(|u| u.iter().any(|v| !v.is_finite())) {
                return Err(Error::Input(
                    "initial guess contains non-finite values".into(),
                ));
            }
        }

        let clamped = self.limits.clamp_state(x0);
        let started_clamped = clamped != *x0;
        let layout = Layout {
            joints: (0..NQ).filter(|&i| self.active[i]).collect(),
            horizon: self.horizon,
        };
        let initial = match guess {
            Some(g) => {
                let u: Vec<ControlInput> = g
                    .controls
                    .iter()
                    .map(|u| self.limits.clamp_control(u))
                    .collect();
                layout.vector(&u)
            }
            None => DVector::zeros(layout.dim()),
        };
        let solver = Solver {
            prob: self,
            x0: clamped,
            reference,
            layout,
            margin_scale: 1.0 / (self.model.dt * self.model.dt),
        };
        Ok(solver.solve(initial, started_clamped))
    }
}
