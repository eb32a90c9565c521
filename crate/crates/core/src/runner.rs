//! The receding-horizon loop: target ingestion, prediction, warm-started
//! solve, plant update and per-cycle logging.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{ParamSet, RobotConfig};
use crate::error::{Error, Result};
use crate::kinematics::{ArmKinematics, Pose};
use crate::model::{ControlInput, JointState};
use crate::ocp::{shift_warm_start, OcpProblem, SolveResult, SolveStatus, WarmStart};
use crate::reference::{estimate_twist, predict, ReferenceTrajectory, SampleBuffer, TargetSample};

/// Control loop rate.
pub const LOOP_RATE_HZ: f64 = 20.0;
/// Control loop period (s).
pub const LOOP_PERIOD: f64 = 1.0 / LOOP_RATE_HZ;

const SAMPLE_CAPACITY: usize = 64;

/// State of the simulated arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub state: JointState,
    /// Simulation time (s).
    pub time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionOptions {
    /// Time constant (s) of a first-order lag between the commanded and the
    /// executed joint state. `None` means ideal tracking.
    pub plant_lag: Option<f64>,
}

/// Joint state of a plan at `elapsed` seconds after its start, interpolating
/// linearly between nodes and holding the last node afterwards.
pub fn plan_state_at(plan: &SolveResult, elapsed: f64, dt: f64) -> JointState {
    let last = plan.states.len() - 1;
    let s = (elapsed / dt).max(0.0);
    let k = (s + 1e-9).floor() as usize;
    if k >= last {
        return plan.states[last];
    }
    let frac = s - k as f64;
    if frac < 1e-9 {
        plan.states[k]
    } else {
        plan.states[k].lerp(&plan.states[k + 1], frac)
    }
}

/// Segment `(x_{j+1}, u_j)` of the plan that is executing `elapsed` seconds
/// after its start; past the horizon the plan rests at its last node.
fn plan_segment_at(plan: &SolveResult, elapsed: f64, dt: f64) -> (JointState, ControlInput) {
    let j = ((elapsed / dt).max(0.0) + 1e-9).floor() as usize;
    if j < plan.controls.len() {
        (plan.states[j + 1], plan.controls[j])
    } else {
        let last = plan.states[plan.states.len() - 1];
        (JointState::at_rest(last.q), ControlInput::zeros())
    }
}

/// Advances the plant by `dt_sim` along the active plan (started at
/// `plan_start`): exact interpolation under ideal tracking, or a first-order
/// approach toward it when a lag is configured.
pub fn plant_step(
    plant: &PlantState,
    plan: &SolveResult,
    plan_start: f64,
    dt: f64,
    dt_sim: f64,
    lag: Option<f64>,
) -> PlantState {
    let time = plant.time + dt_sim;
    let commanded = plan_state_at(plan, time - plan_start, dt);
    let state = match lag {
        Some(tau) if tau > 0.0 => {
            let blend = 1.0 - (-dt_sim / tau).exp();
            plant.state.lerp(&commanded, blend)
        }
        _ => commanded,
    };
    PlantState { state, time }
}

/// A plan that keeps the arm at rest at `q` for the horizon.
fn hold_plan(x: &JointState, horizon: usize) -> SolveResult {
    let rest = JointState::at_rest(x.q);
    SolveResult {
        states: vec![rest; horizon + 1],
        controls: vec![ControlInput::zeros(); horizon],
        objective: 0.0,
        iterations: 0,
        wall_time: 0.0,
        kkt_residual: 0.0,
        max_constraint_violation: 0.0,
        max_bound_violation: 0.0,
        max_collision_violation: 0.0,
        dynamics_residual: 0.0,
        status: SolveStatus::MaxIter,
        deadline_hit: false,
        collision_multipliers: Vec::new(),
    }
}

fn quat_wxyz(p: &Pose) -> [f64; 4] {
    let q = p.quaternion();
    [q.w, q.i, q.j, q.k]
}

/// One row of the teleoperation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Loop time at the start of the cycle (s).
    pub t: f64,
    pub params: String,
    /// The parameter set changed at this cycle boundary.
    pub params_switched: bool,
    pub cold_start: bool,
    /// The solve was unusable and the previous plan kept running.
    pub degraded: bool,
    /// Wall-clock: the solve took longer than one loop period.
    pub overrun: bool,
    pub status: String,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Wall-clock solve time (ms).
    pub solve_ms: f64,
    pub x0_q: [f64; 6],
    pub x0_qd: [f64; 6],
    /// First predicted reference node.
    pub ref_p: [f64; 3],
    pub ref_quat: [f64; 4],
    /// Latest operator target.
    pub target_p: [f64; 3],
    pub target_quat: [f64; 4],
    /// End-effector pose at `x0`.
    pub ee_p: [f64; 3],
    pub ee_quat: [f64; 4],
    /// Plant state at the end of the cycle.
    pub exec_q: [f64; 6],
    pub exec_qd: [f64; 6],
    /// Local container acceleration of the segment executed this cycle.
    pub a_local: [f64; 3],
    pub lateral_accel: f64,
    /// Distance between end effector and target (m).
    pub tracking_error: f64,
}

impl CycleRecord {
    /// Copy with the wall-clock fields zeroed, for determinism comparisons.
    pub fn without_wall_time(&self) -> Self {
        Self {
            overrun: false,
            solve_ms: 0.0,
            ..self.clone()
        }
    }

    pub const CSV_HEADER: &'static str = "cycle,t,params,params_switched,cold_start,degraded,overrun,status,\
iterations,objective,kkt_residual,max_violation,solve_ms,\
q0_1,q0_2,q0_3,q0_4,q0_5,q0_6,qd0_1,qd0_2,qd0_3,qd0_4,qd0_5,qd0_6,\
ref_x,ref_y,ref_z,ref_qw,ref_qx,ref_qy,ref_qz,\
target_x,target_y,target_z,target_qw,target_qx,target_qy,target_qz,\
ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,\
exec_q1,exec_q2,exec_q3,exec_q4,exec_q5,exec_q6,exec_qd1,exec_qd2,exec_qd3,exec_qd4,exec_qd5,exec_qd6,\
a_local_x,a_local_y,a_local_z,lateral_accel,tracking_error";

    pub fn csv_row(&self) -> String {
        let mut f: Vec<String> = vec![
            self.cycle.to_string(),
            self.t.to_string(),
            self.params.clone(),
            self.params_switched.to_string(),
            self.cold_start.to_string(),
            self.degraded.to_string(),
            self.overrun.to_string(),
            self.status.clone(),
            self.iterations.to_string(),
            self.objective.to_string(),
            self.kkt_residual.to_string(),
            self.max_violation.to_string(),
            self.solve_ms.to_string(),
        ];
        let groups: [&[f64]; 13] = [
            &self.x0_q,
            &self.x0_qd,
            &self.ref_p,
            &self.ref_quat,
            &self.target_p,
            &self.target_quat,
            &self.ee_p,
            &self.ee_quat,
            &self.exec_q,
            &self.exec_qd,
            &self.a_local,
            std::slice::from_ref(&self.lateral_accel),
            std::slice::from_ref(&self.tracking_error),
        ];
        for g in groups {
            f.extend(g.iter().map(|v| v.to_string()));
        }
        f.join(",")
    }
}

/// Append-only per-cycle log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeleopLog {
    pub records: Vec<CycleRecord>,
}

impl TeleopLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, rec: CycleRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.t < rec.t));
        self.records.push(rec);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", CycleRecord::CSV_HEADER)?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Records with wall-clock fields zeroed.
    pub fn without_wall_time(&self) -> Vec<CycleRecord> {
        self.records
            .iter()
            .map(CycleRecord::without_wall_time)
            .collect()
    }
}

/// Summary statistics of a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cycles: usize,
    /// Mean of `sqrt(a_x^2 + a_y^2)` of the local acceleration (m/s^2).
    pub mean_lateral_accel: f64,
    pub max_lateral_accel: f64,
    /// Root mean square end-effector-to-target distance (m).
    pub rms_tracking_error: f64,
    pub max_tracking_error: f64,
    pub solve_ms_mean: f64,
    pub solve_ms_max: f64,
    pub solve_ms_p50: f64,
    pub solve_ms_p99: f64,
    pub mean_iterations: f64,
    pub converged_cycles: usize,
    pub degraded_cycles: usize,
    pub overrun_cycles: usize,
    pub cold_starts: usize,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn metrics(log: &TeleopLog) -> Result<Metrics> {
    let r = &log.records;
    if r.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = r.len() as f64;
    let mut times: Vec<f64> = r.iter().map(|c| c.solve_ms).collect();
    times.sort_by(f64::total_cmp);
    Ok(Metrics {
        cycles: r.len(),
        mean_lateral_accel: r.iter().map(|c| c.lateral_accel).sum::<f64>() / n,
        max_lateral_accel: r.iter().map(|c| c.lateral_accel).fold(0.0, f64::max),
        rms_tracking_error: (r
            .iter()
            .map(|c| c.tracking_error * c.tracking_error)
            .sum::<f64>()
            / n)
            .sqrt(),
        max_tracking_error: r.iter().map(|c| c.tracking_error).fold(0.0, f64::max),
        solve_ms_mean: times.iter().sum::<f64>() / n,
        solve_ms_max: times[times.len() - 1],
        solve_ms_p50: percentile(&times, 50.0),
        solve_ms_p99: percentile(&times, 99.0),
        mean_iterations: r.iter().map(|c| c.iterations as f64).sum::<f64>() / n,
        converged_cycles: r
            .iter()
            .filter(|c| c.status == SolveStatus::Converged.as_str())
            .count(),
        degraded_cycles: r.iter().filter(|c| c.degraded).count(),
        overrun_cycles: r.iter().filter(|c| c.overrun).count(),
        cold_starts: r.iter().filter(|c| c.cold_start).count(),
    })
}

/// What one cycle produced.
#[derive(Clone, Debug)]
pub struct CycleOutcome {
    pub record: CycleRecord,
    /// The plan now driving the plant and the time its node 0 refers to.
    pub plan: SolveResult,
    pub plan_start: f64,
    /// The fresh solve (also when it was rejected).
    pub solve: Option<SolveResult>,
}

/// One teleoperation session: target buffer, solver, plant and log.
pub struct Session {
    robot: RobotConfig,
    kin: ArmKinematics,
    params: ParamSet,
    pending: Option<ParamSet>,
    problem: OcpProblem,
    buffer: SampleBuffer,
    plant: PlantState,
    plan: Option<WarmStart>,
    options: SessionOptions,
    log: TeleopLog,
    cycle: usize,
}

impl Session {
    pub fn new(robot: RobotConfig, params: ParamSet, options: SessionOptions) -> Result<Self> {
        let problem = params.build_problem(&robot)?;
        let plant = PlantState {
            state: robot.home_state(),
            time: 0.0,
        };
        Ok(Self {
            kin: robot.kinematics(),
            robot,
            params,
            pending: None,
            problem,
            buffer: SampleBuffer::new(SAMPLE_CAPACITY),
            plant,
            plan: None,
            options,
            log: TeleopLog::default(),
            cycle: 0,
        })
    }

    pub fn robot(&self) -> &RobotConfig {
        &self.robot
    }

    pub fn kinematics(&self) -> &ArmKinematics {
        &self.kin
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn problem(&self) -> &OcpProblem {
        &self.problem
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn log(&self) -> &TeleopLog {
        &self.log
    }

    pub fn into_log(self) -> TeleopLog {
        self.log
    }

    /// Plan currently driving the plant.
    pub fn active_plan(&self) -> Option<&WarmStart> {
        self.plan.as_ref()
    }

    pub fn latest_target(&self) -> Option<&TargetSample> {
        self.buffer.latest()
    }

    pub fn push_sample(&mut self, sample: TargetSample) -> Result<()> {
        if !sample.timestamp.is_finite()
            || !sample
                .pose
                .position
                .iter()
                .chain(sample.pose.rotation.iter())
                .all(|v| v.is_finite())
        {
            return Err(Error::Input(
                "target sample contains non-finite values".into(),
            ));
        }
        self.buffer.push(sample)
    }

    /// Schedules a parameter set; it takes effect at the next cycle boundary.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        params.validate()?;
        // fail early instead of at the boundary
        params.build_problem(&self.robot)?;
        self.pending = Some(params);
        Ok(())
    }

    /// Holds the reference at the latest target: the buffered history is
    /// dropped so the predicted target stops moving until new samples arrive.
    pub fn freeze_target(&mut self) {
        self.buffer.keep_latest();
    }

    /// Puts the plant back at the home pose at rest and drops the plan and
    /// the buffered targets. The loop clock keeps running.
    pub fn reset(&mut self) {
        self.plant.state = self.robot.home_state();
        self.plan = None;
        self.buffer.clear();
    }

    /// End-effector pose of the plant.
    pub fn ee_pose(&self) -> Pose {
        self.kin.ee_pose(&self.plant.state.q)
    }

    /// Runs one loop cycle starting at loop time `now` and advances the plant
    /// by one period.
    pub fn run_cycle(&mut self, now: f64) -> Result<CycleOutcome> {
        if !now.is_finite() {
            return Err(Error::Input("cycle time must be finite".into()));
        }
        let mut params_switched = false;
        if let Some(p) = self.pending.take() {
            self.problem = p.build_problem(&self.robot)?;
            params_switched = p.name != self.params.name || p != self.params;
            self.params = p;
        }
        let dt = self.problem.dt();
        let n = self.problem.horizon();

        // state estimate and initial guess from the previous plan
        let (x0, guess, cold_start) = match &self.plan {
            Some(warm) => {
                let shifted = shift_warm_start(warm, now - warm.start_time, &self.problem);
                if shifted.cold {
                    (JointState::at_rest(self.plant.state.q), None, true)
                } else {
                    (shifted.x0, Some(shifted.guess), false)
                }
            }
            None => (self.plant.state, None, true),
        };

        // reference
        let samples = self.buffer.to_vec();
        let x0_pose = self.kin.ee_pose(&x0.q);
        let target = samples
            .last()
            .map(|s| s.pose.clone())
            .unwrap_or_else(|| x0_pose.clone());
        let twist = estimate_twist(&samples, self.params.reference.twist_window);
        let reach = self.params.reach(&self.robot);
        let reference = predict(&target, &twist, dt, n, reach)
            .unwrap_or_else(|_| ReferenceTrajectory::constant(&target, dt, n));

        // solve
        let started = Instant::now();
        let solved = self.problem.solve(&x0, &reference, guess.as_ref());
        let solve_s = started.elapsed().as_secs_f64();
        let solve = solved.ok();
        let usable = solve.as_ref().is_some_and(SolveResult::is_usable);
        let degraded = !usable;
        if usable {
            self.plan = Some(WarmStart {
                result: solve.clone().expect("usable implies present"),
                start_time: now,
            });
        } else if self.plan.is_none() {
            self.plan = Some(WarmStart {
                result: hold_plan(&x0, n),
                start_time: now,
            });
        }
        let warm = self.plan.as_ref().expect("a plan is always set above");

        // plant
        self.plant.time = now;
        self.plant = plant_step(
            &self.plant,
            &warm.result,
            warm.start_time,
            dt,
            LOOP_PERIOD,
            self.options.plant_lag,
        );

        let (seg_x, seg_u) = plan_segment_at(&warm.result, now - warm.start_time, dt);
        let acc = self
            .kin
            .local_acceleration(&seg_x.q, &seg_x.qd, &seg_u, self.problem.gravity());
        let ref_pose = Pose::new(reference.positions[0], reference.rotations[0]);
        let (status, iterations, objective, kkt, viol) = match &solve {
            Some(s) => (
                s.status.as_str().to_string(),
                s.iterations,
                s.objective,
                s.kkt_residual,
                s.max_constraint_violation,
            ),
            None => ("error".to_string(), 0, f64::NAN, f64::NAN, f64::NAN),
        };
        let record = CycleRecord {
            cycle: self.cycle,
            t: now,
            params: self.params.name.clone(),
            params_switched,
            cold_start,
            degraded,
            overrun: solve_s > LOOP_PERIOD,
            status,
            iterations,
            objective,
            kkt_residual: kkt,
            max_violation: viol,
            solve_ms: solve_s * 1e3,
            x0_q: x0.q.into(),
            x0_qd: x0.qd.into(),
            ref_p: ref_pose.position.into(),
            ref_quat: quat_wxyz(&ref_pose),
            target_p: target.position.into(),
            target_quat: quat_wxyz(&target),
            ee_p: x0_pose.position.into(),
            ee_quat: quat_wxyz(&x0_pose),
            exec_q: self.plant.state.q.into(),
            exec_qd: self.plant.state.qd.into(),
            a_local: acc.a_local.into(),
            lateral_accel: acc.lateral(),
            tracking_error: (x0_pose.position - target.position).norm(),
        };
        self.log.push(record.clone());
        self.cycle += 1;
        Ok(CycleOutcome {
            record,
            plan: warm.result.clone(),
            plan_start: warm.start_time,
            solve,
        })
    }
}

/// Number of loop cycles needed to cover a recording:
/// `ceil(duration * rate)`, at least one for a non-empty recording.
pub fn replay_cycle_count(samples: &[TargetSample]) -> usize {
    match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => {
            let c = ((b.timestamp - a.timestamp) * LOOP_RATE_HZ - 1e-9).ceil();
            (c.max(1.0)) as usize
        }
        _ => 0,
    }
}

/// Deterministic offline run of the loop over a recording. Cycle `c` starts
/// at `t_first + c * period` and sees every sample stamped at or before it.
pub fn replay(
    robot: &RobotConfig,
    params: &ParamSet,
    samples: &[TargetSample],
    options: SessionOptions,
) -> Result<TeleopLog> {
    replay_cycles(robot, params, samples, options, replay_cycle_count(samples))
}

/// Like [`replay`] with an explicit cycle count (targets hold after the
/// recording ends).
pub fn replay_cycles(
    robot: &RobotConfig,
    params: &ParamSet,
    samples: &[TargetSample],
    options: SessionOptions,
    cycles: usize,
) -> Result<TeleopLog> {
    let mut session = Session::new(robot.clone(), params.clone(), options)?;
    let Some(first) = samples.first() else {
        return Ok(TeleopLog::default());
    };
    let t0 = first.timestamp;
    let mut next = 0;
    for c in 0..cycles {
        let now = t0 + c as f64 * LOOP_PERIOD;
        while next < samples.len() && samples[next].timestamp <= now + 1e-12 {
            session.push_sample(samples[next].clone())?;
            next += 1;
        }
        session.run_cycle(now)?;
    }
    Ok(session.into_log())
}

/// End-effector position of the home pose of `robot`.
pub fn home_ee_position(robot: &RobotConfig) -> Vector3<f64> {
    robot.kinematics().ee_pose(&robot.home_state().q).position
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_two_nodes() -> SolveResult {
        let mut p = hold_plan(&JointState::zeros(), 2);
        p.states[1] = JointState::at_rest(crate::kinematics::JointVector::repeat(1.0));
        p.states[2] = JointState::at_rest(crate::kinematics::JointVector::repeat(2.0));
        p
    }

    #[test]
    fn plant_follows_nodes_and_midpoints() {
        let plan = plan_two_nodes();
        let plant = PlantState {
            state: JointState::zeros(),
            time: 0.0,
        };
        let next = plant_step(&plant, &plan, 0.0, 0.05, 0.05, None);
        assert_eq!(next.state, plan.states[1]);
        let half = plant_step(&plant, &plan, 0.0, 0.05, 0.025, None);
        assert!((half.state.q[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hold_plan_keeps_plant() {
        let x = JointState::at_rest(crate::kinematics::JointVector::repeat(0.3));
        let plan = hold_plan(&x, 8);
        let plant = PlantState {
            state: x,
            time: 1.0,
        };
        assert_eq!(plant_step(&plant, &plan, 1.0, 0.05, 0.05, None).state, x);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
    }

    #[test]
    fn cycle_count_rule() {
        let s = |t: f64| TargetSample::new(t, Pose::identity());
        assert_eq!(replay_cycle_count(&[]), 0);
        assert_eq!(replay_cycle_count(&[s(3.0)]), 1);
        assert_eq!(replay_cycle_count(&[s(0.0), s(12.0)]), 240);
        assert_eq!(replay_cycle_count(&[s(0.0), s(0.51)]), 11);
    }
}
