//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any of them fails.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;

use common::*;
use teleop_core::config::ParamSet;
use teleop_core::constraints::{box_violations, collision_margins};
use teleop_core::kinematics::{JointVector, Pose};
use teleop_core::model::{discretize, ControlInput, JointState};
use teleop_core::ocp::{OcpProblem, SolveResult};
use teleop_core::recording::aggressive_sweep;
use teleop_core::reference::TargetSample;
use teleop_core::runner::{
    metrics, replay, Metrics, Session, SessionOptions, TeleopLog, LOOP_PERIOD,
};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

/// Replays a recording cycle by cycle, keeping every solver result.
fn replay_collecting(
    params: &ParamSet,
    samples: &[TargetSample],
) -> (TeleopLog, Vec<(JointState, SolveResult)>) {
    let mut session = Session::new(robot(), params.clone(), SessionOptions::default()).unwrap();
    let cycles = teleop_core::runner::replay_cycle_count(samples);
    let t0 = samples[0].timestamp;
    let mut next = 0;
    let mut solves = Vec::new();
    for c in 0..cycles {
        let now = t0 + c as f64 * LOOP_PERIOD;
        while next < samples.len() && samples[next].timestamp <= now + 1e-12 {
            session.push_sample(samples[next].clone()).unwrap();
            next += 1;
        }
        let out = session.run_cycle(now).unwrap();
        if let Some(s) = out.solve {
            let x0 = JointState::new(
                JointVector::from(out.record.x0_q),
                JointVector::from(out.record.x0_qd),
            );
            solves.push((x0, s));
        }
    }
    (session.into_log(), solves)
}

/// Worst bound, collision and dynamics violation, recomputed from scratch.
fn violations(prob: &OcpProblem, sol: &SolveResult) -> (f64, f64, f64) {
    let (mut bound, mut collision, mut dynamics) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..sol.controls.len() {
        let next = prob.model().step(&sol.states[k], &sol.controls[k]);
        dynamics = dynamics.max((next.to_vector() - sol.states[k + 1].to_vector()).amax());
        bound =
            bound.max(box_violations(&sol.states[k + 1], &sol.controls[k], prob.limits()).max());
        let m = collision_margins(
            prob.kinematics(),
            &sol.states[k + 1].q,
            prob.spheres(),
            prob.pairs(),
        )
        .unwrap();
        collision = collision.max(m.iter().map(|v| -v).fold(0.0, f64::max));
    }
    (bound, collision, dynamics)
}

fn slosh_tradeoff(m1: &Metrics, m2: &Metrics, seconds: f64) -> Outcome {
    let ratio = m2.mean_lateral_accel / m1.mean_lateral_accel;
    let pass = ratio <= 0.5 && m1.rms_tracking_error < m2.rms_tracking_error && seconds <= 60.0;
    outcome(
        "slosh trade-off",
        pass,
        format!(
            "mean lateral P1 {:.3} / P2 {:.3} m/s^2 (ratio {:.3}), rms tracking P1 {:.4} < P2 {:.4} m, {:.1} s",
            m1.mean_lateral_accel, m2.mean_lateral_accel, ratio, m1.rms_tracking_error, m2.rms_tracking_error, seconds
        ),
    )
}

fn real_time(runs: &[(&str, &Metrics)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in runs {
        pass &= m.cycles >= 200 && m.solve_ms_mean <= 50.0 && m.solve_ms_p99 <= 100.0;
        parts.push(format!(
            "{name}: {} cycles, mean {:.2} ms, p99 {:.2} ms, {} degraded, {} overruns",
            m.cycles, m.solve_ms_mean, m.solve_ms_p99, m.degraded_cycles, m.overrun_cycles
        ));
    }
    outcome("real-time budget", pass, parts.join("; "))
}

fn discretization() -> Outcome {
    use nalgebra::SMatrix;
    let dt = 0.05;
    let model = discretize(dt).unwrap();
    let mut m = SMatrix::<f64, 18, 18>::zeros();
    for i in 0..6 {
        m[(i, 6 + i)] = dt;
        m[(6 + i, 12 + i)] = dt;
    }
    let mut term = SMatrix::<f64, 18, 18>::identity();
    let mut series = term;
    for k in 1..=20 {
        term = term * m / k as f64;
        series += term;
    }
    let err_a = (model.a_d - series.fixed_view::<12, 12>(0, 0)).amax();
    let err_b = (model.b_d - series.fixed_view::<12, 6>(0, 12)).amax();

    let mut rng = rng(501);
    let x0 = JointState::new(
        uniform_vec6(&mut rng, -2.0, 2.0),
        uniform_vec6(&mut rng, -1.0, 1.0),
    );
    let u = uniform_vec6(&mut rng, -5.0, 5.0);
    let mut err_roll: f64 = 0.0;
    for (k, x) in model.rollout(&x0, &vec![u; 8]).iter().enumerate() {
        let t = k as f64 * dt;
        err_roll = err_roll.max((x.q - (x0.q + x0.qd * t + u * (0.5 * t * t))).amax());
        err_roll = err_roll.max((x.qd - (x0.qd + u * t)).amax());
    }
    let pass = err_a <= 1e-12 && err_b <= 1e-12 && err_roll <= 1e-12;
    outcome(
        "discretization exactness",
        pass,
        format!("|A_d| err {err_a:.1e}, |B_d| err {err_b:.1e}, rollout err {err_roll:.1e}"),
    )
}

fn gradient() -> Outcome {
    let prob = problem(&p2());
    let mut rng = rng(502);
    let lim = prob.limits().clone();
    let pose = prob.kinematics().ee_pose(&home().q);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    while points < 100 {
        let x0 = JointState::new(
            home().q + uniform_vec6(&mut rng, -0.6, 0.6),
            uniform_vec6(&mut rng, -1.0, 1.0),
        );
        let controls: Vec<ControlInput> =
            (0..8).map(|_| uniform_vec6(&mut rng, -8.0, 8.0)).collect();
        let states = prob.model().rollout(&x0, &controls);
        if states[1..].iter().any(|x| lim.clamp_state(x) != *x) {
            continue;
        }
        points += 1;
        let mut reference = hold_reference(&prob, &pose);
        for p in &mut reference.positions {
            *p += Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
        }
        let z = prob.pack(&states, &controls);
        let g = prob.objective_gradient(&x0, &z, &reference).unwrap();
        let mut w = z.clone();
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            w[i] = z[i] + h;
            let fp = prob.objective(&x0, &w, &reference).unwrap();
            w[i] = z[i] - h;
            let fm = prob.objective(&x0, &w, &reference).unwrap();
            w[i] = z[i];
            let fd = (fp - fm) / (2.0 * h);
            diff += (g[i] - fd) * (g[i] - fd);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-8));
    }
    outcome(
        "gradient correctness",
        worst < 1e-5,
        format!("144 variables, 100 points, worst relative error {worst:.2e}"),
    )
}

/// Smallest collision margin at the start state (m^2).
fn start_margin(prob: &OcpProblem, x0: &JointState) -> f64 {
    collision_margins(prob.kinematics(), &x0.q, prob.spheres(), prob.pairs())
        .unwrap()
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Starts this close to contact (or in it) may admit no feasible plan at all;
/// for those the solver must either satisfy the constraints or flag the
/// result unusable.
const WELL_POSED_START_MARGIN: f64 = 5e-3;

fn constraint_satisfaction(collected: &[(JointState, SolveResult)]) -> Outcome {
    let prob = problem(&p2());
    let mut all: Vec<(JointState, SolveResult)> = collected.to_vec();
    let mut rng = rng(503);
    for _ in 0..100 {
        let x0 = JointState::new(
            home().q + uniform_vec6(&mut rng, -1.0, 1.0),
            uniform_vec6(&mut rng, -0.5, 0.5),
        );
        let pose = prob.kinematics().ee_pose(&x0.q);
        let offset = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let reference = hold_reference(&prob, &Pose::new(pose.position + offset, pose.rotation));
        all.push((x0, prob.solve(&x0, &reference, None).unwrap()));
    }
    let (mut bound, mut collision, mut dynamics) = (0.0f64, 0.0f64, 0.0f64);
    let (mut well_posed, mut failing, mut ill_posed, mut ill_rejected) = (0, 0, 0, 0);
    for (x0, sol) in &all {
        let (b, c, d) = violations(&prob, sol);
        let ok = b <= 1e-8 && c <= 1e-6 && d <= 1e-10;
        if start_margin(&prob, x0) >= WELL_POSED_START_MARGIN {
            well_posed += 1;
            failing += usize::from(!ok);
            bound = bound.max(b);
            collision = collision.max(c);
            dynamics = dynamics.max(d);
        } else {
            ill_posed += 1;
            if !ok && !sol.is_usable() {
                ill_rejected += 1;
            } else if !ok {
                failing += 1;
            }
        }
    }
    outcome(
        "constraint satisfaction",
        failing == 0,
        format!(
            "{well_posed} results from collision-free starts, {failing} violating (worst bound {bound:.1e}, \
             collision {collision:.1e}, dynamics {dynamics:.1e}); {ill_posed} starts in or at contact, \
             {ill_rejected} of them infeasible and flagged unusable"
        ),
    )
}

fn oracle_optimality() -> Outcome {
    let started = Instant::now();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut pass = true;
    for seed in 0..10 {
        let inst = grid_instance(600 + seed);
        let gap = inst.solver_objective - inst.grid_objective;
        worst_gap = worst_gap.max(gap);
        pass &= inst.solver_feasible && gap <= 1e-3;
    }
    let seconds = started.elapsed().as_secs_f64();
    pass &= seconds <= 120.0;
    outcome(
        "oracle optimality",
        pass,
        format!("10 instances, worst solver - grid {worst_gap:.2e}, {seconds:.1} s"),
    )
}

fn kinematics_oracle() -> Outcome {
    let kin = robot().kinematics();
    let mut rng = rng(504);
    let mut pos_err: f64 = 0.0;
    for _ in 0..1000 {
        let q = uniform_vec6(&mut rng, -2.0 * PI, 2.0 * PI);
        let (p, _) = split(&oracle_tool(&q));
        pos_err = pos_err.max((kin.ee_pose(&q).position - p).amax());
    }
    let mut acc_err: f64 = 0.0;
    for _ in 0..100 {
        let q = uniform_vec6(&mut rng, -PI, PI);
        let qd = uniform_vec6(&mut rng, -1.5, 1.5);
        let qdd = uniform_vec6(&mut rng, -5.0, 5.0);
        let path = |t: f64| kin.ee_pose(&(q + qd * t + qdd * (0.5 * t * t))).position;
        let h = 1e-4;
        let fd = (path(h) - 2.0 * path(0.0) + path(-h)) / (h * h);
        let ad = kin.ee_acceleration(&q, &qd, &qdd);
        acc_err = acc_err.max((ad - fd).norm() / ad.norm().max(1e-3));
    }
    outcome(
        "kinematics oracle",
        pos_err <= 1e-9 && acc_err <= 1e-5,
        format!(
            "1000 configurations, position err {pos_err:.1e} m; acceleration rel err {acc_err:.1e}"
        ),
    )
}

fn determinism(samples: &[TargetSample]) -> Outcome {
    let a = replay(&robot(), &p2(), samples, SessionOptions::default()).unwrap();
    let b = replay(&robot(), &p2(), samples, SessionOptions::default()).unwrap();
    let same = a.without_wall_time() == b.without_wall_time();
    outcome(
        "determinism",
        same && !a.is_empty(),
        format!(
            "two replays of {} cycles {}",
            a.len(),
            if same { "identical" } else { "differ" }
        ),
    )
}

fn main() -> ExitCode {
    let samples = aggressive_sweep();

    let started = Instant::now();
    let (log1, solves1) = replay_collecting(&p1(), &samples);
    let (log2, solves2) = replay_collecting(&p2(), &samples);
    let replay_seconds = started.elapsed().as_secs_f64();
    let m1 = metrics(&log1).unwrap();
    let m2 = metrics(&log2).unwrap();
    let collected: Vec<_> = solves1.into_iter().chain(solves2).collect();

    let results = [
        slosh_tradeoff(&m1, &m2, replay_seconds),
        real_time(&[("P1", &m1), ("P2", &m2)]),
        discretization(),
        gradient(),
        constraint_satisfaction(&collected),
        oracle_optimality(),
        kinematics_oracle(),
        determinism(&samples),
    ];

    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
