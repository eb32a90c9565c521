//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teleop_core::config::{ParamSet, RobotConfig};
use teleop_core::kinematics::{JointVector, Pose};
use teleop_core::model::{ControlInput, JointState};
use teleop_core::ocp::OcpProblem;
use teleop_core::reference::ReferenceTrajectory;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// UR5e link parameters written out independently of the library tables.
const D: [f64; 6] = [0.1625, 0.0, 0.0, 0.1333, 0.0997, 0.0996];
const A: [f64; 6] = [0.0, -0.425, -0.3922, 0.0, 0.0, 0.0];
const ALPHA: [f64; 6] = [FRAC_PI_2, 0.0, 0.0, FRAC_PI_2, -FRAC_PI_2, 0.0];
const TOOL_Z: f64 = 0.08;

fn rot_z(t: f64) -> Matrix4<f64> {
    let (s, c) = t.sin_cos();
    Matrix4::new(
        c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    )
}

fn rot_x(t: f64) -> Matrix4<f64> {
    let (s, c) = t.sin_cos();
    Matrix4::new(
        1.0, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0,
    )
}

fn trans(x: f64, y: f64, z: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = x;
    m[(1, 3)] = y;
    m[(2, 3)] = z;
    m
}

/// Homogeneous transforms `T_0^i` for `i = 0..=6` from plain 4x4 products.
pub fn oracle_frames(q: &JointVector) -> Vec<Matrix4<f64>> {
    let mut out = vec![Matrix4::identity()];
    for i in 0..6 {
        let t =
            out[i] * rot_z(q[i]) * trans(0.0, 0.0, D[i]) * trans(A[i], 0.0, 0.0) * rot_x(ALPHA[i]);
        out.push(t);
    }
    out
}

/// Tool transform of the oracle chain.
pub fn oracle_tool(q: &JointVector) -> Matrix4<f64> {
    oracle_frames(q)[6] * trans(0.0, 0.0, TOOL_Z)
}

pub fn split(t: &Matrix4<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    (
        Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]),
        t.fixed_view::<3, 3>(0, 0).into_owned(),
    )
}

pub fn uniform_vec6(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> JointVector {
    JointVector::from_fn(|_, _| rng.random_range(lo..hi))
}

pub fn p1() -> ParamSet {
    ParamSet::p1()
}

pub fn p2() -> ParamSet {
    ParamSet::p2()
}

pub fn robot() -> RobotConfig {
    RobotConfig::builtin()
}

pub fn problem(params: &ParamSet) -> OcpProblem {
    params.build_problem(&robot()).expect("built-in problem")
}

pub fn home() -> JointState {
    robot().home_state()
}

/// Reference holding one pose over the horizon of `prob`.
pub fn hold_reference(prob: &OcpProblem, pose: &Pose) -> ReferenceTrajectory {
    ReferenceTrajectory::constant(pose, prob.dt(), prob.horizon())
}

/// Reference reached by applying `controls` from `x0`: every node is the
/// end-effector pose of the resulting state.
pub fn reachable_reference(
    prob: &OcpProblem,
    x0: &JointState,
    controls: &[ControlInput],
) -> ReferenceTrajectory {
    let states = prob.model().rollout(x0, controls);
    let poses: Vec<Pose> = states[1..]
        .iter()
        .map(|x| prob.kinematics().ee_pose(&x.q))
        .collect();
    ReferenceTrajectory {
        positions: poses.iter().map(|p| p.position).collect(),
        rotations: poses.iter().map(|p| p.rotation).collect(),
        dt: prob.dt(),
    }
}

/// Home configuration perturbed by up to `spread` rad per joint, at rest.
pub fn near_home(rng: &mut ChaCha8Rng, spread: f64) -> JointState {
    JointState::at_rest(home().q + uniform_vec6(rng, -spread, spread))
}

/// One brute-force comparison: a two-step problem with two active joints and
/// coarse acceleration bounds, solved by the solver and by exhaustive search
/// over a grid of 21 levels per control.
pub struct GridInstance {
    pub solver_objective: f64,
    pub grid_objective: f64,
    pub solver_feasible: bool,
}

pub const GRID_LEVELS: usize = 21;
pub const GRID_U_BOUND: f64 = 2.0;

pub fn grid_instance(seed: u64) -> GridInstance {
    use teleop_core::constraints::Limits;
    use teleop_core::ocp::OcpConfig;

    let mut rng = rng(seed);
    let r = robot();
    let mut limits = r.limits();
    limits.u_min = Limits::symmetric(1.0, 1.0, GRID_U_BOUND).u_min;
    limits.u_max = -limits.u_min;
    let a = rng.random_range(0..6usize);
    let b = (a + 1 + rng.random_range(0..5usize)) % 6;
    let mut active = [false; 6];
    active[a] = true;
    active[b] = true;
    let cfg = OcpConfig::new(
        r.kinematics(),
        teleop_core::cost::Weights::p2(),
        limits,
        2,
        0.05,
    );
    let prob = OcpProblem::build(cfg)
        .unwrap()
        .with_active_joints(active)
        .unwrap();

    let x0 = near_home(&mut rng, 0.4);
    let truth: Vec<ControlInput> = (0..2)
        .map(|_| {
            let mut u = ControlInput::zeros();
            u[a] = rng.random_range(-3.0..3.0);
            u[b] = rng.random_range(-3.0..3.0);
            u
        })
        .collect();
    let reference = reachable_reference(&prob, &x0, &truth);

    let sol = prob.solve(&x0, &reference, None).unwrap();
    let rep = prob.constraint_report(&sol.states, &sol.controls);
    let locked_still = sol
        .controls
        .iter()
        .all(|u| (0..6).all(|i| active[i] || u[i] == 0.0));

    let levels: Vec<f64> = (0..GRID_LEVELS)
        .map(|i| -GRID_U_BOUND + 2.0 * GRID_U_BOUND * i as f64 / (GRID_LEVELS - 1) as f64)
        .collect();
    let mut best = f64::INFINITY;
    let mut controls = vec![ControlInput::zeros(); 2];
    for &u0a in &levels {
        for &u0b in &levels {
            for &u1a in &levels {
                for &u1b in &levels {
                    controls[0][a] = u0a;
                    controls[0][b] = u0b;
                    controls[1][a] = u1a;
                    controls[1][b] = u1b;
                    let states = prob.model().rollout(&x0, &controls);
                    let z = prob.pack(&states, &controls);
                    best = best.min(prob.objective(&x0, &z, &reference).unwrap());
                }
            }
        }
    }
    GridInstance {
        solver_objective: sol.objective,
        grid_objective: best,
        solver_feasible: sol.is_usable() && rep.max() <= 1e-6 && locked_still,
    }
}
