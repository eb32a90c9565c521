// Frozen reference values keep every digit of the symbolic evaluation.
#![allow(clippy::excessive_precision)]

mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use common::*;
use teleop_core::kinematics::{ArmKinematics, DhTable, JointVector, Pose, NQ};
use teleop_core::reference::clip_to_reach;

/// Frozen values from an exact symbolic evaluation of the DH product
/// (rational link lengths, 40 significant digits, rounded to f64).
struct Frozen {
    q: [f64; 6],
    tool_p: [f64; 3],
    flange_p: [f64; 3],
    frame3_p: [f64; 3],
    tool_r: [[f64; 3]; 3],
}

fn frozen_cases() -> Vec<Frozen> {
    vec![
        Frozen {
            q: [0.0; 6],
            flange_p: [
                -8.17200000000000037e-01,
                -2.32899999999999996e-01,
                6.27999999999999947e-02,
            ],
            tool_p: [
                -8.17200000000000037e-01,
                -3.12900000000000011e-01,
                6.27999999999999947e-02,
            ],
            frame3_p: [-0.8172, 0.0, 0.1625],
            tool_r: [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        },
        Frozen {
            q: [0.0, -1.6, 2.0, -FRAC_PI_2 + 1.6 - 2.0, FRAC_PI_2, FRAC_PI_2],
            flange_p: [
                -4.48530324869883812e-01,
                -1.33300000000000002e-01,
                5.34188907439187011e-01,
            ],
            tool_p: [
                -4.48530324869883812e-01,
                -1.33300000000000002e-01,
                6.14188907439186971e-01,
            ],
            frame3_p: [-3.48830324869883801e-01, 0.0, 4.34588907439186989e-01],
            tool_r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        },
        Frozen {
            q: [0.3, -1.2, 1.4, -0.5, 0.9, 2.1],
            flange_p: [
                -5.56002021666073820e-01,
                -3.76330423132586467e-01,
                4.08507749481988924e-01,
            ],
            tool_p: [
                -5.98499537413593408e-01,
                -4.41530143657198615e-01,
                4.27026863899309106e-01,
            ],
            frame3_p: [
                -5.14338030809626034e-01,
                -1.59103397482248554e-01,
                4.80698499998248208e-01,
            ],
            tool_r: [
                [
                    -1.59574960744891553e-01,
                    -8.32071068128932945e-01,
                    -5.31218946843994733e-01,
                ],
                [
                    3.64585585854849403e-01,
                    4.50397651954025813e-01,
                    -8.14996506557651768e-01,
                ],
                [
                    9.17394780064799908e-01,
                    -3.23727806493474934e-01,
                    2.31488930216502353e-01,
                ],
            ],
        },
        Frozen {
            q: [-2.5, 0.7, -2.9, 3.0, -1.1, -0.4],
            flange_p: [
                -1.38151157317899093e-01,
                1.19577254944608913e-01,
                2.00013691168369839e-01,
            ],
            tool_p: [
                -1.99663384804608129e-01,
                1.18921111715936945e-01,
                2.51158733407934209e-01,
            ],
            frame3_p: [
                7.55060163662075595e-02,
                5.64046778012242539e-02,
                2.05799772502024581e-01,
            ],
            tool_r: [
                [
                    3.42644986533455001e-02,
                    6.38446835108988808e-01,
                    -7.68902843583863072e-01,
                ],
                [
                    -9.99009382854241457e-01,
                    4.37376680231637768e-02,
                    -8.20179035839957264e-03,
                ],
                [
                    2.83936102181899970e-02,
                    7.68422185478276787e-01,
                    6.39313027994554695e-01,
                ],
            ],
        },
    ]
}

fn builtin_kin() -> ArmKinematics {
    robot().kinematics()
}

#[test]
fn matches_frozen_symbolic_values() {
    let kin = builtin_kin();
    for case in frozen_cases() {
        let q = JointVector::from(case.q);
        let fk = kin.forward(&q);
        let tol = 1e-12;
        assert!(
            (fk.ee.position - Vector3::from(case.tool_p)).amax() < tol,
            "tool position at {:?}",
            case.q
        );
        assert!(
            (fk.frames[6].translation.vector - Vector3::from(case.flange_p)).amax() < tol,
            "flange at {:?}",
            case.q
        );
        assert!(
            (fk.frames[3].translation.vector - Vector3::from(case.frame3_p)).amax() < tol,
            "frame 3 at {:?}",
            case.q
        );
        let r = Matrix3::from_fn(|i, j| case.tool_r[i][j]);
        assert!(
            (fk.ee.rotation - r).amax() < tol,
            "tool rotation at {:?}",
            case.q
        );
    }
}

#[test]
fn home_pose_holds_the_glass_upright() {
    let kin = builtin_kin();
    let pose = kin.ee_pose(&home().q);
    assert!((pose.rotation - Matrix3::identity()).amax() < 1e-12);
}

#[test]
fn matches_matrix_product_oracle_on_random_configurations() {
    let kin = builtin_kin();
    let mut rng = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = uniform_vec6(&mut rng, -2.0 * PI, 2.0 * PI);
        let fk = kin.forward(&q);
        let frames = oracle_frames(&q);
        for (i, f) in fk.frames.iter().enumerate() {
            let (p, r) = split(&frames[i]);
            worst = worst.max((f.translation.vector - p).amax());
            worst = worst.max((f.rotation.to_rotation_matrix().matrix() - r).amax());
        }
        let (p, r) = split(&oracle_tool(&q));
        worst = worst.max((fk.ee.position - p).amax());
        worst = worst.max((fk.ee.rotation - r).amax());
    }
    assert!(worst < 1e-9, "largest deviation {worst:e}");
}

#[test]
fn acceleration_matches_finite_differences_of_positions() {
    let kin = builtin_kin();
    let mut rng = rng(12);
    for _ in 0..50 {
        let q = uniform_vec6(&mut rng, -PI, PI);
        let qd = uniform_vec6(&mut rng, -1.5, 1.5);
        let qdd = uniform_vec6(&mut rng, -5.0, 5.0);
        let path = |t: f64| kin.ee_pose(&(q + qd * t + qdd * (0.5 * t * t))).position;
        let h = 1e-4;
        let fd = (path(h) - 2.0 * path(0.0) + path(-h)) / (h * h);
        let ad = kin.ee_acceleration(&q, &qd, &qdd);
        let rel = (ad - fd).norm() / ad.norm().max(1e-3);
        assert!(rel < 1e-5, "relative error {rel:e}");
    }
}

#[test]
fn local_acceleration_at_rest_is_gravity_in_the_tool_frame() {
    let kin = builtin_kin();
    let g = Vector3::new(0.0, 0.0, 9.81);
    let z = JointVector::zeros();
    let at_home = kin.local_acceleration(&home().q, &z, &z, &g);
    assert!((at_home.a_local - g).amax() < 1e-12);
    assert!(at_home.lateral() < 1e-12);

    let q = JointVector::new(0.3, -1.2, 1.4, -0.5, 0.9, 2.1);
    let r = kin.ee_pose(&q).rotation;
    let a = kin.local_acceleration(&q, &z, &z, &g).a_local;
    assert!((a - r * g).amax() < 1e-12);
    assert!((a.norm() - 9.81).abs() < 1e-12);
}

#[test]
fn sphere_centers_follow_the_base_transform() {
    let r = robot();
    let offset = Isometry3::from_parts(
        Translation3::new(0.4, -0.2, 0.3),
        UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
    );
    let plain =
        ArmKinematics::with_transforms(r.dh_table(), Isometry3::identity(), *r.kinematics().tool());
    let moved = ArmKinematics::with_transforms(r.dh_table(), offset, *r.kinematics().tool());
    let mut rng = rng(13);
    for _ in 0..20 {
        let q = uniform_vec6(&mut rng, -PI, PI);
        let a = plain.sphere_centers(&q, &r.spheres).unwrap();
        let b = moved.sphere_centers(&q, &r.spheres).unwrap();
        assert_eq!(a.len(), 29);
        for (ca, cb) in a.iter().zip(&b) {
            let expect = offset.transform_point(&(*ca).into()).coords;
            assert!((expect - cb).amax() < 1e-12);
        }
        let ea = plain.ee_pose(&q);
        let eb = moved.ee_pose(&q);
        assert!((offset.transform_point(&ea.position.into()).coords - eb.position).amax() < 1e-12);
    }
}

#[test]
fn rejects_malformed_tables() {
    let rows = DhTable::ur5e().rows().to_vec();
    assert!(DhTable::new(&rows[..5]).is_err());
    let mut bad = rows.clone();
    bad[2].a = f64::NAN;
    assert!(DhTable::new(&bad).is_err());
}

proptest! {
    #[test]
    fn rotations_stay_orthonormal(q in proptest::array::uniform6(-10.0f64..10.0)) {
        let kin = builtin_kin();
        let q = JointVector::from(q);
        let fk = kin.forward(&q);
        prop_assert!(fk.ee.orthonormality_error() < 1e-10);
        for f in &fk.frames {
            let p = Pose::from_isometry(f);
            prop_assert!(p.orthonormality_error() < 1e-10);
        }
    }

    #[test]
    fn full_turns_leave_the_pose_unchanged(
        q in proptest::array::uniform6(-3.0f64..3.0),
        joint in 0usize..NQ,
        turns in -2i32..=2,
    ) {
        let kin = builtin_kin();
        let q = JointVector::from(q);
        let mut shifted = q;
        shifted[joint] += 2.0 * PI * turns as f64;
        let a = kin.ee_pose(&q);
        let b = kin.ee_pose(&shifted);
        prop_assert!((a.position - b.position).amax() < 1e-9);
        prop_assert!((a.rotation - b.rotation).amax() < 1e-9);
    }

    #[test]
    fn tool_stays_within_total_link_length(q in proptest::array::uniform6(-7.0f64..7.0)) {
        let kin = builtin_kin();
        let p = kin.ee_pose(&JointVector::from(q)).position;
        let bound = kin.dh().total_link_length() + 0.08;
        prop_assert!(p.norm() <= bound + 1e-12);
    }

    #[test]
    fn reach_clipping_is_a_radial_projection(
        p in proptest::array::uniform3(-3.0f64..3.0),
        reach in 0.1f64..2.0,
    ) {
        let p = Vector3::from(p);
        let c = clip_to_reach(&p, reach);
        prop_assert!(c.norm() <= reach + 1e-12);
        if p.norm() <= reach {
            prop_assert_eq!(c, p);
        } else {
            prop_assert!((c.normalize() - p.normalize()).amax() < 1e-12);
            prop_assert!((c.norm() - reach).abs() < 1e-12);
        }
    }
}
