mod common;

use nalgebra::SMatrix;
use proptest::prelude::*;

use common::*;
use teleop_core::kinematics::JointVector;
use teleop_core::model::{discretize, JointState, StateMatrix, NX};

const NU: usize = 6;

/// `(A_d, B_d)` from a truncated series of the block matrix exponential
/// `exp([[A_c, B_c], [0, 0]] dt)`.
fn series_discretization(dt: f64) -> (StateMatrix, SMatrix<f64, NX, NU>) {
    let mut m = SMatrix::<f64, 18, 18>::zeros();
    for i in 0..6 {
        m[(i, 6 + i)] = dt; // q' = qd
        m[(6 + i, 12 + i)] = dt; // qd' = u
    }
    let mut term = SMatrix::<f64, 18, 18>::identity();
    let mut sum = term;
    for k in 1..=20 {
        term = term * m / k as f64;
        sum += term;
    }
    (
        sum.fixed_view::<NX, NX>(0, 0).into_owned(),
        sum.fixed_view::<NX, NU>(0, NX).into_owned(),
    )
}

#[test]
fn discretization_matches_series_oracle() {
    for dt in [0.001, 0.01, 0.05, 0.1, 0.5] {
        let model = discretize(dt).unwrap();
        let (a, b) = series_discretization(dt);
        assert!((model.a_d - a).amax() < 1e-12, "A_d at dt={dt}");
        assert!((model.b_d - b).amax() < 1e-12, "B_d at dt={dt}");
    }
}

#[test]
fn rejects_non_positive_steps() {
    for dt in [0.0, -0.05, f64::NAN, f64::INFINITY] {
        assert!(discretize(dt).is_err());
    }
}

#[test]
fn rollout_matches_constant_acceleration_kinematics() {
    let model = discretize(0.05).unwrap();
    let mut rng = rng(21);
    let x0 = JointState::new(
        uniform_vec6(&mut rng, -2.0, 2.0),
        uniform_vec6(&mut rng, -1.0, 1.0),
    );
    let u = uniform_vec6(&mut rng, -5.0, 5.0);
    let states = model.rollout(&x0, &vec![u; 8]);
    assert_eq!(states.len(), 9);
    for (k, x) in states.iter().enumerate() {
        let t = k as f64 * 0.05;
        let q = x0.q + x0.qd * t + u * (0.5 * t * t);
        let qd = x0.qd + u * t;
        assert!((x.q - q).amax() < 1e-12);
        assert!((x.qd - qd).amax() < 1e-12);
    }
}

#[test]
fn powers_of_the_transition_matrix() {
    let model = discretize(0.05).unwrap();
    let a3 = model.a_power(3);
    assert_eq!(model.a_power(0), StateMatrix::identity());
    assert!((a3 - model.a_d * model.a_d * model.a_d).amax() < 1e-15);
    assert!((a3[(0, 6)] - 0.15).abs() < 1e-15);
}

proptest! {
    #[test]
    fn step_is_affine(
        q in proptest::array::uniform6(-3.0f64..3.0),
        qd in proptest::array::uniform6(-3.0f64..3.0),
        u1 in proptest::array::uniform6(-10.0f64..10.0),
        u2 in proptest::array::uniform6(-10.0f64..10.0),
        dt in 0.001f64..0.2,
    ) {
        let model = discretize(dt).unwrap();
        let x = JointState::new(JointVector::from(q), JointVector::from(qd));
        let (u1, u2) = (JointVector::from(u1), JointVector::from(u2));
        let a = model.step(&x, &u1).to_vector();
        let b = model.step(&x, &u2).to_vector();
        let mid = model.step(&x, &((u1 + u2) * 0.5)).to_vector();
        prop_assert!((mid - (a + b) * 0.5).amax() < 1e-12);
        // velocity integrates exactly
        let next = model.step(&x, &u1);
        prop_assert!((next.qd - (x.qd + u1 * dt)).amax() < 1e-12);
    }
}
