//! Receding-horizon teleoperation planner for six-joint arms carrying an
//! open liquid container.
//!
//! The planner tracks an operator-commanded end-effector pose while keeping
//! the acceleration felt by the container aligned with its upright axis, so
//! the liquid does not slosh. Each control cycle predicts the operator's
//! motion over a short horizon, solves a nonlinear optimal control problem
//! over joint accelerations, and hands the resulting joint trajectory to the
//! arm.

pub mod autodiff;
pub mod config;
pub mod constraints;
pub mod cost;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod ocp;
pub mod recording;
pub mod reference;
pub mod runner;

pub use error::{Error, Result};
