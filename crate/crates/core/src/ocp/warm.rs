//! Shifting the previous solution to the current time.

use crate::model::{ControlInput, JointState};

use super::{InitialGuess, OcpProblem, SolveResult};

/// Previous solution and the time its node `0` corresponds to.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub result: SolveResult,
    pub start_time: f64,
}

/// Output of [`shift_warm_start`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedStart {
    /// Estimate of the current state.
    pub x0: JointState,
    /// Guessed states `x_0 .. x_N` on the new time grid.
    pub states: Vec<JointState>,
    pub guess: InitialGuess,
    /// The previous solution was too old (or incompatible) to be reused.
    pub cold: bool,
}

/// Splits `t / dt` into a node index and a fraction, snapping values within
/// rounding distance of a node onto it.
fn locate(t: f64, dt: f64) -> (usize, f64) {
    let s = t / dt;
    let k = (s + 1e-9).floor().max(0.0);
    let frac = (s - k).max(0.0);
    (k as usize, if frac < 1e-9 { 0.0 } else { frac })
}

fn state_at(states: &[JointState], t: f64, dt: f64) -> JointState {
    let last = states.len() - 1;
    let (k, frac) = locate(t, dt);
    if k >= last {
        return states[last];
    }
    if frac == 0.0 {
        states[k]
    } else {
        states[k].lerp(&states[k + 1], frac)
    }
}

fn control_at(controls: &[ControlInput], t: f64, dt: f64) -> ControlInput {
    let (k, _) = locate(t, dt);
    controls.get(k).copied().unwrap_or_else(ControlInput::zeros)
}

/// Interpolates the previous plan at `elapsed` seconds after its start and
/// shifts it onto the new grid. The tail beyond the old horizon holds the
/// last state with zero control. A plan older than its horizon (or negative
/// `elapsed`) yields a cold start at rest at the plan's final joint angles.
pub fn shift_warm_start(warm: &WarmStart, elapsed: f64, prob: &OcpProblem) -> ShiftedStart {
    let n = prob.horizon();
    let dt = prob.dt();
    let prev = &warm.result;
    let span = prev.horizon() as f64 * dt;
    let compatible = !prev.states.is_empty() && prev.states.len() == prev.controls.len() + 1;
    if !compatible || !(elapsed >= 0.0 && elapsed <= span + 1e-9) {
        let q = prev.states.last().map(|x| x.q).unwrap_or_default();
        return cold_start(&JointState::at_rest(q), n);
    }
    let x0 = state_at(&prev.states, elapsed, dt);
    let states = (0..=n)
        .map(|k| state_at(&prev.states, elapsed + k as f64 * dt, dt))
        .collect();
    let controls = (0..n)
        .map(|k| control_at(&prev.controls, elapsed + k as f64 * dt, dt))
        .collect();
    ShiftedStart {
        x0,
        states,
        guess: InitialGuess { controls },
        cold: false,
    }
}

/// `X = x0` repeated, `U = 0`.
pub(crate) fn cold_start(x0: &JointState, horizon: usize) -> ShiftedStart {
    ShiftedStart {
        x0: *x0,
        states: vec![*x0; horizon + 1],
        guess: InitialGuess {
            controls: vec![ControlInput::zeros(); horizon],
        },
        cold: true,
    }
}
