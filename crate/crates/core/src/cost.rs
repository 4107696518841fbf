//! Roll-out cost: a terminal grasp-quality term plus a Riemann sum of
//! squared acceleration and a quadratic control penalty.
//!
//! ```text
//! J = Φ + Σ_t 1e-11 · (‖ẍ_t‖² + ½ θᵀ R θ) · dt,   R = r·I
//! Φ = 1 − n_fingers / max_fingers
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{grasp_success, ContactLog, GraspOutcome, Scene, N_FINGERS};
use crate::trajectory::{Trajectory, Vec6};

pub const STEP_COST_SCALE: f64 = 1e-11;
pub const DEFAULT_R_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub accel_term: f64,
    pub control_term: f64,
    pub terminal: f64,
    pub total: f64,
}

pub fn step_cost(accel: &Vec6, theta: &[f64], r_scale: f64, dt: f64) -> f64 {
    let (a, c) = step_terms(accel, squared_norm(theta), r_scale, dt);
    a + c
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn step_terms(accel: &Vec6, theta_sq: f64, r_scale: f64, dt: f64) -> (f64, f64) {
    let acc_sq: f64 = accel.iter().map(|a| a * a).sum();
    (
        STEP_COST_SCALE * acc_sq * dt,
        STEP_COST_SCALE * 0.5 * r_scale * theta_sq * dt,
    )
}

/// `1 − n/5` (computed as `(5 − n)/5`, exact at every step of 0.2), the grasp-quality term for a five-fingered hand.
pub fn terminal_cost(n_fingers: usize) -> Result<f64> {
    terminal_cost_for(n_fingers, N_FINGERS)
}

/// `1 − n/max_fingers` for objects that admit fewer fingers.
pub fn terminal_cost_for(n_fingers: usize, max_fingers: usize) -> Result<f64> {
    if n_fingers > max_fingers {
        return Err(Error::FingerCount(n_fingers, max_fingers));
    }
    Ok((max_fingers - n_fingers) as f64 / max_fingers as f64)
}

/// Cost of one executed roll-out. `n_fingers` must come from
/// [`grasp_success`] on the same log so both agree on the finger count.
pub fn rollout_cost(
    traj: &Trajectory,
    theta: &[f64],
    n_fingers: usize,
    max_fingers: usize,
    r_scale: f64,
) -> Result<CostBreakdown> {
    let theta_sq = squared_norm(theta);
    let dt = traj.dt();
    let (mut accel_term, mut control_term) = (0.0, 0.0);
    for s in traj.samples() {
        let (a, c) = step_terms(&s.acceleration, theta_sq, r_scale, dt);
        accel_term += a;
        control_term += c;
    }
    let terminal = terminal_cost_for(n_fingers, max_fingers)?;
    Ok(CostBreakdown {
        accel_term,
        control_term,
        terminal,
        total: terminal + accel_term + control_term,
    })
}

/// Per-step costs of a roll-out, one per trajectory sample.
pub fn step_costs(traj: &Trajectory, theta: &[f64], r_scale: f64) -> Vec<f64> {
    let theta_sq = squared_norm(theta);
    traj.samples()
        .iter()
        .map(|s| {
            let (a, c) = step_terms(&s.acceleration, theta_sq, r_scale, traj.dt());
            a + c
        })
        .collect()
}

/// Judges the grasp and prices the roll-out from one contact log.
pub fn evaluate(
    traj: &Trajectory,
    theta: &[f64],
    log: &ContactLog,
    scene: &Scene,
    r_scale: f64,
) -> Result<(GraspOutcome, CostBreakdown)> {
    let outcome = grasp_success(log, scene, traj.span());
    let cost = rollout_cost(
        traj,
        theta,
        outcome.n_fingers,
        scene.object.max_fingers,
        r_scale,
    )?;
    Ok((outcome, cost))
}
