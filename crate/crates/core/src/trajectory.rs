//! Time-indexed end-effector trajectories.
//!
//! A pose is `[x, y, z, roll, pitch, yaw]` with positions in meters and
//! angles in radians. Velocities and accelerations use the same layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec6 = [f64; 6];

/// Relative tolerance used to check uniform spacing of sample times.
const SPACING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub pose: Vec6,
    pub velocity: Vec6,
    pub acceleration: Vec6,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<Sample>,
    dt: f64,
}

impl Trajectory {
    /// Validates uniform spacing, minimum length and finiteness.
    pub fn new(samples: Vec<Sample>, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Trajectory(format!("dt must be positive, got {dt}")));
        }
        if samples.len() < 3 {
            return Err(Error::Trajectory(format!(
                "need at least 3 samples, got {}",
                samples.len()
            )));
        }
        for s in &samples {
            let finite = s.t.is_finite()
                && s.pose.iter().all(|v| v.is_finite())
                && s.velocity.iter().all(|v| v.is_finite())
                && s.acceleration.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite("trajectory sample"));
            }
        }
        for (k, w) in samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) || (step - dt).abs() > SPACING_TOL * dt {
                return Err(Error::Trajectory(format!(
                    "sample {} spacing {step} differs from dt {dt}",
                    k + 1
                )));
            }
        }
        Ok(Self { samples, dt })
    }

    /// Builds a trajectory from uniformly sampled poses, deriving velocity
    /// and acceleration by central differences (second order one-sided
    /// differences at the ends).
    pub fn from_positions(poses: &[Vec6], dt: f64, t0: f64) -> Result<Self> {
        let n = poses.len();
        if n < 3 {
            return Err(Error::Trajectory(format!(
                "need at least 3 samples, got {n}"
            )));
        }
        let vel = differentiate(poses, dt);
        let acc = differentiate(&vel, dt);
        let samples = (0..n)
            .map(|k| Sample {
                t: t0 + k as f64 * dt,
                pose: poses[k],
                velocity: vel[k],
                acceleration: acc[k],
            })
            .collect();
        Self::new(samples, dt)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    /// Time span between first and last sample.
    pub fn span(&self) -> f64 {
        self.last().t - self.first().t
    }

    /// Values of one pose component over time.
    pub fn component(&self, dim: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.pose[dim]).collect()
    }

    /// Keeps the first `len` samples (at least 3).
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.clamp(3, self.samples.len());
        Self {
            samples: self.samples[..len].to_vec(),
            dt: self.dt,
        }
    }
}

fn differentiate(values: &[Vec6], dt: f64) -> Vec<Vec6> {
    let n = values.len();
    let mut out = vec![[0.0; 6]; n];
    for d in 0..6 {
        out[0][d] = (-3.0 * values[0][d] + 4.0 * values[1][d] - values[2][d]) / (2.0 * dt);
        out[n - 1][d] =
            (3.0 * values[n - 1][d] - 4.0 * values[n - 2][d] + values[n - 3][d]) / (2.0 * dt);
        for k in 1..n - 1 {
            out[k][d] = (values[k + 1][d] - values[k - 1][d]) / (2.0 * dt);
        }
    }
    out
}

/// Root-mean-square distance between the position parts (x, y, z) of two
/// trajectories over their common prefix.
pub fn position_rmse(a: &Trajectory, b: &Trajectory) -> f64 {
    let n = a.len().min(b.len());
    let sum: f64 = a.samples[..n]
        .iter()
        .zip(&b.samples[..n])
        .map(|(p, q)| (0..3).map(|d| (p.pose[d] - q.pose[d]).powi(2)).sum::<f64>())
        .sum();
    (sum / n as f64).sqrt()
}

/// Minimum-jerk profile `10u³ − 15u⁴ + 6u⁵` and its first two derivatives
/// with respect to normalized time `u ∈ [0, 1]`.
pub fn min_jerk_profile(u: f64) -> (f64, f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let u2 = u * u;
    let u3 = u2 * u;
    (
        u3 * (10.0 - 15.0 * u + 6.0 * u2),
        30.0 * u2 * (1.0 - u) * (1.0 - u),
        60.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
    )
}

/// Minimum-jerk point-to-point motion sampled at `dt` over `duration`,
/// with analytic velocities and accelerations.
pub fn min_jerk(start: Vec6, goal: Vec6, duration: f64, dt: f64) -> Result<Trajectory> {
    if !(duration > 0.0 && dt > 0.0 && duration.is_finite() && dt.is_finite()) {
        return Err(Error::Trajectory(format!(
            "duration {duration} and dt {dt} must be positive"
        )));
    }
    let steps = (duration / dt).round() as usize;
    let samples = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            let (p, v, a) = min_jerk_profile(t / duration);
            let mut s = Sample {
                t,
                pose: [0.0; 6],
                velocity: [0.0; 6],
                acceleration: [0.0; 6],
            };
            for d in 0..6 {
                let delta = goal[d] - start[d];
                s.pose[d] = start[d] + delta * p;
                s.velocity[d] = delta * v / duration;
                s.acceleration[d] = delta * a / (duration * duration);
            }
            s
        })
        .collect();
    Trajectory::new(samples, dt)
}
