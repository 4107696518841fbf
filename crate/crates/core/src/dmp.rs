//! Discrete dynamic movement primitives.
//!
//! Each pose dimension is an independent second order system driven towards
//! its goal, shaped by a forcing term that is a normalized mixture of
//! Gaussian basis functions over a decaying phase variable:
//!
//! ```text
//! τ ż = α_z (β_z (g − x) − z) + f(s)
//! τ ẋ = z
//! τ ṡ = −α_x s
//! f(s) = (Σ wᵢ ψᵢ(s) / Σ ψᵢ(s)) · s · (g − x₀)
//! ```
//!
//! Weights are learned in one shot from a single demonstration by weighted
//! regression of the forcing term on the basis activations (a joint least
//! squares fit by default, per-basis locally weighted fits on request).
//! Dimensions whose demonstrated start and goal
//! coincide use a unit amplitude in place of `g − x₀`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Sample, Trajectory, Vec6};

pub const DMP_DIMS: usize = 6;
pub const PAYLOAD_VERSION: u32 = 1;
pub const DEFAULT_N_BASIS: usize = 20;
/// Reconstructions run this many durations so the system settles on the goal.
pub const SETTLE_FACTOR: f64 = 1.5;
/// `|g − x₀|` below this is treated as a degenerate (constant) dimension.
pub const DEGENERATE_EPS: f64 = 1e-9;
const GLOBAL_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
}

impl Gains {
    /// Critically damped gains: `β_z = α_z / 4`, `α_x = α_z / 3`.
    pub fn critically_damped(alpha_z: f64) -> Self {
        Self {
            alpha_z,
            beta_z: alpha_z / 4.0,
            alpha_x: alpha_z / 3.0,
        }
    }

    pub fn with_alpha_x(alpha_z: f64, alpha_x: f64) -> Self {
        Self {
            alpha_z,
            beta_z: alpha_z / 4.0,
            alpha_x,
        }
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self::critically_damped(25.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimParams {
    pub weights: Vec<f64>,
    pub start: f64,
    pub goal: f64,
}

impl DimParams {
    /// True when the encoded start and goal coincide, in which case the
    /// forcing term uses unit amplitude.
    pub fn is_degenerate(&self) -> bool {
        (self.goal - self.start).abs() < DEGENERATE_EPS
    }
}

/// Parameters of the six DMPs encoding one end-effector trajectory. This is
/// the unit sent from the input side to the avatar side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub version: u32,
    pub duration: f64,
    pub n_basis: usize,
    pub gains: Gains,
    pub dims: Vec<DimParams>,
}

impl DmpParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() != DMP_DIMS {
            return Err(Error::Dmp(format!(
                "expected {DMP_DIMS} dimensions, got {}",
                self.dims.len()
            )));
        }
        if self.n_basis < 2 {
            return Err(Error::Dmp(format!(
                "n_basis must be >= 2, got {}",
                self.n_basis
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Dmp(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        let g = self.gains;
        if !(g.alpha_z > 0.0 && g.beta_z > 0.0 && g.alpha_x > 0.0)
            || !(g.alpha_z.is_finite() && g.alpha_x.is_finite())
        {
            return Err(Error::Dmp(format!("gains must be positive: {g:?}")));
        }
        if (g.beta_z - g.alpha_z / 4.0).abs() > 1e-12 * g.alpha_z {
            return Err(Error::Dmp(format!(
                "beta_z {} is not alpha_z / 4 = {}",
                g.beta_z,
                g.alpha_z / 4.0
            )));
        }
        for (d, dim) in self.dims.iter().enumerate() {
            if dim.weights.len() != self.n_basis {
                return Err(Error::Dmp(format!(
                    "dimension {d} has {} weights, expected {}",
                    dim.weights.len(),
                    self.n_basis
                )));
            }
            if !(dim.start.is_finite() && dim.goal.is_finite())
                || dim.weights.iter().any(|w| !w.is_finite())
            {
                return Err(Error::NonFinite("DMP parameters"));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Vec6 {
        std::array::from_fn(|d| self.dims[d].start)
    }

    pub fn goal(&self) -> Vec6 {
        std::array::from_fn(|d| self.dims[d].goal)
    }

    /// All weights concatenated dimension by dimension.
    pub fn theta(&self) -> Vec<f64> {
        self.dims
            .iter()
            .flat_map(|d| d.weights.iter().copied())
            .collect()
    }

    /// Copy with the concatenated weight vector replaced.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_basis * DMP_DIMS {
            return Err(Error::Dmp(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.n_basis * DMP_DIMS
            )));
        }
        let mut out = self.clone();
        for (dim, chunk) in out.dims.iter_mut().zip(theta.chunks(self.n_basis)) {
            dim.weights.copy_from_slice(chunk);
        }
        Ok(out)
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.n_basis, self.gains.alpha_x)
    }

    /// Forcing amplitude used when reconstructing dimension `d` between the
    /// given start and goal.
    pub fn amplitude(&self, d: usize, start: f64, goal: f64) -> f64 {
        if self.dims[d].is_degenerate() {
            1.0
        } else {
            goal - start
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("DmpParams always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text).map_err(|e| Error::Payload(e.to_string()))?;
        if params.version != PAYLOAD_VERSION {
            return Err(Error::Payload(format!(
                "unsupported payload version {}",
                params.version
            )));
        }
        params.validate()?;
        Ok(params)
    }
}

/// Gaussian basis functions placed at equal time intervals, which puts them
/// on a logarithmic schedule in phase. Each width makes a basis fall to 0.5
/// at its neighbour's center.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    centers: Vec<f64>,
    widths: Vec<f64>,
    alpha_x: f64,
}

impl Basis {
    pub fn new(n: usize, alpha_x: f64) -> Self {
        let centers: Vec<f64> = (0..n)
            .map(|i| (-alpha_x * i as f64 / (n - 1) as f64).exp())
            .collect();
        let mut widths: Vec<f64> = centers
            .windows(2)
            .map(|c| std::f64::consts::LN_2 / (c[1] - c[0]).powi(2))
            .collect();
        widths.push(*widths.last().expect("n >= 2"));
        Self {
            centers,
            widths,
            alpha_x,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Phase at time `t` for a movement of duration `tau`.
    pub fn phase(&self, t: f64, tau: f64) -> f64 {
        (-self.alpha_x * t / tau).exp()
    }

    pub fn activations(&self, s: f64) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.widths)
            .map(|(c, h)| (-h * (s - c) * (s - c)).exp())
            .collect()
    }

    /// Normalized activations multiplied by the phase: the per-weight
    /// sensitivity of the forcing term for unit amplitude.
    pub fn features(&self, s: f64) -> Vec<f64> {
        let psi = self.activations(s);
        let total: f64 = psi.iter().sum();
        if total <= f64::MIN_POSITIVE {
            return vec![0.0; psi.len()];
        }
        psi.into_iter().map(|p| p / total * s).collect()
    }

    /// `Σ wᵢ ψᵢ(s) / Σ ψᵢ(s) · s`
    pub fn shape(&self, weights: &[f64], s: f64) -> f64 {
        let psi = self.activations(s);
        let total: f64 = psi.iter().sum();
        if total <= f64::MIN_POSITIVE {
            return 0.0;
        }
        psi.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>() / total * s
    }
}

/// How forcing-term weights are fitted to a demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    /// One independent weighted fit per basis function.
    LocallyWeighted,
    /// Joint weighted least squares over the normalized basis mixture.
    #[default]
    Global,
}

/// Learns DMP parameters from one demonstration.
pub fn encode_demonstration(demo: &Trajectory, n_basis: usize, gains: Gains) -> Result<DmpParams> {
    encode_with(demo, n_basis, gains, Regression::default())
}

pub fn encode_with(
    demo: &Trajectory,
    n_basis: usize,
    gains: Gains,
    regression: Regression,
) -> Result<DmpParams> {
    if n_basis < 2 {
        return Err(Error::Dmp(format!("n_basis must be >= 2, got {n_basis}")));
    }
    let tau = demo.span();
    let t0 = demo.first().t;
    let basis = Basis::new(n_basis, gains.alpha_x);
    let start = demo.first().pose;
    let goal = demo.last().pose;

    let phases: Vec<f64> = demo
        .samples()
        .iter()
        .map(|s| basis.phase(s.t - t0, tau))
        .collect();
    let activations: Vec<Vec<f64>> = phases.iter().map(|&s| basis.activations(s)).collect();

    let features: Vec<Vec<f64>> = phases.iter().map(|&s| basis.features(s)).collect();
    let dims = (0..DMP_DIMS)
        .map(|d| {
            let amplitude = if (goal[d] - start[d]).abs() < DEGENERATE_EPS {
                1.0
            } else {
                goal[d] - start[d]
            };
            let targets = forcing_targets(demo, d, tau, goal[d], gains);
            let weights = match regression {
                Regression::LocallyWeighted => {
                    locally_weighted(&phases, &activations, &targets, amplitude, n_basis)
                }
                Regression::Global => global_least_squares(&features, &targets, amplitude, n_basis),
            };
            DimParams {
                weights,
                start: start[d],
                goal: goal[d],
            }
        })
        .collect();

    let params = DmpParams {
        version: PAYLOAD_VERSION,
        duration: tau,
        n_basis,
        gains,
        dims,
    };
    params.validate()?;
    Ok(params)
}

/// Forcing values that make the Euler step used by [`integrate`] retrace
/// the demonstration exactly at its own sampling interval: velocities and
/// accelerations are taken as forward differences, so the only remaining
/// reconstruction error is the fit of the basis mixture.
fn forcing_targets(demo: &Trajectory, d: usize, tau: f64, goal: f64, gains: Gains) -> Vec<f64> {
    let dt = demo.dt();
    let x: Vec<f64> = demo.samples().iter().map(|s| s.pose[d]).collect();
    let n = x.len();
    // z_k = τ (x_{k+1} − x_k)/dt, held at the demonstrated end velocity.
    let z: Vec<f64> = (0..n)
        .map(|k| {
            if k + 1 < n {
                tau * (x[k + 1] - x[k]) / dt
            } else {
                tau * demo.last().velocity[d]
            }
        })
        .collect();
    (0..n)
        .map(|k| {
            let zdot = if k + 1 < n {
                (z[k + 1] - z[k]) / dt
            } else {
                tau * demo.last().acceleration[d]
            };
            tau * zdot - gains.alpha_z * (gains.beta_z * (goal - x[k]) - z[k])
        })
        .collect()
}

fn locally_weighted(
    phases: &[f64],
    activations: &[Vec<f64>],
    targets: &[f64],
    amplitude: f64,
    n_basis: usize,
) -> Vec<f64> {
    let mut num = vec![0.0; n_basis];
    let mut den = vec![0.0; n_basis];
    for ((&s, psi), &target) in phases.iter().zip(activations).zip(targets) {
        let xi = s * amplitude;
        for i in 0..n_basis {
            num[i] += psi[i] * xi * target;
            den[i] += psi[i] * xi * xi;
        }
    }
    num.iter()
        .zip(&den)
        .map(|(n, d)| if *d > 1e-300 { n / d } else { 0.0 })
        .collect()
}

/// Ridge-stabilized normal equations; the ridge is relative to the mean
/// diagonal so late, weakly excited basis functions stay bounded.
fn global_least_squares(
    features: &[Vec<f64>],
    targets: &[f64],
    amplitude: f64,
    n_basis: usize,
) -> Vec<f64> {
    let mut gram = DMatrix::<f64>::zeros(n_basis, n_basis);
    let mut rhs = DVector::<f64>::zeros(n_basis);
    for (phi, &target) in features.iter().zip(targets) {
        for i in 0..n_basis {
            let a = phi[i] * amplitude;
            rhs[i] += a * target;
            for j in 0..n_basis {
                gram[(i, j)] += a * phi[j] * amplitude;
            }
        }
    }
    let scale = gram.trace() / n_basis as f64;
    if scale <= f64::MIN_POSITIVE {
        return vec![0.0; n_basis];
    }
    for i in 0..n_basis {
        gram[(i, i)] += GLOBAL_RIDGE * scale;
    }
    match gram.cholesky() {
        Some(chol) => chol.solve(&rhs).iter().copied().collect(),
        None => vec![0.0; n_basis],
    }
}

/// Rolls the DMP out from rest at `new_start` towards `new_goal` for
/// [`SETTLE_FACTOR`] times the encoded duration.
pub fn reconstruct(
    params: &DmpParams,
    new_start: Vec6,
    new_goal: Vec6,
    dt: f64,
) -> Result<Trajectory> {
    reconstruct_from_state(params, new_start, [0.0; 6], new_goal, dt)
}

/// As [`reconstruct`], starting with the given velocity.
pub fn reconstruct_from_state(
    params: &DmpParams,
    new_start: Vec6,
    start_velocity: Vec6,
    new_goal: Vec6,
    dt: f64,
) -> Result<Trajectory> {
    let steps = horizon_steps(params, dt)?;
    integrate(
        params,
        new_start,
        start_velocity,
        new_goal,
        dt,
        steps,
        |_, _| 0.0,
    )
}

/// Number of Euler steps `reconstruct` takes at `dt`.
pub fn horizon_steps(params: &DmpParams, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Dmp(format!("dt must be positive, got {dt}")));
    }
    if dt > params.duration / 10.0 {
        return Err(Error::Dmp(format!(
            "dt {dt} exceeds a tenth of the duration {}",
            params.duration
        )));
    }
    Ok((SETTLE_FACTOR * params.duration / dt).round() as usize)
}

/// Explicit Euler integration of the transformation systems.
///
/// `extra_forcing(step, dim)` is added to the forcing term of `dim` at each
/// step; it carries per-step exploration noise during learning.
pub fn integrate(
    params: &DmpParams,
    start: Vec6,
    start_velocity: Vec6,
    goal: Vec6,
    dt: f64,
    steps: usize,
    mut extra_forcing: impl FnMut(usize, usize) -> f64,
) -> Result<Trajectory> {
    params.validate()?;
    let finite = |v: &Vec6| v.iter().all(|x| x.is_finite());
    if !(finite(&start) && finite(&goal) && finite(&start_velocity) && dt.is_finite()) {
        return Err(Error::NonFinite("reconstruction start/goal/dt"));
    }
    if dt <= 0.0 {
        return Err(Error::Dmp(format!("dt must be positive, got {dt}")));
    }
    let tau = params.duration;
    let g = params.gains;
    let basis = params.basis();
    let amplitude: Vec6 = std::array::from_fn(|d| params.amplitude(d, start[d], goal[d]));

    let mut x = start;
    let mut z: Vec6 = std::array::from_fn(|d| tau * start_velocity[d]);
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let s = basis.phase(t, tau);
        let psi = basis.activations(s);
        let total: f64 = psi.iter().sum();
        let mut sample = Sample {
            t,
            pose: x,
            velocity: [0.0; 6],
            acceleration: [0.0; 6],
        };
        let mut zdot = [0.0; 6];
        for d in 0..DMP_DIMS {
            let shaped = if total > f64::MIN_POSITIVE {
                psi.iter()
                    .zip(&params.dims[d].weights)
                    .map(|(p, w)| p * w)
                    .sum::<f64>()
                    / total
                    * s
            } else {
                0.0
            };
            let forcing = shaped * amplitude[d] + extra_forcing(k, d);
            zdot[d] = (g.alpha_z * (g.beta_z * (goal[d] - x[d]) - z[d]) + forcing) / tau;
            sample.velocity[d] = z[d] / tau;
            sample.acceleration[d] = zdot[d] / tau;
        }
        samples.push(sample);
        for d in 0..DMP_DIMS {
            x[d] += dt * z[d] / tau;
            z[d] += dt * zdot[d];
        }
    }
    Trajectory::new(samples, dt)
}
