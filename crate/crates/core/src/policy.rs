//! Episodic policy search over DMP weights (and optionally the goal).
//!
//! PI² and PoWER perturb the weight vector once per roll-out and average the
//! perturbations with cost-dependent weights. eNAC perturbs the forcing
//! output at every step and fits a natural gradient by regressing roll-out
//! costs on the summed log-likelihood gradients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cost::{self, DEFAULT_R_SCALE};
use crate::dmp::{self, DmpParams, DMP_DIMS};
use crate::error::{Error, Result};
use crate::sim::{execute, Scene};
use crate::trajectory::{Trajectory, Vec6};

pub const DECAY_FLOOR: f64 = 0.1;
pub const DEFAULT_PI2_H: f64 = 10.0;
pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_ENAC_ALPHA: f64 = 0.2;
pub const ELITES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pi2,
    Power,
    Enac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Pi2, Algorithm::Power, Algorithm::Enac];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pi2 => "pi2",
            Algorithm::Power => "power",
            Algorithm::Enac => "enac",
        }
    }

    /// Initial exploration magnitude per algorithm: parameter-space standard
    /// deviation for PI² and PoWER, action-space standard deviation (meters)
    /// for eNAC.
    pub fn default_sigma(&self) -> f64 {
        match self {
            Algorithm::Pi2 | Algorithm::Power => 300.0,
            Algorithm::Enac => 0.01,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pi2" => Ok(Algorithm::Pi2),
            "power" => Ok(Algorithm::Power),
            "enac" => Ok(Algorithm::Enac),
            other => Err(Error::Policy(format!(
                "unknown algorithm {other:?}; expected pi2, power or enac"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `max((update_max − i) / update_max, 0.1)`
pub fn decay_factor(i: usize, update_max: usize) -> f64 {
    let m = update_max.max(1) as f64;
    ((m - i as f64) / m).max(DECAY_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub sigma_init: f64,
    /// Standard deviation of goal perturbations, meters.
    pub goal_sigma: f64,
    pub update_max: usize,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DECAY_FLOOR
}

impl ExplorationSchedule {
    pub fn new(sigma_init: f64, goal_sigma: f64, update_max: usize) -> Self {
        Self {
            sigma_init,
            goal_sigma,
            update_max,
            floor: DECAY_FLOOR,
        }
    }

    pub fn for_algorithm(algo: Algorithm, update_max: usize) -> Self {
        Self::new(algo.default_sigma(), 0.04, update_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_init.is_finite() && self.sigma_init > 0.0) {
            return Err(Error::invariant(
                "ExplorationSchedule",
                "sigma_init must be positive",
            ));
        }
        if !(self.goal_sigma.is_finite() && self.goal_sigma >= 0.0) {
            return Err(Error::invariant(
                "ExplorationSchedule",
                "goal_sigma must be non-negative",
            ));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(Error::invariant(
                "ExplorationSchedule",
                "floor must lie in (0, 1]",
            ));
        }
        Ok(())
    }

    fn factor(&self, i: usize) -> f64 {
        let m = self.update_max.max(1) as f64;
        ((m - i as f64) / m).max(self.floor)
    }
}

/// `γ(i) · sigma_init`
pub fn scaled_sigma(schedule: &ExplorationSchedule, i: usize) -> f64 {
    schedule.factor(i) * schedule.sigma_init
}

/// Scaled goal exploration, decayed with the same factor.
pub fn scaled_goal_sigma(schedule: &ExplorationSchedule, i: usize) -> f64 {
    schedule.factor(i) * schedule.goal_sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub theta: Vec<f64>,
    pub goal: Vec6,
}

impl Policy {
    pub fn from_params(params: &DmpParams) -> Self {
        Self {
            theta: params.theta(),
            goal: params.goal(),
        }
    }

    pub fn validate(&self, n_basis: usize) -> Result<()> {
        if self.theta.len() != DMP_DIMS * n_basis {
            return Err(Error::invariant(
                "Policy",
                format!(
                    "theta has {} entries, expected {}",
                    self.theta.len(),
                    DMP_DIMS * n_basis
                ),
            ));
        }
        if self.theta.iter().chain(&self.goal).any(|v| !v.is_finite()) {
            return Err(Error::invariant("Policy", "non-finite entry"));
        }
        Ok(())
    }
}

/// Adds `ε ~ N(0, covariance · I)` to theta.
pub fn perturb_parameters<R: Rng + ?Sized>(
    policy: &Policy,
    covariance: f64,
    rng: &mut R,
) -> (Policy, Vec<f64>) {
    let std = covariance.max(0.0).sqrt();
    let epsilon: Vec<f64> = policy
        .theta
        .iter()
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let theta = policy
        .theta
        .iter()
        .zip(&epsilon)
        .map(|(t, e)| t + e)
        .collect();
    (
        Policy {
            theta,
            goal: policy.goal,
        },
        epsilon,
    )
}

/// Perturbs the position part of a goal with standard deviation
/// `goal_sigma`; orientation passes through untouched.
pub fn perturb_goal<R: Rng + ?Sized>(goal: &Vec6, goal_sigma: f64, rng: &mut R) -> (Vec6, Vec6) {
    let mut eps = [0.0; 6];
    let mut out = *goal;
    for d in 0..3 {
        eps[d] = goal_sigma.max(0.0) * rng.sample::<f64, _>(StandardNormal);
        out[d] = goal[d] + eps[d];
    }
    (out, eps)
}

/// Parameters and cost of one evaluated perturbation, as seen by PI² and
/// PoWER. Perturbations are taken relative to the policy being updated, so
/// retained elites stay valid after the mean moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub theta: Vec<f64>,
    pub goal: Vec6,
    pub cost: f64,
}

/// Probability weights `exp(−h (J − J_min)/(J_max − J_min))`, normalized.
/// Non-finite costs get weight zero; equal costs give uniform weights.
pub fn pi2_weights(costs: &[f64], h: f64) -> Vec<f64> {
    let finite = costs.iter().copied().filter(|c| c.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return vec![0.0; costs.len()];
    }
    let range = hi - lo;
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if !c.is_finite() {
                0.0
            } else if range > 0.0 {
                (-h * (c - lo) / range).exp()
            } else {
                1.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

fn weighted_step(current: &Policy, pool: &[Candidate], weights: &[f64]) -> Policy {
    let mut next = current.clone();
    for (c, &p) in pool.iter().zip(weights) {
        if p == 0.0 {
            continue;
        }
        for (t, (ct, cur)) in next
            .theta
            .iter_mut()
            .zip(c.theta.iter().zip(&current.theta))
        {
            *t += p * (ct - cur);
        }
        for d in 0..DMP_DIMS {
            next.goal[d] += p * (c.goal[d] - current.goal[d]);
        }
    }
    next
}

pub fn pi2_update(current: &Policy, pool: &[Candidate], h: f64) -> Result<Policy> {
    if pool.is_empty() {
        return Err(Error::Policy(
            "PI² update needs at least one roll-out".into(),
        ));
    }
    let costs: Vec<f64> = pool.iter().map(|c| c.cost).collect();
    if costs.iter().all(|c| !c.is_finite()) {
        return Err(Error::Policy("PI² update needs a finite cost".into()));
    }
    Ok(weighted_step(current, pool, &pi2_weights(&costs, h)))
}

/// Strictly positive returns `exp(−J)`.
pub fn power_returns(costs: &[f64]) -> Vec<f64> {
    costs.iter().map(|c| (-c).exp()).collect()
}

/// Return-weighted average of the perturbations. Returns are shifted by the
/// best cost before exponentiating, which leaves the normalized weights
/// unchanged and keeps them representable for large costs.
pub fn power_update(current: &Policy, pool: &[Candidate]) -> Result<Policy> {
    if pool.is_empty() {
        return Err(Error::Policy(
            "PoWER update needs at least one roll-out".into(),
        ));
    }
    if pool.iter().any(|c| !c.cost.is_finite()) {
        return Err(Error::Policy("PoWER update needs finite costs".into()));
    }
    let lo = pool.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let returns: Vec<f64> = pool.iter().map(|c| (-(c.cost - lo)).exp()).collect();
    let total: f64 = returns.iter().sum();
    let weights: Vec<f64> = returns.iter().map(|r| r / total).collect();
    Ok(weighted_step(current, pool, &weights))
}

/// One eNAC sample: summed log-likelihood gradient over the episode and the
/// episode cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EnacSample {
    pub score: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGradient {
    pub w: Vec<f64>,
    pub baseline: f64,
    /// Set when the regression was rank deficient and only the ridge term
    /// made it solvable.
    pub singular: bool,
}

/// Solves `[ψ_k, 1] · [w; b] ≈ −J_k` in the ridge-regularized least squares
/// sense.
pub fn enac_gradient(samples: &[EnacSample], ridge: f64) -> Result<NaturalGradient> {
    let Some(first) = samples.first() else {
        return Err(Error::Policy("eNAC needs at least one roll-out".into()));
    };
    let n = first.score.len();
    if samples.iter().any(|s| s.score.len() != n) {
        return Err(Error::Policy(
            "eNAC scores have inconsistent lengths".into(),
        ));
    }
    let rows = samples.len();
    let mut a = DMatrix::<f64>::zeros(rows, n + 1);
    let mut b = DVector::<f64>::zeros(rows);
    for (k, s) in samples.iter().enumerate() {
        for j in 0..n {
            a[(k, j)] = s.score[j];
        }
        a[(k, n)] = 1.0;
        b[k] = -s.cost;
    }
    let singular = rows < n + 1 || a.clone().svd(false, false).rank(1e-10) < n + 1;
    let mut normal = a.transpose() * &a;
    for i in 0..=n {
        normal[(i, i)] += ridge;
    }
    let rhs = a.transpose() * b;
    let x = normal
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| normal.lu().solve(&rhs))
        .ok_or_else(|| Error::Policy("eNAC regression could not be solved".into()))?;
    Ok(NaturalGradient {
        w: x.iter().take(n).copied().collect(),
        baseline: x[n],
        singular,
    })
}

/// `θ ← θ + α w`
pub fn enac_update(
    current: &Policy,
    samples: &[EnacSample],
    alpha: f64,
    ridge: f64,
) -> Result<(Policy, NaturalGradient)> {
    let grad = enac_gradient(samples, ridge)?;
    let mut next = current.clone();
    if alpha != 0.0 {
        for (t, w) in next.theta.iter_mut().zip(&grad.w) {
            *t += alpha * w;
        }
    }
    Ok((next, grad))
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Weights the episode ran with (after any parameter perturbation).
    pub theta: Vec<f64>,
    pub goal: Vec6,
    pub epsilon: Vec<f64>,
    pub goal_epsilon: Vec6,
    /// Per-step action noise (meters of attractor offset) for eNAC.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub action_noise: Vec<Vec6>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    pub step_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
    pub n_fingers: usize,
    pub success: bool,
}

impl Rollout {
    fn candidate(&self) -> Candidate {
        Candidate {
            theta: self.theta.clone(),
            goal: self.goal,
            cost: self.total_cost,
        }
    }
}

/// Per-update record streamed as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub update: usize,
    pub algo: Algorithm,
    pub sigma: f64,
    /// Fresh roll-outs followed by the elites that entered the update.
    pub costs: Vec<f64>,
    pub best_cost: f64,
    pub n_fingers_best: usize,
    pub success: bool,
    /// Noise-free cost of the policy after this update.
    pub policy_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub update_max: usize,
    pub rollouts_per_update: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            update_max: 100,
            rollouts_per_update: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub algo: Algorithm,
    pub schedule: ExplorationSchedule,
    pub budget: Budget,
    #[serde(default)]
    pub goal_learning: bool,
    #[serde(default = "yes")]
    pub stop_on_success: bool,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_r_scale")]
    pub r_scale: f64,
    #[serde(default = "default_sim_dt")]
    pub sim_dt: f64,
}

fn yes() -> bool {
    true
}
fn default_h() -> f64 {
    DEFAULT_PI2_H
}
fn default_alpha() -> f64 {
    DEFAULT_ENAC_ALPHA
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}
fn default_r_scale() -> f64 {
    DEFAULT_R_SCALE
}
fn default_sim_dt() -> f64 {
    0.01
}

impl LearnConfig {
    pub fn new(algo: Algorithm) -> Self {
        let budget = Budget::default();
        Self {
            algo,
            schedule: ExplorationSchedule::for_algorithm(algo, budget.update_max),
            budget,
            goal_learning: false,
            stop_on_success: true,
            h: DEFAULT_PI2_H,
            alpha: DEFAULT_ENAC_ALPHA,
            ridge: DEFAULT_RIDGE,
            r_scale: DEFAULT_R_SCALE,
            sim_dt: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.budget.rollouts_per_update == 0 {
            return Err(Error::invariant(
                "Budget",
                "rollouts_per_update must be at least 1",
            ));
        }
        if !(self.sim_dt > 0.0
            && self.h > 0.0
            && self.ridge >= 0.0
            && self.r_scale >= 0.0
            && self.alpha >= 0.0)
        {
            return Err(Error::invariant(
                "LearnConfig",
                "sim_dt, h, ridge, r_scale and alpha must be valid",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    pub current: Policy,
    pub update_index: usize,
    pub elites: Vec<Rollout>,
    pub rng_seed: u64,
    pub history: Vec<EpisodeReport>,
    pub initial_cost: f64,
    pub success: bool,
    /// The roll-out that passed the grasp check in simulation, if any.
    pub deployed: Option<Rollout>,
}

impl LearningState {
    /// Running minimum of the cost observed up to each update.
    pub fn best_cost_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.history.iter().map(|r| r.best_cost))
            .collect()
    }

    /// Noise-free policy cost before learning and after each update.
    pub fn policy_cost_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.history.iter().map(|r| r.policy_cost))
            .collect()
    }
}

/// Everything needed to turn policy parameters into an evaluated roll-out.
pub struct Evaluator<'a> {
    pub template: &'a DmpParams,
    pub start: Vec6,
    pub scene: &'a Scene,
    pub dt: f64,
    pub r_scale: f64,
}

impl Evaluator<'_> {
    fn steps(&self) -> Result<usize> {
        dmp::horizon_steps(self.template, self.dt)
    }

    /// Forcing sensitivity of each weight at step `k`, per unit of attractor
    /// offset in meters.
    fn action_features(&self, goal: &Vec6) -> Result<Vec<[Vec<f64>; DMP_DIMS]>> {
        let basis = self.template.basis();
        let g = self.template.gains;
        let gain = g.alpha_z * g.beta_z;
        let steps = self.steps()?;
        Ok((0..=steps)
            .map(|k| {
                let f = basis.features(basis.phase(k as f64 * self.dt, self.template.duration));
                std::array::from_fn(|d| {
                    let amp = self.template.amplitude(d, self.start[d], goal[d]);
                    f.iter().map(|v| v * amp / gain).collect()
                })
            })
            .collect())
    }

    pub fn run(&self, theta: &[f64], goal: Vec6, action_noise: &[Vec6]) -> Result<Rollout> {
        let params = self.template.with_theta(theta)?;
        let gain = params.gains.alpha_z * params.gains.beta_z;
        let steps = self.steps()?;
        let traj = dmp::integrate(
            &params,
            self.start,
            [0.0; 6],
            goal,
            self.dt,
            steps,
            |k, d| action_noise.get(k).map_or(0.0, |a| gain * a[d]),
        )?;
        let log = execute(&traj, self.scene);
        let (outcome, breakdown) = cost::evaluate(&traj, theta, &log, self.scene, self.r_scale)?;
        Ok(Rollout {
            theta: theta.to_vec(),
            goal,
            epsilon: vec![0.0; theta.len()],
            goal_epsilon: [0.0; 6],
            action_noise: action_noise.to_vec(),
            step_costs: cost::step_costs(&traj, theta, self.r_scale),
            trajectory: Some(traj),
            terminal_cost: breakdown.terminal,
            total_cost: breakdown.total,
            n_fingers: outcome.n_fingers,
            success: outcome.success,
        })
    }
}

/// Seed of roll-out `k` in update `i`; independent of evaluation order.
fn rollout_rng(seed: u64, update: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((update as u64) << 16) | k as u64);
    rng
}

/// Summed log-likelihood gradients of a roll-out's actions under `current`,
/// for per-step Gaussian noise of standard deviation `sigma`.
fn enac_score(
    rollout: &Rollout,
    current: &Policy,
    features: &[[Vec<f64>; DMP_DIMS]],
    n_basis: usize,
    sigma: f64,
) -> Vec<f64> {
    let mut score = vec![0.0; DMP_DIMS * n_basis];
    let var = sigma * sigma;
    for (k, phi) in features.iter().enumerate() {
        let noise = rollout.action_noise.get(k).copied().unwrap_or([0.0; 6]);
        for d in 0..DMP_DIMS {
            let block = d * n_basis..(d + 1) * n_basis;
            // Action taken minus the mean action of the current policy.
            let shift: f64 = phi[d]
                .iter()
                .zip(&rollout.theta[block.clone()])
                .zip(&current.theta[block.clone()])
                .map(|((p, a), b)| p * (a - b))
                .sum();
            let residual = noise[d] + shift;
            for (s, p) in score[block].iter_mut().zip(&phi[d]) {
                *s += p * residual / var;
            }
        }
    }
    score
}

fn insert_elites(elites: &mut Vec<Rollout>, pool: impl IntoIterator<Item = Rollout>) {
    elites.extend(pool);
    elites.sort_by(|a, b| a.total_cost.total_cmp(&b.total_cost));
    elites.truncate(ELITES);
}

/// Adapts `initial` to `scene` by policy search, starting from `start` and
/// aiming at `goal`. Stops at the first roll-out that grasps successfully
/// (when `stop_on_success`) or after `update_max` updates.
pub fn run_learning(
    initial: &DmpParams,
    start: Vec6,
    goal: Vec6,
    scene: &Scene,
    config: &LearnConfig,
    rng_seed: u64,
) -> Result<LearningState> {
    config.validate()?;
    initial.validate()?;
    let n_basis = initial.n_basis;
    let eval = Evaluator {
        template: initial,
        start,
        scene,
        dt: config.sim_dt,
        r_scale: config.r_scale,
    };
    let mut current = Policy {
        theta: initial.theta(),
        goal,
    };
    let first = eval.run(&current.theta, current.goal, &[])?;
    let mut state = LearningState {
        current: current.clone(),
        update_index: 0,
        elites: Vec::new(),
        rng_seed,
        history: Vec::new(),
        initial_cost: first.total_cost,
        success: first.success,
        deployed: None,
    };
    if first.success && config.stop_on_success {
        state.deployed = Some(first.clone());
        state.elites = vec![first];
        return Ok(state);
    }
    if first.success {
        state.deployed = Some(first.clone());
    }
    state.elites = vec![first];

    let features = match config.algo {
        Algorithm::Enac => Some(eval.action_features(&goal)?),
        _ => None,
    };
    let steps = eval.steps()?;

    for i in 0..config.budget.update_max {
        let sigma = scaled_sigma(&config.schedule, i);
        let goal_sigma = scaled_goal_sigma(&config.schedule, i);
        let fresh: Vec<Rollout> = (0..config.budget.rollouts_per_update)
            .map(|k| {
                let mut rng = rollout_rng(rng_seed, i, k);
                let (goal, goal_eps) = if config.goal_learning {
                    perturb_goal(&current.goal, goal_sigma, &mut rng)
                } else {
                    (current.goal, [0.0; 6])
                };
                match config.algo {
                    Algorithm::Pi2 | Algorithm::Power => {
                        let (p, eps) = perturb_parameters(&current, sigma * sigma, &mut rng);
                        let mut r = eval.run(&p.theta, goal, &[])?;
                        r.epsilon = eps;
                        r.goal_epsilon = goal_eps;
                        Ok(r)
                    }
                    Algorithm::Enac => {
                        let noise: Vec<Vec6> = (0..=steps)
                            .map(|_| {
                                std::array::from_fn(|_| {
                                    sigma * rng.sample::<f64, _>(StandardNormal)
                                })
                            })
                            .collect();
                        let mut r = eval.run(&current.theta, goal, &noise)?;
                        r.goal_epsilon = goal_eps;
                        Ok(r)
                    }
                }
            })
            .collect::<Result<_>>()?;

        let mut costs: Vec<f64> = fresh.iter().map(|r| r.total_cost).collect();
        costs.extend(state.elites.iter().map(|r| r.total_cost));
        let winner = fresh
            .iter()
            .filter(|r| r.success)
            .min_by(|a, b| a.total_cost.total_cmp(&b.total_cost))
            .cloned();

        let mut warning = None;
        let next = match config.algo {
            Algorithm::Pi2 | Algorithm::Power => {
                let pool: Vec<Candidate> = fresh
                    .iter()
                    .chain(&state.elites)
                    .map(Rollout::candidate)
                    .collect();
                if config.algo == Algorithm::Pi2 {
                    pi2_update(&current, &pool, config.h)?
                } else {
                    power_update(&current, &pool)?
                }
            }
            Algorithm::Enac => {
                let phi = features.as_ref().expect("features computed for eNAC");
                let samples: Vec<EnacSample> = fresh
                    .iter()
                    .chain(&state.elites)
                    .map(|r| EnacSample {
                        score: enac_score(r, &current, phi, n_basis, sigma),
                        cost: r.total_cost,
                    })
                    .collect();
                let (mut next, grad) = enac_update(&current, &samples, config.alpha, config.ridge)?;
                if grad.singular {
                    warning = Some("rank-deficient eNAC regression; ridge solution used".into());
                }
                if config.goal_learning {
                    let pool: Vec<Candidate> = fresh
                        .iter()
                        .chain(&state.elites)
                        .map(Rollout::candidate)
                        .collect();
                    next.goal = pi2_update(&current, &pool, config.h)?.goal;
                }
                next
            }
        };
        insert_elites(&mut state.elites, fresh);
        current = next;
        current.validate(n_basis)?;
        let policy_cost = eval.run(&current.theta, current.goal, &[])?.total_cost;

        let best = &state.elites[0];
        state.update_index = i + 1;
        state.history.push(EpisodeReport {
            update: i + 1,
            algo: config.algo,
            sigma,
            costs,
            best_cost: best.total_cost,
            n_fingers_best: best.n_fingers,
            success: winner.is_some(),
            policy_cost,
            warning,
        });
        if let Some(w) = winner {
            if state.deployed.is_none() {
                state.deployed = Some(w);
            }
            state.success = true;
            if config.stop_on_success {
                break;
            }
        }
    }
    state.current = current;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_examples() {
        assert_eq!(decay_factor(0, 100), 1.0);
        assert_eq!(decay_factor(50, 100), 0.5);
        assert_eq!(decay_factor(95, 100), 0.1);
        assert_eq!(decay_factor(250, 100), 0.1);
    }

    #[test]
    fn sigma_examples() {
        let pi2 = ExplorationSchedule::new(300.0, 0.04, 100);
        assert_eq!(scaled_sigma(&pi2, 0), 300.0);
        assert_eq!(scaled_sigma(&pi2, 100), 30.0);
        let enac = ExplorationSchedule::new(0.01, 0.04, 100);
        assert_eq!(scaled_sigma(&enac, 50), 0.005);
    }

    #[test]
    fn zero_sigma_perturbation_is_identity() {
        let p = Policy {
            theta: vec![1.0, 2.0, 3.0],
            goal: [0.1; 6],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, eps) = perturb_parameters(&p, 0.0, &mut rng);
        assert_eq!(q, p);
        assert!(eps.iter().all(|e| *e == 0.0));
        let (g, geps) = perturb_goal(&p.goal, 0.0, &mut rng);
        assert_eq!(g, p.goal);
        assert_eq!(geps, [0.0; 6]);
    }

    #[test]
    fn perturbation_is_seeded() {
        let p = Policy {
            theta: vec![0.0; 12],
            goal: [0.0; 6],
        };
        let a = perturb_parameters(&p, 300.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = perturb_parameters(&p, 300.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn goal_orientation_untouched() {
        let goal = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (g, eps) = perturb_goal(&goal, 0.04, &mut rng);
            assert_eq!(&g[3..], &goal[3..]);
            assert_eq!(&eps[3..], &[0.0; 3]);
        }
    }

    #[test]
    fn pi2_single_finite_rollout_takes_its_step() {
        let cur = Policy {
            theta: vec![0.0, 0.0],
            goal: [0.0; 6],
        };
        let pool = vec![
            Candidate {
                theta: vec![1.0, -2.0],
                goal: [0.0; 6],
                cost: 0.3,
            },
            Candidate {
                theta: vec![5.0, 5.0],
                goal: [0.0; 6],
                cost: f64::INFINITY,
            },
        ];
        let next = pi2_update(&cur, &pool, 10.0).unwrap();
        assert_eq!(next.theta, vec![1.0, -2.0]);
    }

    #[test]
    fn pi2_equal_costs_are_uniform() {
        let w = pi2_weights(&[2.0, 2.0, 2.0, 2.0], 10.0);
        assert!(w.iter().all(|x| (*x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn power_equal_returns_average() {
        let cur = Policy {
            theta: vec![1.0],
            goal: [0.0; 6],
        };
        let pool: Vec<Candidate> = [2.0, 4.0, 9.0]
            .iter()
            .map(|t| Candidate {
                theta: vec![*t],
                goal: [0.0; 6],
                cost: 0.5,
            })
            .collect();
        let next = power_update(&cur, &pool).unwrap();
        assert!((next.theta[0] - 5.0).abs() < 1e-12);
        assert!(power_returns(&[0.0, 3.0, 700.0]).iter().all(|r| *r > 0.0));
    }

    #[test]
    fn enac_zero_alpha_and_flat_costs() {
        let cur = Policy {
            theta: vec![0.5, -0.5],
            goal: [0.0; 6],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<EnacSample> = (0..12)
            .map(|_| EnacSample {
                score: vec![rng.sample(StandardNormal), rng.sample(StandardNormal)],
                cost: 3.0,
            })
            .collect();
        let (same, _) = enac_update(&cur, &samples, 0.0, DEFAULT_RIDGE).unwrap();
        assert_eq!(same, cur);
        let grad = enac_gradient(&samples, DEFAULT_RIDGE).unwrap();
        assert!(grad.w.iter().all(|w| w.abs() < 1e-6), "{:?}", grad.w);
        assert!((grad.baseline + 3.0).abs() < 1e-6);
        assert!(!grad.singular);
        let few = enac_gradient(&samples[..2], DEFAULT_RIDGE).unwrap();
        assert!(few.singular);
    }

    #[test]
    fn elites_keep_two_best() {
        let r = |c: f64| Rollout {
            theta: vec![],
            goal: [0.0; 6],
            epsilon: vec![],
            goal_epsilon: [0.0; 6],
            action_noise: vec![],
            trajectory: None,
            step_costs: vec![],
            terminal_cost: 0.0,
            total_cost: c,
            n_fingers: 0,
            success: false,
        };
        let mut elites = vec![r(0.5)];
        insert_elites(&mut elites, vec![r(0.9), r(0.2), r(0.7)]);
        let costs: Vec<f64> = elites.iter().map(|e| e.total_cost).collect();
        assert_eq!(costs, vec![0.2, 0.5]);
    }
}
