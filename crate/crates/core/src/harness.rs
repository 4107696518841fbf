//! The teleoperation loop: a synthetic demonstration is encoded on the
//! input side, sent over a delayed channel, rebuilt on the avatar side
//! against the displaced (and uncertain) object, and adapted by policy
//! search until the simulated grasp succeeds.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmp::{self, DmpParams, Gains};
use crate::error::{Error, Result};
use crate::policy::{
    run_learning, Algorithm, Budget, ExplorationSchedule, LearnConfig, LearningState,
};
use crate::sim::{inject_uncertainty, Scene};
use crate::trajectory::{min_jerk_profile, Sample, Trajectory, Vec6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoKind {
    /// Straight minimum-jerk reach.
    MinJerkReach,
    /// Minimum-jerk reach with a smooth sideways swing (see `arc_bulge`).
    ArcReach,
}

/// Input-side setup: where the hand starts, how it approaches the object
/// and which object the operator saw during the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Scene as modelled on the input side at demonstration time.
    pub scene: Scene,
    pub home_pose: Vec6,
    /// Pre-grasp wrist pose relative to the object position (position
    /// offset plus absolute orientation).
    pub approach: Vec6,
    pub demo_kind: DemoKind,
    /// Peak excursion of the arc reach per position axis, meters.
    #[serde(default)]
    pub arc_bulge: [f64; 3],
    #[serde(default = "default_duration")]
    pub demo_duration: f64,
    #[serde(default = "default_demo_dt")]
    pub demo_dt: f64,
    #[serde(default = "default_n_basis")]
    pub n_basis: usize,
    #[serde(default = "default_alpha_z")]
    pub alpha_z: f64,
    /// eNAC learning rate for this task. The natural-gradient step scales
    /// with the cost differences between roll-outs, which are tiny while
    /// every roll-out misses, so the generic default barely moves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enac_alpha: Option<f64>,
}

fn default_duration() -> f64 {
    3.0
}
fn default_demo_dt() -> f64 {
    0.01
}
fn default_n_basis() -> usize {
    dmp::DEFAULT_N_BASIS
}
fn default_alpha_z() -> f64 {
    25.0
}

pub const BOX_SCENARIO: &str = include_str!("../scenarios/box.json");
pub const CYLINDER_SCENARIO: &str = include_str!("../scenarios/cylinder.json");

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| Error::invariant("Scenario", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn default_box() -> Self {
        Self::from_json(BOX_SCENARIO).expect("bundled box scenario is valid")
    }

    pub fn default_cylinder() -> Self {
        Self::from_json(CYLINDER_SCENARIO).expect("bundled cylinder scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if !(self.demo_duration > 0.0
            && self.demo_dt > 0.0
            && self.demo_dt <= self.demo_duration / 10.0)
        {
            return Err(Error::invariant(
                "Scenario",
                "demo_dt must be positive and at most a tenth of demo_duration",
            ));
        }
        if self.n_basis < 2 {
            return Err(Error::invariant("DmpParams", "n_basis must be >= 2"));
        }
        if self
            .enac_alpha
            .is_some_and(|a| !(a.is_finite() && a >= 0.0))
        {
            return Err(Error::invariant(
                "Scenario",
                "enac_alpha must be finite and non-negative",
            ));
        }
        if !(self.alpha_z > 0.0) {
            return Err(Error::invariant("DmpParams", "alpha_z must be positive"));
        }
        if self
            .home_pose
            .iter()
            .chain(&self.approach)
            .chain(&self.arc_bulge)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invariant("Scenario", "poses must be finite"));
        }
        let home = [self.home_pose[0], self.home_pose[1], self.home_pose[2]];
        if !self.scene.workspace.contains(home) {
            return Err(Error::invariant(
                "Scenario",
                "home pose lies outside the workspace",
            ));
        }
        Ok(())
    }

    pub fn gains(&self) -> Gains {
        Gains::critically_damped(self.alpha_z)
    }

    /// Wrist pose that puts the hand around an object at `object_pose`.
    pub fn pre_grasp(&self, object_pose: &Vec6) -> Vec6 {
        let mut p = self.approach;
        for d in 0..3 {
            p[d] += object_pose[d];
        }
        p
    }
}

/// `64 u³ (1 − u)³`, peaking at 1 for `u = 0.5`, and its derivatives.
fn bulge_profile(u: f64) -> (f64, f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let v = 1.0 - u;
    (
        64.0 * u.powi(3) * v.powi(3),
        192.0 * u * u * v * v * (v - u),
        192.0 * (2.0 * u * v.powi(3) - 6.0 * u * u * v * v + 2.0 * u.powi(3) * v),
    )
}

/// Minimum-jerk 6-DOF reach from the home pose to the pre-grasp pose at the
/// believed object position of the input-side scene.
pub fn synthesize_demonstration(scenario: &Scenario, kind: DemoKind) -> Result<Trajectory> {
    let goal = scenario.pre_grasp(&scenario.scene.object.believed_pose);
    if !scenario
        .scene
        .workspace
        .contains([goal[0], goal[1], goal[2]])
    {
        return Err(Error::Unreachable([goal[0], goal[1], goal[2]]));
    }
    let start = scenario.home_pose;
    let duration = scenario.demo_duration;
    let dt = scenario.demo_dt;
    let bulge = match kind {
        DemoKind::MinJerkReach => [0.0; 3],
        DemoKind::ArcReach => scenario.arc_bulge,
    };
    let steps = (duration / dt).round() as usize;
    let samples = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            let u = t / duration;
            let (p, v, a) = min_jerk_profile(u);
            let (bp, bv, ba) = bulge_profile(u);
            let mut s = Sample {
                t,
                pose: [0.0; 6],
                velocity: [0.0; 6],
                acceleration: [0.0; 6],
            };
            for d in 0..6 {
                let delta = goal[d] - start[d];
                let b = if d < 3 { bulge[d] } else { 0.0 };
                s.pose[d] = start[d] + delta * p + b * bp;
                s.velocity[d] = (delta * v + b * bv) / duration;
                s.acceleration[d] = (delta * a + b * ba) / (duration * duration);
            }
            s
        })
        .collect();
    Trajectory::new(samples, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// JSON-encoded [`DmpParams`].
    Dmp(String),
    SceneUpdate(Scene),
}

/// One direction of the simulated network. Time is a logical clock; no
/// call ever sleeps.
#[derive(Debug, Clone)]
pub struct DelayedChannel {
    latency: f64,
    jitter: f64,
    rng: ChaCha8Rng,
    last_delivery: f64,
    queue: VecDeque<(f64, Payload)>,
}

impl DelayedChannel {
    pub fn new(latency: f64, jitter: f64, seed: u64) -> Result<Self> {
        if !(latency.is_finite() && latency >= 0.0 && jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::invariant(
                "DelayedChannel",
                format!("latency {latency} and jitter {jitter} must be non-negative"),
            ));
        }
        Ok(Self {
            latency,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_delivery: f64::NEG_INFINITY,
            queue: VecDeque::new(),
        })
    }

    /// Queues `payload` and returns when it becomes available on the other
    /// side. Deliveries never overtake earlier sends.
    pub fn transmit(&mut self, payload: Payload, t_send: f64) -> f64 {
        let jitter = if self.jitter > 0.0 {
            self.rng.random_range(0.0..=self.jitter)
        } else {
            0.0
        };
        let delivery = (t_send + self.latency + jitter).max(self.last_delivery);
        self.last_delivery = delivery;
        self.queue.push_back((delivery, payload));
        delivery
    }

    /// Pops every payload delivered by time `now`, oldest first.
    pub fn receive(&mut self, now: f64) -> Vec<(f64, Payload)> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(t, _)| *t <= now) {
            out.push(self.queue.pop_front().expect("front checked"));
        }
        out
    }

    pub fn next_delivery(&self) -> Option<f64> {
        self.queue.front().map(|(t, _)| *t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub latency: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            latency: 0.0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub demo_kind: DemoKind,
    /// Object displacement in the table plane after the demonstration.
    pub displacement: [f64; 2],
    /// Distance between believed and true object position, meters.
    pub uncertainty: f64,
    pub learn: LearnConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub channel: ChannelConfig,
}

impl EpisodeConfig {
    pub fn new(
        scenario: &Scenario,
        algo: Algorithm,
        displacement: [f64; 2],
        seeds: Vec<u64>,
    ) -> Self {
        let mut learn = LearnConfig::new(algo);
        if let Some(alpha) = scenario.enac_alpha {
            learn.alpha = alpha;
        }
        Self {
            demo_kind: scenario.demo_kind,
            displacement,
            uncertainty: 0.0,
            learn,
            seeds,
            channel: ChannelConfig::default(),
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invariant("EpisodeConfig", "seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invariant("EpisodeConfig", "seeds must be distinct"));
        }
        if !(self.uncertainty.is_finite() && self.uncertainty >= 0.0) {
            return Err(Error::invariant(
                "EpisodeConfig",
                "uncertainty must be non-negative",
            ));
        }
        let moved = scenario.scene.displaced(self.displacement);
        let p = moved.object.believed_pose;
        if !scenario.scene.workspace.contains([p[0], p[1], p[2]]) {
            return Err(Error::invariant(
                "EpisodeConfig",
                "displacement moves the object outside the workspace",
            ));
        }
        self.learn.validate()
    }

    pub fn with_schedule(mut self, schedule: ExplorationSchedule) -> Self {
        self.learn.schedule = schedule;
        self
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.learn.budget = budget;
        self.learn.schedule.update_max = budget.update_max;
        self
    }
}

/// Avatar-side scene: the object moved by the displacement (known from
/// vision) and then offset by the unknown uncertainty.
pub fn avatar_scene(scenario: &Scenario, config: &EpisodeConfig, seed: u64) -> Result<Scene> {
    let moved = scenario.scene.displaced(config.displacement);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    inject_uncertainty(&moved, config.uncertainty, &mut rng)
}

/// Reconstructs towards the believed pre-grasp pose; if that grasp fails in
/// simulation, adapts the primitive by policy search.
pub fn avatar_episode(
    params: &DmpParams,
    scene: &Scene,
    scenario: &Scenario,
    learn: &LearnConfig,
    seed: u64,
) -> Result<LearningState> {
    let goal = scenario.pre_grasp(&scene.object.believed_pose);
    run_learning(params, params.start(), goal, scene, learn, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    /// Logical time at which the avatar side received the primitive.
    pub delivery_time: f64,
    pub state: LearningState,
}

/// Runs the full input-side → channel → avatar-side pipeline for one seed.
pub fn run_episode(
    scenario: &Scenario,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let demo = synthesize_demonstration(scenario, config.demo_kind)?;
    let encoded = dmp::encode_demonstration(&demo, scenario.n_basis, scenario.gains())?;

    let mut channel = DelayedChannel::new(config.channel.latency, config.channel.jitter, seed)?;
    let t_send = demo.span();
    let delivery = channel.transmit(Payload::Dmp(encoded.to_json()), t_send);
    // Nothing on the avatar side may read the payload before it arrives.
    debug_assert!(
        channel
            .receive(delivery - f64::EPSILON.max(delivery * 1e-12))
            .is_empty()
            || delivery <= t_send
    );
    let received = channel
        .receive(delivery)
        .into_iter()
        .find_map(|(_, p)| match p {
            Payload::Dmp(json) => Some(json),
            Payload::SceneUpdate(_) => None,
        })
        .ok_or_else(|| Error::Payload("primitive not delivered".into()))?;
    let params = DmpParams::from_json(&received)?;

    let scene = avatar_scene(scenario, config, seed)?;
    let state = avatar_episode(&params, &scene, scenario, &config.learn, seed)?;
    Ok(EpisodeResult {
        seed,
        delivery_time: delivery,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub seed: u64,
    pub success: bool,
    /// Updates used; equals the budget for runs that never succeeded.
    pub updates: usize,
    pub initial_cost: f64,
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub successes: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: usize,
    pub max: usize,
}

impl Aggregate {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_members(members: &[MemberSummary]) -> Self {
        let mut updates: Vec<usize> = members.iter().map(|m| m.updates).collect();
        updates.sort_unstable();
        Self {
            runs: members.len(),
            successes: members.iter().filter(|m| m.success).count(),
            median: quantile(&updates, 0.5),
            q1: quantile(&updates, 0.25),
            q3: quantile(&updates, 0.75),
            min: updates.first().copied().unwrap_or(0),
            max: updates.last().copied().unwrap_or(0),
        }
    }
}

pub fn quantile(sorted: &[usize], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmResult {
    pub algo: Algorithm,
    pub displacement: [f64; 2],
    pub uncertainty: f64,
    pub members: Vec<MemberSummary>,
    pub aggregate: Aggregate,
}

impl FarmResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("FarmResult always serializes")
    }
}

pub fn summarize(result: &EpisodeResult) -> MemberSummary {
    let s = &result.state;
    MemberSummary {
        seed: result.seed,
        success: s.success,
        updates: s.update_index,
        initial_cost: s.initial_cost,
        best_cost: s.elites.first().map_or(s.initial_cost, |e| e.total_cost),
    }
}

/// Runs one avatar episode per seed in parallel and aggregates the update
/// counts. Results are ordered by seed position, so the outcome does not
/// depend on scheduling.
pub fn run_farm(scenario: &Scenario, config: &EpisodeConfig) -> Result<FarmResult> {
    Ok(farm_from_results(
        config,
        run_farm_episodes(scenario, config)?,
    ))
}

/// As [`run_farm`] but also returns the full per-seed learning states.
pub fn run_farm_episodes(
    scenario: &Scenario,
    config: &EpisodeConfig,
) -> Result<Vec<EpisodeResult>> {
    config.validate(scenario)?;
    config
        .seeds
        .par_iter()
        .map(|&seed| run_episode(scenario, config, seed))
        .collect()
}

pub fn farm_from_results(config: &EpisodeConfig, results: Vec<EpisodeResult>) -> FarmResult {
    let members: Vec<MemberSummary> = results.iter().map(summarize).collect();
    FarmResult {
        algo: config.learn.algo,
        displacement: config.displacement,
        uncertainty: config.uncertainty,
        aggregate: Aggregate::from_members(&members),
        members,
    }
}

/// [`run_farm`] on a dedicated pool of `threads` workers.
pub fn run_farm_with_threads(
    scenario: &Scenario,
    config: &EpisodeConfig,
    threads: usize,
) -> Result<FarmResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Policy(format!("thread pool: {e}")))?;
    pool.install(|| run_farm(scenario, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bulge_derivatives_match_finite_differences() {
        let h = 1e-5;
        for k in 1..20 {
            let u = k as f64 / 20.0;
            let (_, v, a) = bulge_profile(u);
            let fd_v = (bulge_profile(u + h).0 - bulge_profile(u - h).0) / (2.0 * h);
            let fd_a = (bulge_profile(u + h).1 - bulge_profile(u - h).1) / (2.0 * h);
            assert!((v - fd_v).abs() < 1e-6);
            assert!((a - fd_a).abs() < 1e-5);
        }
        assert_eq!(bulge_profile(0.5).0, 1.0);
    }

    #[test]
    fn channel_delivery_times() {
        let mut ch = DelayedChannel::new(0.0, 0.0, 1).unwrap();
        assert_eq!(ch.transmit(Payload::Dmp("a".into()), 2.5), 2.5);
        let mut ch = DelayedChannel::new(0.8, 0.0, 1).unwrap();
        assert_eq!(ch.transmit(Payload::Dmp("a".into()), 1.0), 1.8);
        assert!(ch.receive(1.79).is_empty());
        assert_eq!(ch.receive(1.8).len(), 1);
        assert!(DelayedChannel::new(-1.0, 0.0, 1).is_err());
    }

    #[test]
    fn channel_is_fifo_under_jitter() {
        let mut ch = DelayedChannel::new(0.1, 0.5, 7).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in 0..200 {
            let t = k as f64 * 0.01;
            let d = ch.transmit(Payload::Dmp(k.to_string()), t);
            assert!(d >= t + 0.1);
            assert!(d >= last);
            last = d;
        }
        let got = ch.receive(f64::INFINITY);
        let order: Vec<String> = got
            .into_iter()
            .map(|(_, p)| match p {
                Payload::Dmp(s) => s,
                _ => unreachable!(),
            })
            .collect();
        let expected: Vec<String> = (0..200).map(|k: i32| k.to_string()).collect();
        assert_eq!(order, expected);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3], 0.5), 3.0);
        assert_eq!(quantile(&[0, 1, 2, 3, 10], 0.5), 2.0);
        assert_eq!(quantile(&[0, 1, 2, 3, 10], 0.25), 1.0);
        assert_eq!(quantile(&[1, 2], 0.5), 1.5);
    }
}
