use mmt_core::cost::evaluate;
use mmt_core::harness::{
    avatar_scene, farm_from_results, quantile, run_episode, run_farm, run_farm_episodes,
    synthesize_demonstration, Aggregate, DelayedChannel, DemoKind, EpisodeConfig, Payload,
    Scenario,
};
use mmt_core::policy::Algorithm;
use mmt_core::sim::execute;
use mmt_core::studies::DEFAULT_SEEDS;
use mmt_core::Error;

fn dmp(tag: &str) -> Payload {
    Payload::Dmp(tag.to_string())
}

fn tag(p: &Payload) -> &str {
    match p {
        Payload::Dmp(s) => s,
        Payload::SceneUpdate(_) => "scene",
    }
}

#[test]
fn channel_delivery_examples() {
    let mut instant = DelayedChannel::new(0.0, 0.0, 1).unwrap();
    assert_eq!(instant.transmit(dmp("a"), 2.5), 2.5);

    let mut kontur = DelayedChannel::new(0.8, 0.0, 1).unwrap();
    let at = kontur.transmit(dmp("a"), 1.0);
    assert!((at - 1.8).abs() < 1e-12);
    assert!(kontur.receive(1.79).is_empty());
    assert_eq!(kontur.next_delivery(), Some(at));
    let got = kontur.receive(1.8);
    assert_eq!(got.len(), 1);
    assert_eq!(tag(&got[0].1), "a");
    assert_eq!(kontur.next_delivery(), None);

    assert!(DelayedChannel::new(-0.1, 0.0, 0).is_err());
}

#[test]
fn jittered_channel_stays_fifo_and_causal() {
    for seed in 0..20 {
        let mut ch = DelayedChannel::new(0.3, 0.5, seed).unwrap();
        let mut sends = Vec::new();
        for k in 0..50 {
            let t = k as f64 * 0.01;
            let at = ch.transmit(dmp(&k.to_string()), t);
            assert!(at >= t + 0.3 && at <= t + 0.8 + 1e-12);
            sends.push(at);
        }
        assert!(sends.windows(2).all(|w| w[0] <= w[1]));
        let delivered = ch.receive(100.0);
        let order: Vec<usize> = delivered
            .iter()
            .map(|(_, p)| tag(p).parse().unwrap())
            .collect();
        assert_eq!(order, (0..50).collect::<Vec<_>>());
    }
}

#[test]
fn demonstration_boundary_conditions() {
    let scenario = Scenario::default_box();
    let goal = scenario.pre_grasp(&scenario.scene.object.believed_pose);
    for kind in [DemoKind::MinJerkReach, DemoKind::ArcReach] {
        let demo = synthesize_demonstration(&scenario, kind).unwrap();
        assert_eq!(demo.first().pose, scenario.home_pose);
        for d in 0..6 {
            assert!((demo.last().pose[d] - goal[d]).abs() < 1e-9);
            for s in [demo.first(), demo.last()] {
                assert!(s.velocity[d].abs() < 1e-9);
                assert!(s.acceleration[d].abs() < 1e-9);
            }
        }
        let mid = &demo.samples()[demo.len() / 2];
        assert!((mid.t - 1.5).abs() < 1e-12);
        for d in 0..6 {
            let expected = 1.875 * (goal[d] - scenario.home_pose[d]) / scenario.demo_duration;
            assert!(
                (mid.velocity[d] - expected).abs() < 1e-9,
                "{kind:?} dim {d}"
            );
        }
        assert_eq!(synthesize_demonstration(&scenario, kind).unwrap(), demo);
    }
}

#[test]
fn unreachable_pre_grasp_is_rejected() {
    let mut scenario = Scenario::default_box();
    scenario.scene.object.believed_pose[0] = 1.5;
    assert!(matches!(
        synthesize_demonstration(&scenario, DemoKind::MinJerkReach),
        Err(Error::Unreachable(_))
    ));
}

#[test]
fn displacement_outside_the_workspace_is_rejected() {
    let scenario = Scenario::default_box();
    let cfg = EpisodeConfig::new(&scenario, Algorithm::Pi2, [2.0, 0.0], vec![0]);
    assert!(run_farm(&scenario, &cfg).is_err());
    let cfg = EpisodeConfig::new(&scenario, Algorithm::Pi2, [0.0, 0.0], vec![]);
    assert!(run_farm(&scenario, &cfg).is_err());
    let cfg = EpisodeConfig::new(&scenario, Algorithm::Pi2, [0.0, 0.0], vec![3, 3]);
    assert!(run_farm(&scenario, &cfg).is_err());
}

#[test]
fn avatar_sees_displacement_but_not_uncertainty() {
    let scenario = Scenario::default_box();
    let mut cfg = EpisodeConfig::new(&scenario, Algorithm::Pi2, [0.1, -0.05], vec![0]);
    cfg.uncertainty = 0.03;
    let scene = avatar_scene(&scenario, &cfg, 9).unwrap();
    let home = scenario.scene.object.believed_pose;
    let believed = scene.object.believed_pose;
    assert_eq!([believed[0], believed[1]], [home[0] + 0.1, home[1] - 0.05]);
    let t = scene.object.true_pose;
    assert!(((t[0] - believed[0]).hypot(t[1] - believed[1]) - 0.03).abs() < 1e-12);
}

#[test]
fn undisturbed_scene_needs_no_learning() {
    let scenario = Scenario::default_box();
    let cfg = EpisodeConfig::new(
        &scenario,
        Algorithm::Pi2,
        [0.0, 0.0],
        DEFAULT_SEEDS.to_vec(),
    );
    let farm = run_farm(&scenario, &cfg).unwrap();
    assert_eq!(farm.aggregate.successes, 5);
    assert_eq!(farm.aggregate.max, 0);
}

#[test]
fn small_x_displacement_needs_few_updates() {
    let scenario = Scenario::default_box();
    let cfg = EpisodeConfig::new(
        &scenario,
        Algorithm::Pi2,
        [0.1, 0.0],
        DEFAULT_SEEDS.to_vec(),
    );
    let farm = run_farm(&scenario, &cfg).unwrap();
    assert!(farm.aggregate.median <= 1.0);
}

#[test]
fn cylinder_small_deviation_needs_learning() {
    let scenario = Scenario::default_cylinder();
    let cfg = EpisodeConfig::new(
        &scenario,
        Algorithm::Pi2,
        [0.05, 0.0],
        DEFAULT_SEEDS.to_vec(),
    );
    let runs = run_farm_episodes(&scenario, &cfg).unwrap();
    for r in &runs {
        assert!(r.state.initial_cost > 0.0);
        assert!(
            r.state.update_index > 0,
            "seed {} grasped without learning",
            r.seed
        );
    }
}

#[test]
fn deployed_rollouts_pass_the_grasp_check() {
    let scenario = Scenario::default_box();
    for algo in Algorithm::ALL {
        let cfg = EpisodeConfig::new(&scenario, algo, [0.3, 0.0], DEFAULT_SEEDS.to_vec());
        for r in run_farm_episodes(&scenario, &cfg).unwrap() {
            let scene = avatar_scene(&scenario, &cfg, r.seed).unwrap();
            match (&r.state.deployed, r.state.success) {
                (Some(d), true) => {
                    assert!(d.success);
                    let traj = d.trajectory.as_ref().unwrap();
                    let (outcome, cost) =
                        evaluate(traj, &d.theta, &execute(traj, &scene), &scene, 1.0).unwrap();
                    assert!(outcome.success);
                    assert_eq!(cost.total, d.total_cost);
                }
                (None, false) => {}
                other => panic!("deployment and success disagree: {:?}", other.1),
            }
        }
    }
}

#[test]
fn single_seed_farm_is_that_run() {
    let scenario = Scenario::default_box();
    let cfg = EpisodeConfig::new(&scenario, Algorithm::Power, [0.4, 0.0], vec![3]);
    let farm = run_farm(&scenario, &cfg).unwrap();
    let run = run_episode(&scenario, &cfg, 3).unwrap();
    let updates = run.state.update_index as f64;
    assert_eq!(farm.members.len(), 1);
    assert_eq!(farm.members[0].updates, run.state.update_index);
    assert_eq!(
        (farm.aggregate.median, farm.aggregate.q1, farm.aggregate.q3),
        (updates, updates, updates)
    );
}

#[test]
fn aggregate_is_recomputable_from_members() {
    let scenario = Scenario::default_box();
    let cfg = EpisodeConfig::new(
        &scenario,
        Algorithm::Enac,
        [0.3, 0.0],
        DEFAULT_SEEDS.to_vec(),
    );
    let farm = farm_from_results(&cfg, run_farm_episodes(&scenario, &cfg).unwrap());
    assert_eq!(Aggregate::from_members(&farm.members), farm.aggregate);
    let json = farm.to_json();
    let back: mmt_core::harness::FarmResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back, farm);
}

#[test]
fn quartiles_interpolate_linearly() {
    assert_eq!(quantile(&[1, 2, 3, 4], 0.5), 2.5);
    assert_eq!(quantile(&[1, 2, 3, 4], 0.25), 1.75);
    assert_eq!(quantile(&[0, 10], 0.75), 7.5);
    assert!(quantile(&[], 0.5).is_nan());
}

/// Updates-to-success for the box moved 40 cm along X, seeds 0..4. Frozen
/// from a reference run; any change to the learners, the simulator or the
/// random streams shows up here.
#[test]
fn golden_farm_baseline() {
    let scenario = Scenario::default_box();
    let expected = [
        (Algorithm::Pi2, [7, 1, 1, 2, 2], (2.0, 1.0, 2.0), 5),
        (Algorithm::Power, [4, 1, 1, 2, 2], (2.0, 1.0, 2.0), 5),
        (
            Algorithm::Enac,
            [100, 16, 100, 55, 9],
            (55.0, 16.0, 100.0),
            3,
        ),
    ];
    for (algo, updates, (median, q1, q3), successes) in expected {
        let cfg = EpisodeConfig::new(&scenario, algo, [0.4, 0.0], DEFAULT_SEEDS.to_vec());
        let farm = run_farm(&scenario, &cfg).unwrap();
        let got: Vec<usize> = farm.members.iter().map(|m| m.updates).collect();
        assert_eq!(got, updates, "{algo}");
        let a = &farm.aggregate;
        assert_eq!(
            (a.median, a.q1, a.q3, a.successes),
            (median, q1, q3, successes),
            "{algo}"
        );
    }
}
