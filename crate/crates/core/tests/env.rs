use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rock_core::config::{RewardConfig, ScenarioConfig};
use rock_core::controller::Command;
use rock_core::dynamics::{rolling_pose, RobotModel, RobotState};
use rock_core::env::{reward, sample_command, Env};

fn flat(pendulum_range: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.env.roughness = 0.0;
    cfg.env.pendulum_range = pendulum_range;
    cfg.env.episode_length = 1.0;
    cfg
}

fn robot() -> RobotModel {
    ScenarioConfig::default().robot().unwrap()
}

/// Independent restatement of the reward formula.
#[allow(clippy::too_many_arguments)]
fn reward_oracle(
    pos: [f64; 2],
    prev_pos: [f64; 2],
    elapsed: f64,
    axis_z: f64,
    pendulum_rate: f64,
    a: f64,
    a_prev: f64,
    d: [f64; 2],
    c: &RewardConfig,
) -> f64 {
    let vx = (pos[0] - prev_pos[0]) / elapsed;
    let vy = (pos[1] - prev_pos[1]) / elapsed;
    let over = if pendulum_rate.abs() > 21.0 { pendulum_rate.abs() - 21.0 } else { 0.0 };
    c.w_speed * (vx * d[0] + vy * d[1]) - c.w_action_rate * (a - a_prev).abs() - c.w_spin * over * over
        + c.w_upright * (1.0 - axis_z.abs())
}

#[test]
fn reward_matches_independent_formula() {
    let robot = robot();
    let (_, _, w_body) = robot.motor_axes_body();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let q = UnitQuaternion::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let mut prev = RobotState::at_rest(
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.1),
            UnitQuaternion::identity(),
        );
        prev.time = rng.random_range(0.0..5.0);
        let mut state = RobotState::at_rest(
            prev.position + Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0),
            q,
        );
        state.pendulum_velocity = rng.random_range(-40.0..40.0);
        state.time = prev.time + 0.02;
        let cfg = RewardConfig {
            w_speed: rng.random_range(0.0..2.0),
            w_action_rate: rng.random_range(0.0..1.0),
            w_spin: rng.random_range(0.0..0.1),
            w_upright: rng.random_range(0.0..1.0),
        };
        let cmd = sample_command(&mut rng);
        let (a, a_prev) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let got = reward(&robot, &state, &prev, a, a_prev, &cmd, &cfg);
        let d = cmd.direction();
        let want = reward_oracle(
            [state.position.x, state.position.y],
            [prev.position.x, prev.position.y],
            state.time - prev.time,
            (q * w_body).z,
            state.pendulum_velocity,
            a,
            a_prev,
            [d.x, d.y],
            &cfg,
        );
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn speed_term_at_reference_speed() {
    let robot = robot();
    let pose = rolling_pose(&robot, 0.0);
    let cmd = Command::from_heading(0.7);
    let d = cmd.direction();
    let mut prev = RobotState::at_rest(Vector3::new(0.0, 0.0, 0.1), pose);
    prev.time = 1.0;
    let mut state = prev.clone();
    state.time += 0.02;
    state.position += Vector3::new(d.x, d.y, 0.0) * 0.13 * 0.02;
    let cfg = RewardConfig { w_action_rate: 0.0, w_spin: 0.0, w_upright: 0.0, ..RewardConfig::default() };
    assert!((reward(&robot, &state, &prev, 0.0, 0.0, &cmd, &cfg) - 0.13).abs() < 1e-12);

    // Moving the opposite way flips the sign.
    let mut back = prev.clone();
    back.time += 0.02;
    back.position -= Vector3::new(d.x, d.y, 0.0) * 0.13 * 0.02;
    assert!((reward(&robot, &back, &prev, 0.0, 0.0, &cmd, &cfg) + 0.13).abs() < 1e-12);
}

#[test]
fn equal_actions_have_no_rate_penalty() {
    let robot = robot();
    let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 0.1), rolling_pose(&robot, 0.0));
    let cfg = RewardConfig { w_speed: 0.0, w_spin: 0.0, w_upright: 0.0, ..RewardConfig::default() };
    assert_eq!(reward(&robot, &s, &s, 0.37, 0.37, &Command::from_heading(0.0), &cfg), 0.0);
    assert!((reward(&robot, &s, &s, 0.5, -0.5, &Command::from_heading(0.0), &cfg) + cfg.w_action_rate).abs() < 1e-15);
}

#[test]
fn sampled_commands_are_uniform_on_the_circle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 10_000;
    let mut sum = nalgebra::Vector2::zeros();
    for _ in 0..n {
        let d = sample_command(&mut rng).direction();
        assert!((d.norm() - 1.0).abs() < 1e-12);
        sum += d;
    }
    assert!((sum / n as f64).norm() < 0.05);
}

#[test]
fn same_seed_reproduces_episode() {
    let cfg = Arc::new(ScenarioConfig::default());
    let mut a = Env::new(cfg.clone()).unwrap();
    let mut b = Env::new(cfg).unwrap();
    let oa = a.reset(77).unwrap();
    let ob = b.reset(77).unwrap();
    assert_eq!(oa.map(f64::to_bits), ob.map(f64::to_bits));
    assert_eq!(a.terrain(), b.terrain());
    assert_eq!(a.command(), b.command());
    for k in 0..25 {
        let action = ((k as f64) * 0.7).sin();
        let ra = a.step(action).unwrap();
        let rb = b.step(action).unwrap();
        assert_eq!(ra.observation.map(f64::to_bits), rb.observation.map(f64::to_bits));
        assert_eq!(ra.reward.to_bits(), rb.reward.to_bits());
    }
    assert_eq!(a.state(), b.state());

    let oc = a.reset(78).unwrap();
    assert_ne!(oc, oa);
}

#[test]
fn observation_carries_the_current_command() {
    let mut env = Env::new(Arc::new(flat(1.0))).unwrap();
    for seed in 0..5 {
        let obs = env.reset(seed).unwrap();
        let d = env.command().direction();
        assert_eq!((obs[1], obs[2]), (d.x, d.y));
        let step = env.step(0.2).unwrap();
        assert_eq!((step.observation[1], step.observation[2]), (d.x, d.y));
        assert_eq!(step.observation[0], 0.2);
    }
}

#[test]
fn zero_action_from_rest_barely_moves() {
    let mut env = Env::new(Arc::new(flat(0.0))).unwrap();
    env.reset(3).unwrap();
    let cfg = env.config().reward;
    let (_, _, w_body) = env.robot().motor_axes_body();
    for _ in 0..10 {
        let r = env.step(0.0).unwrap();
        let s = env.state().unwrap();
        let upright = cfg.w_upright * (1.0 - (s.orientation * w_body).z.abs());
        assert!((r.reward - upright).abs() <= 1e-3, "reward {} vs upright bonus {upright}", r.reward);
        assert!(r.info.speed_along.abs() < 1e-3);
    }
    assert!(env.state().unwrap().position.xy().norm() < 1e-3);
}

#[test]
fn rough_terrain_reset_places_robot_on_ground() {
    let mut env = Env::new(Arc::new(ScenarioConfig::default())).unwrap();
    for seed in 0..3 {
        env.reset(seed).unwrap();
        let sim = env.simulator().unwrap();
        let c = rock_core::contact::clearance(&sim.state, &sim.robot, &sim.world.terrain);
        assert!(c.abs() < 1e-3, "seed {seed}: clearance {c}");
        assert!(!sim.world.terrain.is_flat());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn observations_stay_in_range(seed in 0u64..1000, actions in proptest::collection::vec(-1.0f64..1.0, 1..20)) {
        let mut env = Env::new(Arc::new(flat(3.0))).unwrap();
        env.reset(seed).unwrap();
        for a in actions {
            let r = env.step(a).unwrap();
            prop_assert!(r.observation.iter().all(|x| (-1.0..=1.0).contains(x)));
            prop_assert!(r.reward.is_finite());
        }
    }
}
