//! Episodic RL environment around the simulator.
//!
//! The reward is a reconstruction (no reference reward exists): velocity along
//! the commanded direction dominates, plus action-rate, pendulum over-speed
//! and motor-axis alignment shaping.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RewardConfig, ScenarioConfig};
use crate::controller::{Command, MAX_SETPOINT};
use crate::dynamics::{rolling_pose, RobotModel, RobotState, Simulator};
use crate::error::{Error, Result};
use crate::observation::{action_to_setpoint, Observation, ObservationBuilder};
use crate::terrain::Terrain;

/// Ground-truth diagnostics for one control step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Mean ground-plane velocity along the command over the step, m/s.
    pub speed_along: f64,
    pub timeout: bool,
    /// The physics produced a non-finite state; the episode is over and the
    /// transition should be discarded.
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Reward for the transition `prev_state -> state`.
///
/// `r = w_speed * (v_xy . d) - w_action_rate * |a - a_prev|
///      - w_spin * max(0, |pendulum rate| - 21)^2 + w_upright * (1 - |w_z|)`
///
/// `v_xy` is the mean ground-plane velocity over the transition (the
/// instantaneous velocity when no time has elapsed) and `w_z` the vertical
/// component of the world motor axis.
pub fn reward(
    robot: &RobotModel,
    state: &RobotState,
    prev_state: &RobotState,
    action: f64,
    prev_action: f64,
    cmd: &Command,
    cfg: &RewardConfig,
) -> f64 {
    let d = cmd.direction();
    let elapsed = state.time - prev_state.time;
    let velocity = if elapsed > 0.0 {
        (state.position.xy() - prev_state.position.xy()) / elapsed
    } else {
        state.linear_velocity.xy()
    };
    let (_, _, w_body) = robot.motor_axes_body();
    let w_z = (state.orientation * w_body).z;
    let overspeed = (state.pendulum_velocity.abs() - MAX_SETPOINT).max(0.0);
    cfg.w_speed * velocity.dot(&d) - cfg.w_action_rate * (action - prev_action).abs() - cfg.w_spin * overspeed.powi(2)
        + cfg.w_upright * (1.0 - w_z.abs())
}

/// Uniform unit command on the circle.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R) -> Command {
    Command::from_heading(rng.random_range(-PI..PI))
}

/// One environment instance. Not shared between workers.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: Arc<ScenarioConfig>,
    robot: Arc<RobotModel>,
    sim: Option<Simulator>,
    command: Command,
    observer: ObservationBuilder,
    last_action: f64,
    steps: usize,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(cfg: Arc<ScenarioConfig>) -> Result<Self> {
        cfg.validate()?;
        let robot = Arc::new(cfg.robot()?);
        Ok(Self::with_robot(cfg, robot))
    }

    /// Shares an already-built robot model (mass properties and contact mesh
    /// are the expensive part of construction).
    pub fn with_robot(cfg: Arc<ScenarioConfig>, robot: Arc<RobotModel>) -> Self {
        let heading_relative = cfg.env.heading_relative;
        Self {
            cfg,
            robot,
            sim: None,
            command: Command::from_heading(0.0),
            observer: ObservationBuilder::new(heading_relative),
            last_action: 0.0,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn robot(&self) -> &RobotModel {
        &self.robot
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn state(&self) -> Option<&RobotState> {
        self.sim.as_ref().map(|s| &s.state)
    }

    pub fn simulator(&self) -> Option<&Simulator> {
        self.sim.as_ref()
    }

    pub fn terrain(&self) -> Option<&Terrain> {
        self.sim.as_ref().map(|s| &s.world.terrain)
    }

    pub fn last_action(&self) -> f64 {
        self.last_action
    }

    /// Control steps per episode.
    pub fn max_steps(&self) -> usize {
        (self.cfg.env.episode_length / self.cfg.env.control_period).round().max(1.0) as usize
    }

    /// New terrain, command and initial pose, all drawn from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let e = &self.cfg.env;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let terrain =
            Terrain::generate(&mut self.rng, e.roughness, e.correlation_length, e.terrain_half_extent, e.terrain_cell)?;
        self.command = match e.fixed_heading {
            Some(h) => Command::from_heading(h),
            None => sample_command(&mut self.rng),
        };
        let yaw = if e.yaw_range > 0.0 { self.rng.random_range(-e.yaw_range..=e.yaw_range) } else { 0.0 };
        let offset = if e.pendulum_range > 0.0 { self.rng.random_range(-e.pendulum_range..=e.pendulum_range) } else { 0.0 };
        // In the rolling pose the pendulum hangs straight down at +pi/2.
        let pendulum = FRAC_PI_2 + offset;

        let pose = rolling_pose(&self.robot, yaw);
        let mut sim = Simulator::new(
            (*self.robot).clone(),
            self.cfg.world(terrain),
            self.cfg.dynamics.motor,
            RobotState::default(),
            self.cfg.dynamics.dt,
        );
        let z = sim.touching_height(0.0, 0.0, &pose, pendulum);
        sim.state = RobotState::at_rest(Vector3::new(0.0, 0.0, z), pose).with_pendulum_angle(pendulum);
        self.sim = Some(sim);
        self.last_action = 0.0;
        self.steps = 0;
        self.observer.reset();
        Ok(self.observe())
    }

    fn observe(&mut self) -> Observation {
        let sim = self.sim.as_ref().expect("reset before observe");
        self.observer.build(&self.robot, &sim.state, &self.command, self.last_action)
    }

    /// Applies `action` for one control period.
    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        let (max_steps, substeps) = (self.max_steps(), self.cfg.substeps());
        let Some(sim) = self.sim.as_mut() else {
            return Err(Error::Usage("env stepped before reset".into()));
        };
        if !action.is_finite() {
            return Err(Error::InputDomain(format!("action must be finite, got {action}")));
        }
        let action = action.clamp(-1.0, 1.0);
        let prev = sim.state.clone();
        sim.motor.set_setpoint(action_to_setpoint(action));

        let mut diverged = false;
        for _ in 0..substeps {
            if sim.step().is_err() {
                diverged = true;
                break;
            }
        }
        self.steps += 1;
        let timeout = self.steps >= max_steps;

        if diverged {
            // Keep the last finite state so observations stay defined.
            sim.state = prev;
            sim.state.invalidate();
            let observation = self.observe();
            let info = StepInfo { speed_along: 0.0, timeout, diverged: true };
            return Ok(StepResult { observation, reward: 0.0, done: true, info });
        }

        let state = &sim.state;
        let elapsed = state.time - prev.time;
        let speed_along = (state.position.xy() - prev.position.xy()).dot(&self.command.direction()) / elapsed;
        let r = reward(&self.robot, state, &prev, action, self.last_action, &self.command, &self.cfg.reward);
        self.last_action = action;

        let period = self.cfg.env.command_resample_period;
        if period > 0.0 && self.cfg.env.fixed_heading.is_none() {
            let crossed = (state.time / period).floor() > (prev.time / period).floor();
            if crossed {
                self.command = sample_command(&mut self.rng);
            }
        }

        let observation = self.observe();
        Ok(StepResult { observation, reward: r, done: timeout, info: StepInfo { speed_along, timeout, diverged: false } })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_cfg() -> Arc<ScenarioConfig> {
        let mut cfg = ScenarioConfig::default();
        cfg.env.roughness = 0.0;
        cfg.env.episode_length = 0.1;
        Arc::new(cfg)
    }

    #[test]
    fn step_before_reset_is_a_usage_error() {
        let mut env = Env::new(flat_cfg()).unwrap();
        assert!(matches!(env.step(0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn episode_times_out() {
        let mut env = Env::new(flat_cfg()).unwrap();
        env.reset(1).unwrap();
        assert_eq!(env.max_steps(), 5);
        for k in 0..5 {
            let r = env.step(0.0).unwrap();
            assert_eq!(r.done, k == 4);
        }
        assert!((env.state().unwrap().time - 0.1).abs() < 1e-9);
    }

    #[test]
    fn flat_reset_rests_on_the_ground() {
        let mut env = Env::new(flat_cfg()).unwrap();
        env.reset(9).unwrap();
        let sim = env.simulator().unwrap();
        let c = crate::contact::clearance(&sim.state, &sim.robot, &sim.world.terrain);
        assert!(c.abs() < 1e-4, "clearance {c}");
    }

    #[test]
    fn stationary_reward_is_upright_bonus() {
        let robot = ScenarioConfig::default().robot().unwrap();
        let pose = rolling_pose(&robot, 0.3);
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 0.1), pose);
        let cfg = RewardConfig::default();
        let r = reward(&robot, &s, &s, 0.4, 0.4, &Command::from_heading(1.0), &cfg);
        assert!((r - cfg.w_upright).abs() < 1e-12);
    }

    #[test]
    fn command_resamples_on_period() {
        let mut cfg = ScenarioConfig::default();
        cfg.env.roughness = 0.0;
        cfg.env.command_resample_period = 0.04;
        let mut env = Env::new(Arc::new(cfg)).unwrap();
        env.reset(4).unwrap();
        let first = env.command();
        env.step(0.0).unwrap();
        assert_eq!(env.command(), first);
        env.step(0.0).unwrap();
        assert_ne!(env.command(), first);
    }
}
