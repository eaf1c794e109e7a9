//! Versioned scenario configuration (TOML).
//!
//! Every section is optional; missing keys take their defaults. Unknown keys
//! are rejected so typos surface immediately.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::ContactModel;
use crate::controller::ProjectionGains;
use crate::dynamics::{MotorModel, RobotModel, World, GRAVITY};
use crate::error::{Error, Result};
use crate::shell::{ShellModel, ShellParams};
use crate::terrain::Terrain;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Physics step, s.
    pub dt: f64,
    pub gravity: f64,
    /// Latitude/longitude resolution of the contact search mesh.
    pub contact_resolution: usize,
    pub contact: ContactModel,
    pub motor: MotorModel,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            gravity: GRAVITY,
            contact_resolution: RobotModel::DEFAULT_CONTACT_RESOLUTION,
            contact: ContactModel::default(),
            motor: MotorModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Simulated seconds before timeout.
    pub episode_length: f64,
    /// Control period, s; physics substeps = control_period / dt.
    pub control_period: f64,
    /// Terrain height standard deviation, m (0 = flat).
    pub roughness: f64,
    pub correlation_length: f64,
    /// Terrain covers [-half_extent, half_extent]^2, m.
    pub terrain_half_extent: f64,
    pub terrain_cell: f64,
    /// Seconds between command resamples; 0 keeps one command per episode.
    pub command_resample_period: f64,
    /// Fixed command heading in radians instead of a random one.
    pub fixed_heading: Option<f64>,
    /// Initial yaw drawn from [-yaw_range, yaw_range].
    pub yaw_range: f64,
    /// Initial pendulum angle drawn from [-pendulum_range, pendulum_range]
    /// around hanging straight down.
    pub pendulum_range: f64,
    /// Present the command in the robot heading frame.
    pub heading_relative: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            episode_length: 10.0,
            control_period: 0.02,
            roughness: 0.005,
            correlation_length: 0.1,
            terrain_half_extent: 6.0,
            terrain_cell: 0.025,
            command_resample_period: 0.0,
            fixed_heading: None,
            yaw_range: std::f64::consts::PI,
            pendulum_range: std::f64::consts::PI,
            heading_relative: false,
        }
    }
}

/// Reward weights. The reward is a reconstruction: speed along the command
/// dominates, the rest is smoothness and feasibility shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_speed: f64,
    pub w_action_rate: f64,
    pub w_spin: f64,
    pub w_upright: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w_speed: 1.0, w_action_rate: 0.05, w_spin: 0.01, w_upright: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub iterations: usize,
    /// Initial exploration std of the pre-squash Gaussian.
    pub action_std: f64,
    pub hidden: Vec<usize>,
    pub checkpoint_every: usize,
    /// Worker threads for environment stepping (0 = all cores).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 64,
            horizon: 256,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            learning_rate: 3e-4,
            epochs: 3,
            minibatch_size: 1024,
            entropy_coef: 0.003,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            iterations: 200,
            action_std: 0.3,
            hidden: vec![512, 256, 128],
            checkpoint_every: 10,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return bad("clip_ratio must be positive");
        }
        if self.num_envs == 0 || self.horizon == 0 || self.minibatch_size == 0 {
            return bad("num_envs, horizon and minibatch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.action_std > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate, action_std and max_grad_norm must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Projection,
    Policy,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Projection => "projection",
            ControllerKind::Policy => "policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CourseConfig {
    pub waypoints: Vec<[f64; 2]>,
    pub capture_radius: f64,
    /// Simulated seconds before the run is abandoned.
    pub timeout: f64,
    pub controller: ControllerKind,
    /// Float policy checkpoint used by the policy controller.
    pub checkpoint: Option<String>,
    /// Terrain roughness for course runs, m.
    pub roughness: f64,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            waypoints: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 3.0], [0.0, 3.0], [0.0, 0.0]],
            capture_radius: 0.25,
            timeout: 600.0,
            controller: ControllerKind::Projection,
            checkpoint: None,
            roughness: 0.0,
        }
    }
}

/// Swing-up jump trial: robot and motor overrides plus a setpoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpConfig {
    pub shell: ShellParams,
    pub motor: MotorModel,
    /// `[duration s, setpoint rad/s]` segments applied in order from rest.
    pub profile: Vec<[f64; 2]>,
    /// Resting time before the profile starts, s.
    pub settle: f64,
    /// Observation time after the profile ends, s.
    pub tail: f64,
}

impl Default for JumpConfig {
    fn default() -> Self {
        Self {
            shell: ShellParams { shell_mass: 0.2, pendulum_mass: 0.6, pendulum_arm: 0.08, ..ShellParams::default() },
            motor: MotorModel { max_torque: 3.0, velocity_gain: 0.5, ..MotorModel::default() },
            profile: vec![[0.6, 21.0]],
            settle: 0.3,
            tail: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopConfig {
    pub port: u16,
    /// Simulated seconds per wall-clock second.
    pub pacing: f64,
    pub broadcast_hz: f64,
    /// JSON-lines flight log appended by every session.
    pub flight_log: Option<String>,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self { port: 8765, pacing: 1.0, broadcast_hz: 30.0, flight_log: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub shell: ShellParams,
    pub dynamics: DynamicsConfig,
    pub controller: ProjectionGains,
    pub env: EpisodeConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub course: CourseConfig,
    pub jump: JumpConfig,
    pub teleop: TeleopConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            shell: ShellParams::default(),
            dynamics: DynamicsConfig::default(),
            controller: ProjectionGains::default(),
            env: EpisodeConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            course: CourseConfig::default(),
            jump: JumpConfig::default(),
            teleop: TeleopConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        ShellModel::new(self.shell.clone()).map_err(|e| Error::Config(format!("shell: {e}")))?;
        ShellModel::new(self.jump.shell.clone()).map_err(|e| Error::Config(format!("jump.shell: {e}")))?;
        self.dynamics.contact.validate()?;
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.dt <= 5e-3) {
            return Err(Error::Config(format!("dynamics.dt must lie in (0, 5e-3], got {}", d.dt)));
        }
        let e = &self.env;
        if !(e.episode_length > 0.0 && e.control_period > 0.0 && e.command_resample_period >= 0.0) {
            return Err(Error::Config("env periods must be positive".into()));
        }
        if !(e.roughness >= 0.0 && e.correlation_length > 0.0 && e.terrain_cell > 0.0 && e.terrain_half_extent > 0.0)
        {
            return Err(Error::Config("env terrain parameters invalid".into()));
        }
        if self.substeps() == 0 {
            return Err(Error::Config("control_period shorter than dt".into()));
        }
        let r = &self.reward;
        if ![r.w_speed, r.w_action_rate, r.w_spin, r.w_upright].iter().all(|w| w.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        self.train.validate()?;
        let c = &self.course;
        if c.waypoints.is_empty() || !(c.capture_radius > 0.0) || !(c.timeout > 0.0) {
            return Err(Error::Config("course needs waypoints, a positive capture radius and timeout".into()));
        }
        Ok(())
    }

    /// Physics steps per control step.
    pub fn substeps(&self) -> usize {
        (self.env.control_period / self.dynamics.dt).round() as usize
    }

    pub fn shell_model(&self) -> Result<ShellModel> {
        ShellModel::new(self.shell.clone())
    }

    pub fn robot(&self) -> Result<RobotModel> {
        RobotModel::with_contact_resolution(self.shell_model()?, self.dynamics.contact_resolution)
    }

    pub fn world(&self, terrain: Terrain) -> World {
        World { terrain, contact: self.dynamics.contact, contact_enabled: true, gravity: self.dynamics.gravity }
    }
}
