use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rock_core::config::{ControllerKind, ScenarioConfig};
use rock_core::controller::Command;
use rock_core::dynamics::Simulator;
use rock_core::env::Env;
use rock_core::nn::Mlp;
use rock_core::{Error, Result};

use crate::driver::Driver;

/// Identifies a connected client within one server.
pub type ClientId = u64;

/// Client-to-server messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Command { dx: f64, dy: f64 },
    Mode { controller: String },
    Reset { seed: Option<u64> },
    Pause,
    Resume,
}

impl ClientMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ClientMessage::Command { .. } => "command",
            ClientMessage::Mode { .. } => "mode",
            ClientMessage::Reset { .. } => "reset",
            ClientMessage::Pause => "pause",
            ClientMessage::Resume => "resume",
        }
    }

    /// Parses one text frame; the error string is the reply message.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let value: Value = serde_json::from_str(text.trim()).map_err(|e| format!("malformed message: {e}"))?;
        let kind = match value.get("type") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err("malformed message: \"type\" must be a string".into()),
            None => return Err("malformed message: missing \"type\"".into()),
        };
        if !["command", "mode", "reset", "pause", "resume"].contains(&kind.as_str()) {
            return Err(format!("unknown message type \"{kind}\""));
        }
        serde_json::from_value(value).map_err(|e| format!("malformed {kind} message: {e}"))
    }
}

/// Server-to-client messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Ack {
        /// Type of the acknowledged message.
        of: String,
    },
    Error {
        message: String,
    },
    State(StateFrame),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Snapshot broadcast to every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    /// Session time, s: simulated seconds since the session started,
    /// continuing across resets so frames stay monotone.
    pub t: f64,
    pub pos: [f64; 3],
    /// Orientation quaternion (w, x, y, z), body to world.
    pub quat: [f64; 4],
    /// Pendulum angle in the motor frame, rad.
    pub pendulum: f64,
    /// Motor (pendulum relative) velocity, rad/s.
    pub motor_vel: f64,
    pub command: Option<[f64; 2]>,
    pub contact_count: usize,
    pub controller: String,
}

/// One live simulation plus the operator-facing control state.
#[derive(Debug)]
pub struct TeleopSession {
    pub id: String,
    cfg: Arc<ScenarioConfig>,
    policy: Option<Mlp>,
    driver: Driver,
    sim: Simulator,
    command: Option<Command>,
    paused: bool,
    seed: u64,
    /// Session time at the last reset.
    epoch: f64,
    contact_count: usize,
    /// Client that owns the controls, if any.
    driver_client: Option<ClientId>,
}

impl TeleopSession {
    pub fn new(id: impl Into<String>, cfg: Arc<ScenarioConfig>, policy: Option<Mlp>, seed: u64) -> Result<Self> {
        let sim = initial_sim(&cfg, seed)?;
        Ok(Self {
            id: id.into(),
            driver: Driver::projection(cfg.controller),
            cfg,
            policy,
            sim,
            command: None,
            paused: false,
            seed,
            epoch: 0.0,
            contact_count: 0,
            driver_client: None,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn command(&self) -> Option<Command> {
        self.command
    }

    pub fn controller(&self) -> ControllerKind {
        self.driver.kind()
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn driver_client(&self) -> Option<ClientId> {
        self.driver_client
    }

    /// Simulated seconds since the session started.
    pub fn time(&self) -> f64 {
        self.epoch + self.sim.state.time
    }

    /// Restores the scenario's initial distribution drawn from `seed`.
    /// The command is cleared; the controller mode is kept.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        let sim = initial_sim(&self.cfg, seed)?;
        self.epoch = self.time();
        self.sim = sim;
        self.seed = seed;
        self.command = None;
        self.contact_count = 0;
        self.driver.reset();
        Ok(())
    }

    /// Drops the driver role if `client` holds it.
    pub fn release(&mut self, client: ClientId) {
        if self.driver_client == Some(client) {
            self.driver_client = None;
        }
    }

    /// Applies one text frame from `client`; always returns the reply.
    /// The first client to send a control message becomes the driver;
    /// control messages from anyone else are rejected.
    pub fn handle_message(&mut self, client: ClientId, text: &str) -> ServerMessage {
        let msg = match ClientMessage::parse(text) {
            Ok(m) => m,
            Err(message) => return ServerMessage::Error { message },
        };
        match self.driver_client {
            Some(owner) if owner != client => {
                return ServerMessage::Error {
                    message: format!("read-only client: {} rejected, another client is driving", msg.type_name()),
                }
            }
            _ => {}
        }
        match self.apply(&msg) {
            Ok(()) => {
                self.driver_client = Some(client);
                ServerMessage::Ack { of: msg.type_name().into() }
            }
            Err(message) => ServerMessage::Error { message },
        }
    }

    fn apply(&mut self, msg: &ClientMessage) -> std::result::Result<(), String> {
        match msg {
            ClientMessage::Command { dx, dy } => {
                if !(dx.is_finite() && dy.is_finite()) {
                    return Err("command components must be finite".into());
                }
                self.command = Command::normalized(*dx, *dy);
            }
            ClientMessage::Mode { controller } => match controller.as_str() {
                "projection" => {
                    if self.driver.kind() != ControllerKind::Projection {
                        self.driver = Driver::projection(self.cfg.controller);
                    }
                }
                "policy" => {
                    let net = self.policy.clone().ok_or_else(|| "no policy loaded".to_string())?;
                    if self.driver.kind() != ControllerKind::Policy {
                        self.driver = Driver::policy(net, self.cfg.env.heading_relative);
                    }
                }
                other => return Err(format!("unknown controller \"{other}\"")),
            },
            ClientMessage::Reset { seed } => self.reset(seed.unwrap_or(self.seed)).map_err(|e| e.to_string())?,
            ClientMessage::Pause => self.paused = true,
            ClientMessage::Resume => self.paused = false,
        }
        Ok(())
    }

    /// Advances one control period with the latest command unless paused.
    /// A diverged simulation is reset to the session seed and reported.
    pub fn control_step(&mut self) -> Result<()> {
        if self.paused {
            return Ok(());
        }
        let setpoint = self.driver.setpoint(&self.sim.robot, &self.sim.state, self.command.as_ref())?;
        self.sim.motor.set_setpoint(setpoint);
        for _ in 0..self.cfg.substeps() {
            match self.sim.step() {
                Ok(out) => self.contact_count = out.contacts.len(),
                Err(e) => {
                    let command = self.command;
                    self.reset(self.seed)?;
                    self.command = command;
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    pub fn state_frame(&self) -> StateFrame {
        let s = &self.sim.state;
        let q = s.orientation.quaternion();
        StateFrame {
            t: self.time(),
            pos: s.position.into(),
            quat: [q.w, q.i, q.j, q.k],
            pendulum: s.pendulum_angle(),
            motor_vel: s.pendulum_velocity,
            command: self.command.map(|c| [c.direction().x, c.direction().y]),
            contact_count: self.contact_count,
            controller: self.driver.kind().as_str().into(),
        }
    }
}

fn initial_sim(cfg: &Arc<ScenarioConfig>, seed: u64) -> Result<Simulator> {
    let mut env = Env::new(cfg.clone())?;
    env.reset(seed)?;
    env.simulator().cloned().ok_or_else(|| Error::Usage("environment did not reset".into()))
}
