use rock_core::config::ControllerKind;
use rock_core::controller::{Command, MotorFrame, ProjectionController, ProjectionGains};
use rock_core::dynamics::{RobotModel, RobotState};
use rock_core::nn::{policy_action, Mlp};
use rock_core::observation::{action_to_setpoint, ObservationBuilder};
use rock_core::Result;

/// Turns the robot state and a commanded direction into a motor velocity
/// setpoint, once per control step.
#[derive(Debug, Clone)]
pub enum Driver {
    Projection(ProjectionController),
    Policy { net: Mlp, observer: ObservationBuilder, last_action: f64 },
}

impl Driver {
    pub fn projection(gains: ProjectionGains) -> Self {
        Driver::Projection(ProjectionController::new(gains))
    }

    pub fn policy(net: Mlp, heading_relative: bool) -> Self {
        Driver::Policy { net, observer: ObservationBuilder::new(heading_relative), last_action: 0.0 }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            Driver::Projection(_) => ControllerKind::Projection,
            Driver::Policy { .. } => ControllerKind::Policy,
        }
    }

    pub fn reset(&mut self) {
        match self {
            Driver::Projection(c) => c.reset(),
            Driver::Policy { observer, last_action, .. } => {
                observer.reset();
                *last_action = 0.0;
            }
        }
    }

    /// Setpoint in rad/s. A null command gives zero in both modes.
    pub fn setpoint(&mut self, robot: &RobotModel, state: &RobotState, cmd: Option<&Command>) -> Result<f64> {
        match self {
            Driver::Projection(c) => {
                let frame = MotorFrame::from_orientation(robot, &state.orientation);
                Ok(c.setpoint(&frame, cmd, state.pendulum_angle(), state.pendulum_velocity))
            }
            Driver::Policy { net, observer, last_action } => {
                let Some(cmd) = cmd else {
                    *last_action = 0.0;
                    return Ok(0.0);
                };
                let obs = observer.build(robot, state, cmd, *last_action);
                let action = policy_action(net, &obs)?;
                *last_action = action;
                Ok(action_to_setpoint(action))
            }
        }
    }
}
