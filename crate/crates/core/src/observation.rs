//! Policy observation: 15 scaled entries per frame, three frames stacked.
//!
//! Frame layout (index: content, scale):
//!
//! | idx   | entry                                   | scale       |
//! |-------|-----------------------------------------|-------------|
//! | 0     | last action                             | 1           |
//! | 1, 2  | command direction d_x, d_y              | 1           |
//! | 3..=6 | orientation quaternion w, x, y, z       | 1           |
//! | 7     | body angular velocity about w           | 1/24 s/rad  |
//! | 8, 9  | body angular velocity about u, v        | 1/12 s/rad  |
//! | 10    | motor (pendulum) angular velocity       | 1/37.5 s/rad|
//! | 11,12 | sin, cos of motor angle                 | 1           |
//! | 13,14 | sin, cos of projection target angle     | 1           |
//!
//! The stacked vector is `[frame_t, frame_{t-1}, frame_{t-2}]`. Every entry
//! is clipped to [-1, 1] after scaling.

use std::collections::VecDeque;

use nalgebra::Vector2;

use crate::controller::{target_angle, Command, MotorFrame, MAX_SETPOINT};
use crate::dynamics::{RobotModel, RobotState};

pub const FRAME_LEN: usize = 15;
pub const STACK: usize = 3;
pub const OBS_LEN: usize = FRAME_LEN * STACK;

pub const SCALE_SPIN_W: f64 = 1.0 / 24.0;
pub const SCALE_SPIN_UV: f64 = 1.0 / 12.0;
pub const SCALE_MOTOR_SPEED: f64 = 1.0 / 37.5;

pub type Frame = [f64; FRAME_LEN];
pub type Observation = [f64; OBS_LEN];

/// Maps a policy output to a motor velocity setpoint in rad/s.
pub fn action_to_setpoint(action: f64) -> f64 {
    MAX_SETPOINT * action.clamp(-1.0, 1.0)
}

/// Builds stacked observations for one environment.
#[derive(Debug, Clone, Default)]
pub struct ObservationBuilder {
    /// Express the command in the robot's heading frame instead of the world.
    pub heading_relative: bool,
    history: VecDeque<Frame>,
    last_projection: Option<f64>,
}

impl ObservationBuilder {
    pub fn new(heading_relative: bool) -> Self {
        Self { heading_relative, ..Self::default() }
    }

    /// Forget history; the next frame is replicated into all three slots.
    pub fn reset(&mut self) {
        self.history.clear();
        self.last_projection = None;
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Single scaled and clipped frame. Degenerate projection angles fall
    /// back to the previous one (zero before any is known).
    pub fn frame(&mut self, robot: &RobotModel, state: &RobotState, cmd: &Command, last_action: f64) -> Frame {
        let motor = MotorFrame::from_orientation(robot, &state.orientation);
        let theta = match target_angle(&motor, cmd) {
            Ok(t) => t,
            Err(_) => self.last_projection.unwrap_or(0.0),
        };
        self.last_projection = Some(theta);

        let d = if self.heading_relative { heading_relative(&motor, cmd.direction()) } else { cmd.direction() };
        let q = canonical_quaternion(state);
        let (u, v, w) = robot.motor_axes_body();
        let omega = state.angular_velocity;
        let motor_angle = state.pendulum_angle();

        let raw = [
            last_action,
            d.x,
            d.y,
            q[0],
            q[1],
            q[2],
            q[3],
            omega.dot(&w) * SCALE_SPIN_W,
            omega.dot(&u) * SCALE_SPIN_UV,
            omega.dot(&v) * SCALE_SPIN_UV,
            state.pendulum_velocity * SCALE_MOTOR_SPEED,
            motor_angle.sin(),
            motor_angle.cos(),
            theta.sin(),
            theta.cos(),
        ];
        raw.map(clip)
    }

    /// Push the current frame and return the stacked observation.
    pub fn build(&mut self, robot: &RobotModel, state: &RobotState, cmd: &Command, last_action: f64) -> Observation {
        let frame = self.frame(robot, state, cmd, last_action);
        self.push(frame)
    }

    pub fn push(&mut self, frame: Frame) -> Observation {
        if self.history.is_empty() {
            self.history.extend([frame; STACK - 1]);
        }
        self.history.push_front(frame);
        self.history.truncate(STACK);
        let mut out = [0.0; OBS_LEN];
        for (k, f) in self.history.iter().enumerate() {
            out[k * FRAME_LEN..(k + 1) * FRAME_LEN].copy_from_slice(f);
        }
        out
    }
}

fn clip(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

/// Orientation quaternion `(w, x, y, z)` with `w >= 0`, removing the double
/// cover so the policy sees one value per attitude.
fn canonical_quaternion(state: &RobotState) -> [f64; 4] {
    let q = state.orientation.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Command rotated into the rolling-heading frame (`w x z` projected on the
/// ground is the heading). Falls back to world frame when the motor axis is
/// vertical.
fn heading_relative(motor: &MotorFrame, d: Vector2<f64>) -> Vector2<f64> {
    let forward = Vector2::new(motor.w.y, -motor.w.x);
    let n = forward.norm();
    if n < 1e-9 {
        return d;
    }
    let (c, s) = (forward.x / n, forward.y / n);
    Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

#[cfg(test)]
mod tests {
    use nalgebra::{UnitQuaternion, Vector3};

    use super::*;
    use crate::dynamics::rolling_pose;
    use crate::shell::{ShellModel, ShellParams};

    fn robot() -> RobotModel {
        RobotModel::new(ShellModel::new(ShellParams::default()).unwrap()).unwrap()
    }

    #[test]
    fn action_map() {
        assert_eq!(action_to_setpoint(1.0), 21.0);
        assert_eq!(action_to_setpoint(-1.0), -21.0);
        assert_eq!(action_to_setpoint(0.0), 0.0);
        assert_eq!(action_to_setpoint(-0.5), -10.5);
        assert_eq!(action_to_setpoint(7.0), 21.0);
    }

    #[test]
    fn first_frame_is_replicated() {
        let r = robot();
        let mut b = ObservationBuilder::default();
        let state = RobotState::default();
        let obs = b.build(&r, &state, &Command::from_heading(0.3), 0.2);
        assert_eq!(obs[..15], obs[15..30]);
        assert_eq!(obs[..15], obs[30..]);
        assert_eq!(b.history_len(), 3);
    }

    #[test]
    fn frames_shift_back_in_time() {
        let r = robot();
        let mut b = ObservationBuilder::default();
        let state = RobotState::default();
        let cmd = Command::from_heading(0.0);
        b.build(&r, &state, &cmd, 0.1);
        b.build(&r, &state, &cmd, 0.2);
        let obs = b.build(&r, &state, &cmd, 0.3);
        assert_eq!([obs[0], obs[15], obs[30]], [0.3, 0.2, 0.1]);
    }

    #[test]
    fn quaternion_is_canonical() {
        let r = robot();
        let mut b = ObservationBuilder::default();
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(-0.5, 0.5, -0.5, 0.5));
        let state = RobotState { orientation: q, ..Default::default() };
        let obs = b.build(&r, &state, &Command::from_heading(0.0), 0.0);
        assert_eq!(&obs[3..7], &[0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn heading_relative_command_in_rolling_pose() {
        let r = robot();
        let mut b = ObservationBuilder::new(true);
        let state = RobotState::at_rest(Vector3::zeros(), rolling_pose(&r, std::f64::consts::FRAC_PI_2));
        // Heading is +y; a command along +y is straight ahead.
        let obs = b.build(&r, &state, &Command::from_heading(std::f64::consts::FRAC_PI_2), 0.0);
        assert!((obs[1] - 1.0).abs() < 1e-12 && obs[2].abs() < 1e-12, "{:?}", &obs[1..3]);
    }
}
