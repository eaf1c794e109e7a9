//! Analytic projection controller.
//!
//! The pendulum angle is chosen so that the ground-plane projection of the
//! pendulum displacement points along the commanded direction; a PD law then
//! turns the angle error into a motor velocity setpoint.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::angle::wrap_angle;
use crate::dynamics::RobotModel;
use crate::error::{Error, Result};

/// Largest velocity setpoint the controller will ever request, rad/s.
pub const MAX_SETPOINT: f64 = 21.0;

const FRAME_TOLERANCE: f64 = 1e-9;
const DEGENERATE: f64 = 1e-9;

/// Motor frame in world coordinates; `w` is the motor axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorFrame {
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl MotorFrame {
    pub fn new(u: Vector3<f64>, v: Vector3<f64>, w: Vector3<f64>) -> Result<Self> {
        let unit = |a: &Vector3<f64>| (a.norm() - 1.0).abs() < FRAME_TOLERANCE;
        if !(unit(&u) && unit(&v) && unit(&w)) {
            return Err(Error::InputDomain("motor frame axes must be unit vectors".into()));
        }
        if u.dot(&v).abs() > FRAME_TOLERANCE
            || v.dot(&w).abs() > FRAME_TOLERANCE
            || u.dot(&w).abs() > FRAME_TOLERANCE
            || (u.cross(&v) - w).norm() > FRAME_TOLERANCE
        {
            return Err(Error::InputDomain("motor frame must be right-handed orthonormal".into()));
        }
        Ok(Self { u, v, w })
    }

    /// World-frame motor axes of a robot in the given orientation.
    pub fn from_orientation(robot: &RobotModel, orientation: &UnitQuaternion<f64>) -> Self {
        let (u, v, w) = robot.motor_axes_body();
        Self { u: orientation * u, v: orientation * v, w: orientation * w }
    }
}

/// Unit direction in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    d: Vector2<f64>,
}

impl Command {
    /// Requires `|d| = 1` within 1e-9.
    pub fn new(dx: f64, dy: f64) -> Result<Self> {
        let d = Vector2::new(dx, dy);
        if !((d.norm() - 1.0).abs() <= 1e-9) {
            return Err(Error::InputDomain(format!("command must be a unit vector, got ({dx}, {dy})")));
        }
        Ok(Self { d })
    }

    /// Normalizes `(dx, dy)`; vectors shorter than 1e-6 give `None`.
    pub fn normalized(dx: f64, dy: f64) -> Option<Self> {
        let d = Vector2::new(dx, dy);
        let n = d.norm();
        (n.is_finite() && n > 1e-6).then(|| Self { d: d / n })
    }

    pub fn from_heading(heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Self { d: Vector2::new(c, s) }
    }

    pub fn direction(&self) -> Vector2<f64> {
        self.d
    }
}

/// Pendulum angle whose displacement projects onto the ground along `d`.
///
/// Returns a degenerate-command error when both atan2 arguments vanish: the
/// motor axis is horizontal and the pendulum plane projects onto the line
/// through `d`.
pub fn target_angle(frame: &MotorFrame, cmd: &Command) -> Result<f64> {
    let (u, v, d) = (frame.u, frame.v, cmd.d);
    let y = u.x * d.y - u.y * d.x;
    let x = v.y * d.x - v.x * d.y;
    if y.abs() < DEGENERATE && x.abs() < DEGENERATE {
        return Err(Error::DegenerateCommand);
    }
    let theta = y.atan2(x);
    Ok(wrap_angle(if frame.w.z < 0.0 { theta + std::f64::consts::PI } else { theta }))
}

/// Pendulum displacement from the centroid for angle `theta`.
pub fn pendulum_vector(frame: &MotorFrame, theta: f64, arm: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    (frame.u * c + frame.v * s) * arm
}

pub fn project_to_ground(p: &Vector3<f64>) -> Vector2<f64> {
    p.xy()
}

/// PD law on the wrapped angle error, clamped to ±21 rad/s.
pub fn pd_track(target: f64, theta: f64, pendulum_velocity: f64, kp: f64, kd: f64) -> f64 {
    let error = wrap_angle(target - theta);
    (kp * error - kd * pendulum_velocity).clamp(-MAX_SETPOINT, MAX_SETPOINT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionGains {
    /// rad/s per rad
    pub kp: f64,
    pub kd: f64,
}

impl Default for ProjectionGains {
    fn default() -> Self {
        Self { kp: 20.0, kd: 0.5 }
    }
}

/// Stateful wrapper that holds the previous target through degenerate
/// configurations.
#[derive(Debug, Clone, Default)]
pub struct ProjectionController {
    pub gains: ProjectionGains,
    held: Option<f64>,
}

impl ProjectionController {
    pub fn new(gains: ProjectionGains) -> Self {
        Self { gains, held: None }
    }

    pub fn reset(&mut self) {
        self.held = None;
    }

    pub fn held_target(&self) -> Option<f64> {
        self.held
    }

    /// Velocity setpoint for the current pendulum state. With no command the
    /// setpoint is zero; a degenerate command keeps the previous target (or
    /// the current angle if there is none yet).
    pub fn setpoint(&mut self, frame: &MotorFrame, cmd: Option<&Command>, theta: f64, pendulum_velocity: f64) -> f64 {
        let Some(cmd) = cmd else {
            return 0.0;
        };
        let target = match target_angle(frame, cmd) {
            Ok(t) => t,
            Err(_) => self.held.unwrap_or(theta),
        };
        self.held = Some(target);
        pd_track(target, theta, pendulum_velocity, self.gains.kp, self.gains.kd)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    fn frame(u: [f64; 3], v: [f64; 3], w: [f64; 3]) -> MotorFrame {
        MotorFrame::new(Vector3::from(u), Vector3::from(v), Vector3::from(w)).unwrap()
    }

    #[test]
    fn upright_frame_examples() {
        let f = frame([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert_eq!(target_angle(&f, &Command::new(1.0, 0.0).unwrap()).unwrap(), 0.0);
        let t = target_angle(&f, &Command::new(0.0, 1.0).unwrap()).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15);
        let proj = project_to_ground(&pendulum_vector(&f, t, 1.0));
        assert!((proj - Vector2::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn inverted_axis_takes_other_branch() {
        let f = frame([1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]);
        let t = target_angle(&f, &Command::new(0.0, 1.0).unwrap()).unwrap();
        assert!((t + FRAC_PI_2).abs() < 1e-15, "{t}");
        let p = pendulum_vector(&f, t, 0.05);
        assert!((p - Vector3::new(0.0, 0.05, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_command_is_reported() {
        // Upright rolling pose: the motor axis is horizontal and both u and v
        // project onto the rolling line, so both atan2 arguments vanish for a
        // command along that line.
        let f = frame([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]);
        let r = target_angle(&f, &Command::new(1.0, 0.0).unwrap());
        assert!(matches!(r, Err(Error::DegenerateCommand)));
    }

    #[test]
    fn controller_holds_target_when_degenerate() {
        let good = frame([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        let bad = frame([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]);
        let cmd = Command::new(1.0, 0.0).unwrap();
        let mut c = ProjectionController::default();
        c.setpoint(&good, Some(&cmd), 0.3, 0.0);
        assert_eq!(c.held_target(), Some(0.0));
        let sp = c.setpoint(&bad, Some(&cmd), 0.3, 0.0);
        assert_eq!(c.held_target(), Some(0.0));
        assert!((sp - 20.0 * -0.3).abs() < 1e-12);
        assert_eq!(c.setpoint(&good, None, 0.3, 4.0), 0.0);
    }

    #[test]
    fn pd_examples() {
        assert_eq!(pd_track(0.0, 0.0, 0.0, 20.0, 0.5), 0.0);
        assert_eq!(pd_track(0.5, 0.0, 0.0, 10.0, 0.0), 5.0);
        let a = pd_track(PI, 0.0, 0.0, 3.0, 0.0);
        let b = pd_track(-PI, 0.0, 0.0, 3.0, 0.0);
        assert_eq!(a, b);
        assert_eq!(a, 3.0 * PI);
        assert_eq!(pd_track(3.0, 0.0, 0.0, 100.0, 0.0), MAX_SETPOINT);
    }

    #[test]
    fn ground_projection_drops_z() {
        assert_eq!(project_to_ground(&Vector3::new(0.0, 0.0, 1.0)), Vector2::zeros());
        assert_eq!(project_to_ground(&Vector3::new(3.0, 4.0, -2.0)), Vector2::new(3.0, 4.0));
    }

    #[test]
    fn command_normalization() {
        let c = Command::normalized(0.6, 0.8).unwrap();
        assert!((c.direction() - Vector2::new(0.6, 0.8)).norm() < 1e-15);
        assert!(Command::normalized(0.0, 0.0).is_none());
        assert!(Command::normalized(3.0, 4.0).is_some());
        assert!(Command::new(3.0, 4.0).is_err());
    }

    #[test]
    fn frame_validation() {
        assert!(MotorFrame::new(Vector3::x(), Vector3::y(), -Vector3::z()).is_err());
        assert!(MotorFrame::new(Vector3::x() * 2.0, Vector3::y(), Vector3::z()).is_err());
    }
}
