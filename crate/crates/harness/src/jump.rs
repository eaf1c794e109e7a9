//! Scripted swing-up jump.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use rock_core::config::{DynamicsConfig, JumpConfig};
use rock_core::dynamics::{
    jump_impulse_check, rolling_pose, ContactSample, JumpReport, RobotModel, RobotState, Simulator, World,
};
use rock_core::shell::ShellModel;
use rock_core::terrain::Terrain;
use rock_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct JumpTrial {
    pub report: JumpReport,
    /// Per-step contact record from the start of the profile.
    pub history: Vec<ContactSample>,
    /// Highest lowest-point clearance seen, m.
    pub peak_clearance: f64,
}

/// Runs `profile` (`[duration s, setpoint rad/s]` segments) from rest on flat
/// ground after `jump.settle` seconds, then holds zero for `jump.tail`
/// seconds, and evaluates the contact history.
pub fn jump_trial(jump: &JumpConfig, dynamics: &DynamicsConfig, profile: &[[f64; 2]]) -> Result<JumpTrial> {
    if profile.iter().any(|&[d, s]| !(d >= 0.0 && d.is_finite() && s.is_finite())) {
        return Err(Error::Config("jump profile segments need a non-negative duration and finite setpoint".into()));
    }
    let robot = RobotModel::with_contact_resolution(ShellModel::new(jump.shell.clone())?, dynamics.contact_resolution)?;
    let world = World { terrain: Terrain::flat(), contact: dynamics.contact, contact_enabled: true, gravity: dynamics.gravity };
    let pose = rolling_pose(&robot, 0.0);
    let mut motor = jump.motor;
    motor.set_setpoint(0.0);
    let dt = dynamics.dt;
    let mut sim = Simulator::new(robot, world, motor, RobotState::default(), dt);
    let z = sim.touching_height(0.0, 0.0, &pose, FRAC_PI_2);
    sim.state = RobotState::at_rest(Vector3::new(0.0, 0.0, z), pose).with_pendulum_angle(FRAC_PI_2);

    let steps = |seconds: f64| (seconds / dt).round() as usize;
    for _ in 0..steps(jump.settle) {
        sim.step()?;
    }
    let mut history = Vec::new();
    let mut peak: f64 = f64::MIN;
    let mut run = |sim: &mut Simulator, n: usize| -> Result<()> {
        for _ in 0..n {
            let out = sim.step()?;
            peak = peak.max(out.clearance);
            history.push(ContactSample { time: out.state.time, contact_count: out.contacts.len(), clearance: out.clearance });
        }
        Ok(())
    };
    for &[duration, setpoint] in profile {
        sim.motor.set_setpoint(setpoint);
        run(&mut sim, steps(duration))?;
    }
    sim.motor.set_setpoint(0.0);
    run(&mut sim, steps(jump.tail).max(1))?;
    let report = jump_impulse_check(&history)?;
    Ok(JumpTrial { report, history, peak_clearance: peak })
}
