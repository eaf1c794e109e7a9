//! Coupled shell + pendulum rigid-body dynamics.
//!
//! The pendulum is a point mass on a massless arm hinged at the shell
//! centroid and rotating about the motor axis, so the system has seven
//! generalized speeds: centroid velocity (world), shell angular velocity
//! (body) and the pendulum joint rate. Accelerations come from the 7x7 mass
//! matrix; time stepping is velocity Verlet.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::angle::wrap_angle;
use crate::contact::{self, Contact, ContactModel};
use crate::error::{Error, Result};
use crate::shell::{MassProperties, ShellModel};
use crate::terrain::Terrain;

pub const GRAVITY: f64 = 9.81;

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = SVector<f64, 7>;

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Shell centroid, world frame.
    pub position: Vector3<f64>,
    /// Body to world.
    pub orientation: UnitQuaternion<f64>,
    /// Centroid velocity, world frame.
    pub linear_velocity: Vector3<f64>,
    /// Shell angular velocity, body frame.
    pub angular_velocity: Vector3<f64>,
    pub(crate) pendulum_unwrapped: f64,
    pub pendulum_velocity: f64,
    pub time: f64,
    #[serde(skip)]
    pub(crate) accel: Option<CachedAccel>,
}

impl Default for RobotState {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            pendulum_unwrapped: 0.0,
            pendulum_velocity: 0.0,
            time: 0.0,
            accel: None,
        }
    }
}

impl RobotState {
    /// At rest at `position` with the given orientation.
    pub fn at_rest(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation, ..Self::default() }
    }

    /// Pendulum angle relative to the shell, wrapped to `(-pi, pi]`.
    pub fn pendulum_angle(&self) -> f64 {
        wrap_angle(self.pendulum_unwrapped)
    }

    pub fn pendulum_angle_unwrapped(&self) -> f64 {
        self.pendulum_unwrapped
    }

    pub fn set_pendulum_angle(&mut self, angle: f64) {
        self.pendulum_unwrapped = angle;
        self.accel = None;
    }

    /// Drops the acceleration carried over from the last step. Call after
    /// editing positions or velocities of a stepped state by hand.
    pub fn invalidate(&mut self) {
        self.accel = None;
    }

    pub fn with_pendulum_angle(mut self, angle: f64) -> Self {
        self.set_pendulum_angle(angle);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.pendulum_unwrapped.is_finite()
            && self.pendulum_velocity.is_finite()
            && self.time.is_finite()
    }
}

/// Velocity-tracking actuator between shell and pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorModel {
    pub velocity_setpoint: f64,
    pub max_torque: f64,
    pub velocity_gain: f64,
    pub max_speed: f64,
}

impl Default for MotorModel {
    fn default() -> Self {
        Self { velocity_setpoint: 0.0, max_torque: 0.3, velocity_gain: 0.05, max_speed: 21.0 }
    }
}

impl MotorModel {
    /// Motor that applies no torque at all.
    pub fn off() -> Self {
        Self { max_torque: 0.0, ..Self::default() }
    }

    pub fn set_setpoint(&mut self, setpoint: f64) {
        self.velocity_setpoint = setpoint.clamp(-self.max_speed, self.max_speed);
    }

    /// Torque applied to the pendulum; the shell receives the negative.
    pub fn torque(&self, pendulum_velocity: f64) -> f64 {
        let setpoint = self.velocity_setpoint.clamp(-self.max_speed, self.max_speed);
        (self.velocity_gain * (setpoint - pendulum_velocity)).clamp(-self.max_torque, self.max_torque)
    }
}

pub fn motor_torque(motor: &MotorModel, pendulum_velocity: f64) -> f64 {
    motor.torque(pendulum_velocity)
}

/// Everything outside the robot: ground, contact law and gravity.
#[derive(Debug, Clone)]
pub struct World {
    pub terrain: Terrain,
    pub contact: ContactModel,
    pub contact_enabled: bool,
    pub gravity: f64,
}

impl Default for World {
    fn default() -> Self {
        Self { terrain: Terrain::flat(), contact: ContactModel::default(), contact_enabled: true, gravity: GRAVITY }
    }
}

/// Shell plus precomputed mass properties and contact samples.
#[derive(Debug, Clone)]
pub struct RobotModel {
    shell: ShellModel,
    mass: MassProperties,
    pub(crate) contact_vertices: Vec<Vector3<f64>>,
    pub(crate) contact_spacing: f64,
    u_body: Vector3<f64>,
    v_body: Vector3<f64>,
    w_body: Vector3<f64>,
}

impl RobotModel {
    pub const DEFAULT_CONTACT_RESOLUTION: usize = 32;

    pub fn new(shell: ShellModel) -> Result<Self> {
        Self::with_contact_resolution(shell, Self::DEFAULT_CONTACT_RESOLUTION)
    }

    pub fn with_contact_resolution(shell: ShellModel, contact_resolution: usize) -> Result<Self> {
        let mass = shell.mass_properties()?;
        let contact_mesh = shell.with_resolution(contact_resolution)?.build_mesh();
        let w_body = shell.axis();
        let u_body = shell.azimuth_ref();
        let v_body = w_body.cross(&u_body);
        Ok(Self {
            contact_spacing: std::f64::consts::PI / contact_resolution as f64,
            contact_vertices: contact_mesh.vertices,
            mass,
            shell,
            u_body,
            v_body,
            w_body,
        })
    }

    pub fn shell(&self) -> &ShellModel {
        &self.shell
    }

    pub fn mass(&self) -> &MassProperties {
        &self.mass
    }

    /// Motor frame `(u, v, w)` expressed in the body frame.
    pub fn motor_axes_body(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        (self.u_body, self.v_body, self.w_body)
    }

    /// Pendulum mass position relative to the centroid, body frame.
    pub fn pendulum_offset_body(&self, angle: f64) -> Vector3<f64> {
        let (s, c) = angle.sin_cos();
        (self.u_body * c + self.v_body * s) * self.mass.pendulum_arm
    }

    pub fn system_com(&self, state: &RobotState) -> Vector3<f64> {
        let mp = self.mass.pendulum_mass;
        let r = state.orientation * self.pendulum_offset_body(state.pendulum_unwrapped);
        state.position + r * (mp / self.mass.total_mass)
    }

    fn pendulum_world_velocity(&self, state: &RobotState) -> Vector3<f64> {
        let r = self.pendulum_offset_body(state.pendulum_unwrapped);
        let omega = state.angular_velocity + self.w_body * state.pendulum_velocity;
        state.linear_velocity + state.orientation * omega.cross(&r)
    }

    pub fn kinetic_energy(&self, state: &RobotState) -> f64 {
        let m = &self.mass;
        let w = &state.angular_velocity;
        0.5 * m.shell_mass * state.linear_velocity.norm_squared()
            + 0.5 * w.dot(&(m.shell_inertia * w))
            + 0.5 * m.pendulum_mass * self.pendulum_world_velocity(state).norm_squared()
    }

    pub fn potential_energy(&self, state: &RobotState, gravity: f64) -> f64 {
        gravity * self.mass.total_mass * self.system_com(state).z
    }

    pub fn mechanical_energy(&self, state: &RobotState, gravity: f64) -> f64 {
        self.kinetic_energy(state) + self.potential_energy(state, gravity)
    }

    /// Angular momentum about the system center of mass, world frame.
    pub fn angular_momentum(&self, state: &RobotState) -> Vector3<f64> {
        let m = &self.mass;
        let com = self.system_com(state);
        let pendulum = state.position + state.orientation * self.pendulum_offset_body(state.pendulum_unwrapped);
        state.orientation * (m.shell_inertia * state.angular_velocity)
            + (state.position - com).cross(&state.linear_velocity) * m.shell_mass
            + (pendulum - com).cross(&self.pendulum_world_velocity(state)) * m.pendulum_mass
    }

    fn mass_matrix(&self, state: &RobotState) -> Mat7 {
        let m = &self.mass;
        let mp = m.pendulum_mass;
        let r = self.pendulum_offset_body(state.pendulum_unwrapped);
        let t = self.w_body.cross(&r);
        let rx = r.cross_matrix();

        let mut mm = Mat7::zeros();
        mm.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * m.total_mass));
        mm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rx * mp));
        mm.fixed_view_mut::<3, 1>(0, 6).copy_from(&(t * mp));
        mm.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rx * mp));
        mm.fixed_view_mut::<3, 3>(3, 3).copy_from(&(m.shell_inertia - rx * rx * mp));
        mm.fixed_view_mut::<3, 1>(3, 6).copy_from(&(r.cross(&t) * mp));
        mm.fixed_view_mut::<1, 3>(6, 0).copy_from(&(t.transpose() * mp));
        mm.fixed_view_mut::<1, 3>(6, 3).copy_from(&(r.cross(&t).transpose() * mp));
        mm[(6, 6)] = mp * t.norm_squared();
        mm
    }

    pub(crate) fn mass_cholesky(&self, state: &RobotState) -> Cholesky<f64, nalgebra::U7> {
        Cholesky::new(self.mass_matrix(state)).expect("mass matrix is positive definite for positive masses")
    }

    /// Velocity-dependent and gravity terms of the right-hand side.
    fn free_forces(&self, state: &RobotState, gravity: f64, motor_torque: f64) -> Vec7 {
        let m = &self.mass;
        let mp = m.pendulum_mass;
        let r = self.pendulum_offset_body(state.pendulum_unwrapped);
        let t = self.w_body.cross(&r);
        let w = state.angular_velocity;
        let big_omega = w + self.w_body * state.pendulum_velocity;
        let bias = w.cross(&big_omega.cross(&r)) + big_omega.cross(&t) * state.pendulum_velocity;
        let g_body = state.orientation.inverse_transform_vector(&Vector3::new(0.0, 0.0, -gravity));

        // Motor reaction: the pendulum receives +tau about w, the shell -tau.
        let shell_motor = -self.w_body * motor_torque;
        let pendulum_motor = self.w_body * motor_torque;
        debug_assert!((shell_motor + pendulum_motor).norm() == 0.0);

        let lin = g_body * m.total_mass - bias * mp;
        let rot = r.cross(&g_body) * mp - w.cross(&(m.shell_inertia * w)) - r.cross(&bias) * mp
            + shell_motor
            + pendulum_motor;
        let joint = t.dot(&g_body) * mp - t.dot(&bias) * mp + pendulum_motor.dot(&self.w_body);

        let mut f = Vec7::zeros();
        f.fixed_rows_mut::<3>(0).copy_from(&lin);
        f.fixed_rows_mut::<3>(3).copy_from(&rot);
        f[6] = joint;
        f
    }
}

/// Result of one physics step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: RobotState,
    /// Contact set at the end of the step.
    pub contacts: Vec<Contact>,
    /// Lowest shell point above the terrain at the end of the step
    /// (negative when penetrating).
    pub clearance: f64,
    pub motor_torque: f64,
}

/// Acceleration evaluated at the end of the previous step, reused for the
/// first half kick of the next one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CachedAccel {
    /// Linear (world), angular (body), joint.
    acc: [f64; 7],
    motor_key: [u64; 4],
}

fn motor_key(motor: &MotorModel) -> [u64; 4] {
    [motor.velocity_setpoint, motor.max_torque, motor.velocity_gain, motor.max_speed].map(f64::to_bits)
}

struct Evaluation {
    acc: [f64; 7],
    contacts: Vec<Contact>,
    clearance: f64,
    motor_torque: f64,
}

fn evaluate(
    state: &RobotState,
    robot: &RobotModel,
    motor: &MotorModel,
    world: &World,
    dt: f64,
    step_index: u64,
) -> Result<Evaluation> {
    let chol = Cholesky::new(robot.mass_matrix(state))
        .ok_or_else(|| Error::Diverged { step: step_index, what: "mass matrix not positive definite".into() })?;

    let tau = motor.torque(state.pendulum_velocity);
    let mut forces = robot.free_forces(state, world.gravity, tau);

    let probe = if world.contact_enabled {
        contact::probe(state, robot, &world.terrain)
    } else {
        contact::Probe::separated()
    };
    let contacts = match probe.hit {
        Some(hit) => {
            let c = contact::resolve_hit(state, &world.contact, &hit, &chol, dt);
            let f_body = state.orientation.inverse_transform_vector(&c.force);
            let torque = hit.body_point.cross(&f_body) + state.orientation.inverse_transform_vector(&c.rolling_torque);
            for i in 0..3 {
                forces[i] += f_body[i];
                forces[3 + i] += torque[i];
            }
            vec![c]
        }
        None => Vec::new(),
    };

    let body = chol.solve(&forces);
    let lin = state.orientation * Vector3::new(body[0], body[1], body[2]);
    let acc = [lin.x, lin.y, lin.z, body[3], body[4], body[5], body[6]];
    if acc.iter().any(|a| !a.is_finite()) {
        return Err(Error::Diverged { step: step_index, what: "non-finite acceleration".into() });
    }
    Ok(Evaluation { acc, contacts, clearance: probe.clearance, motor_torque: tau })
}

fn kick(state: &mut RobotState, acc: &[f64; 7], h: f64) {
    state.linear_velocity += Vector3::new(acc[0], acc[1], acc[2]) * h;
    state.angular_velocity += Vector3::new(acc[3], acc[4], acc[5]) * h;
    state.pendulum_velocity += acc[6] * h;
}

/// Advance one step with velocity Verlet: half kick with the acceleration at
/// the start of the step, drift with the half-step velocities, then half
/// kick with the acceleration re-evaluated at the new configuration. The end
/// acceleration is cached in the returned state, so each step costs one
/// force evaluation. `step_index` only labels divergence errors.
pub fn step(
    state: &RobotState,
    robot: &RobotModel,
    motor: &MotorModel,
    world: &World,
    dt: f64,
    step_index: u64,
) -> Result<StepOutcome> {
    if !(dt > 0.0 && dt <= 5e-3) {
        return Err(Error::InputDomain(format!("dt must lie in (0, 5e-3], got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Diverged { step: step_index, what: "non-finite input state".into() });
    }

    let key = motor_key(motor);
    let start_acc = match state.accel {
        Some(cached) if cached.motor_key == key => cached.acc,
        _ => evaluate(state, robot, motor, world, dt, step_index)?.acc,
    };

    let mut next = state.clone();
    kick(&mut next, &start_acc, 0.5 * dt);
    next.position += next.linear_velocity * dt;
    let q = state.orientation * UnitQuaternion::from_scaled_axis(next.angular_velocity * dt);
    next.orientation = UnitQuaternion::new_normalize(q.into_inner());
    next.pendulum_unwrapped += next.pendulum_velocity * dt;
    next.time += dt;
    if !next.is_finite() {
        return Err(Error::Diverged { step: step_index, what: "non-finite state after drift".into() });
    }

    let end = evaluate(&next, robot, motor, world, dt, step_index)?;
    kick(&mut next, &end.acc, 0.5 * dt);
    next.accel = Some(CachedAccel { acc: end.acc, motor_key: key });

    if !next.is_finite() {
        return Err(Error::Diverged { step: step_index, what: "non-finite state after integration".into() });
    }
    Ok(StepOutcome { state: next, contacts: end.contacts, clearance: end.clearance, motor_torque: end.motor_torque })
}

/// Per-step contact record used by the liftoff check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSample {
    pub time: f64,
    pub contact_count: usize,
    pub clearance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpReport {
    pub airborne: bool,
    pub clearance: f64,
    pub duration: f64,
}

pub const MIN_AIRBORNE_WINDOW: f64 = 0.05;

/// Scans a step history for contiguous contact-free windows. The first
/// window lasting at least 50 ms is reported as airborne; otherwise the
/// longest shorter window is reported with `airborne = false`.
pub fn jump_impulse_check(history: &[ContactSample]) -> Result<JumpReport> {
    if history.is_empty() {
        return Err(Error::InputDomain("empty contact history".into()));
    }
    let spacing = |i: usize| -> f64 {
        if i > 0 {
            history[i].time - history[i - 1].time
        } else if history.len() > 1 {
            history[1].time - history[0].time
        } else {
            0.0
        }
    };

    let mut best = JumpReport { airborne: false, clearance: 0.0, duration: 0.0 };
    let mut i = 0;
    while i < history.len() {
        if history[i].contact_count != 0 {
            i += 1;
            continue;
        }
        let start = i;
        let mut clearance = f64::MIN;
        while i < history.len() && history[i].contact_count == 0 {
            clearance = clearance.max(history[i].clearance);
            i += 1;
        }
        let duration = history[i - 1].time - history[start].time + spacing(start);
        let window = JumpReport { airborne: false, clearance: clearance.max(0.0), duration };
        if duration >= MIN_AIRBORNE_WINDOW - 1e-12 {
            return Ok(JumpReport { airborne: true, ..window });
        }
        if duration > best.duration {
            best = window;
        }
    }
    Ok(best)
}

/// Owns one robot, its world and state; steps physics at a fixed `dt`.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub robot: RobotModel,
    pub world: World,
    pub motor: MotorModel,
    pub state: RobotState,
    pub dt: f64,
    steps: u64,
}

impl Simulator {
    pub fn new(robot: RobotModel, world: World, motor: MotorModel, state: RobotState, dt: f64) -> Self {
        Self { robot, world, motor, state, dt, steps: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let out = step(&self.state, &self.robot, &self.motor, &self.world, self.dt, self.steps)?;
        self.steps += 1;
        self.state = out.state.clone();
        Ok(out)
    }

    /// Height of the centroid at which the shell just touches the terrain
    /// below `(x, y)` in the given orientation.
    pub fn touching_height(&self, x: f64, y: f64, orientation: &UnitQuaternion<f64>, pendulum: f64) -> f64 {
        let probe_state = RobotState {
            position: Vector3::new(x, y, 0.0),
            orientation: *orientation,
            ..RobotState::default()
        }
        .with_pendulum_angle(pendulum);
        contact::touching_height(&probe_state, &self.robot, &self.world.terrain)
    }
}

/// Orientation with the motor axis along world +y and `u` along world +x,
/// i.e. the upright rolling pose, then yawed by `yaw` about world z.
pub fn rolling_pose(robot: &RobotModel, yaw: f64) -> UnitQuaternion<f64> {
    let (u, v, w) = robot.motor_axes_body();
    let body = Matrix3::from_columns(&[u, v, w]);
    let world = Matrix3::from_columns(&[Vector3::<f64>::x(), -Vector3::z(), Vector3::y()]);
    let base = UnitQuaternion::from_matrix(&(world * body.transpose()));
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * base
}
