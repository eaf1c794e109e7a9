//! Penalty contact between the shell and the terrain.
//!
//! Only the deepest point is resolved. Candidates come from the contact mesh
//! vertices facing the ground; the best one is refined by a pattern search
//! over surface directions.

use nalgebra::{Cholesky, Matrix3, SMatrix, UnitQuaternion, Vector3, U7};
use serde::{Deserialize, Serialize};

use crate::dynamics::{RobotModel, RobotState};
use crate::terrain::Terrain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactModel {
    /// N/m
    pub normal_stiffness: f64,
    /// N*s/m
    pub normal_damping: f64,
    pub friction_mu: f64,
    /// Slip speed below which friction grows linearly, m/s.
    pub friction_regularization: f64,
    /// Rolling resistance: torque per newton of normal load per rad/s of
    /// shell spin about horizontal axes, m*s.
    pub rolling_damping: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            normal_stiffness: 2e4,
            normal_damping: 50.0,
            friction_mu: 0.8,
            friction_regularization: 1e-3,
            rolling_damping: 3e-3,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.normal_stiffness > 0.0
            && self.normal_damping >= 0.0
            && self.friction_mu >= 0.0
            && self.friction_regularization > 0.0
            && self.rolling_damping >= 0.0)
        {
            return Err(crate::Error::Config(format!("invalid contact model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// Deepest shell point, world frame.
    pub point: Vector3<f64>,
    /// Terrain normal at the contact.
    pub normal: Vector3<f64>,
    pub penetration: f64,
    /// Total force on the shell (normal plus friction), world frame.
    pub force: Vector3<f64>,
    pub normal_force: f64,
    /// Rolling-resistance torque on the shell, world frame.
    pub rolling_torque: Vector3<f64>,
    /// Contact point relative to the centroid, body frame.
    pub body_point: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub body_point: Vector3<f64>,
    pub world_point: Vector3<f64>,
    pub penetration: f64,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Probe {
    pub hit: Option<Hit>,
    pub clearance: f64,
}

impl Probe {
    pub fn separated() -> Self {
        Self { hit: None, clearance: f64::INFINITY }
    }
}

struct Sample {
    body_point: Vector3<f64>,
    world_point: Vector3<f64>,
    penetration: f64,
    normal: Vector3<f64>,
}

fn sample(
    position: &Vector3<f64>,
    orientation: &UnitQuaternion<f64>,
    terrain: &Terrain,
    body_point: Vector3<f64>,
) -> Sample {
    let world_point = position + orientation * body_point;
    let normal = terrain.normal(world_point.x, world_point.y);
    let penetration = (terrain.height(world_point.x, world_point.y) - world_point.z) * normal.z;
    Sample { body_point, world_point, penetration, normal }
}

/// Deepest point of the shell below the terrain surface, or the clearance
/// of the lowest point when separated.
pub(crate) fn probe(state: &RobotState, robot: &RobotModel, terrain: &Terrain) -> Probe {
    let down_body = state.orientation.inverse_transform_vector(&-Vector3::z());
    let mut best: Option<Sample> = None;
    for v in &robot.contact_vertices {
        if v.dot(&down_body) <= 0.0 {
            continue;
        }
        let s = sample(&state.position, &state.orientation, terrain, *v);
        if best.as_ref().is_none_or(|b| s.penetration > b.penetration) {
            best = Some(s);
        }
    }
    let Some(start) = best else {
        return Probe::separated();
    };

    let shell = robot.shell();
    let n0 = start.body_point.normalize();
    let helper = if n0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n0.cross(&helper).normalize();
    let t2 = n0.cross(&t1);
    let eval = |a: f64, b: f64| {
        let point = shell.surface_point(&(n0 + t1 * a + t2 * b));
        sample(&state.position, &state.orientation, terrain, point)
    };

    let (mut a, mut b) = (0.0, 0.0);
    let mut current = start;
    let mut h = robot.contact_spacing;
    let mut iterations = 0;
    while h > 1e-10 && iterations < 400 {
        iterations += 1;
        let mut moved = false;
        for (da, db) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let s = eval(a + da, b + db);
            if s.penetration > current.penetration {
                current = s;
                a += da;
                b += db;
                moved = true;
                break;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }

    let clearance = -current.penetration;
    let hit = (current.penetration > 0.0).then_some(Hit {
        body_point: current.body_point,
        world_point: current.world_point,
        penetration: current.penetration,
        normal: current.normal,
    });
    Probe { hit, clearance }
}

/// Centroid height at which the shell touches the terrain without penetrating.
pub(crate) fn touching_height(state: &RobotState, robot: &RobotModel, terrain: &Terrain) -> f64 {
    let mut s = state.clone();
    for _ in 0..4 {
        let p = probe(&s, robot, terrain);
        if p.clearance.abs() < 1e-12 {
            break;
        }
        s.position.z -= p.clearance;
    }
    s.position.z
}

pub(crate) fn resolve_hit(
    state: &RobotState,
    model: &ContactModel,
    hit: &Hit,
    mass_chol: &Cholesky<f64, U7>,
    dt: f64,
) -> Contact {
    let r = hit.body_point;
    let n = hit.normal;
    let v_contact = state.linear_velocity + state.orientation * state.angular_velocity.cross(&r);
    let v_normal = v_contact.dot(&n);
    let normal_force = (model.normal_stiffness * hit.penetration - model.normal_damping * v_normal).max(0.0);

    let v_tangent = v_contact - n * v_normal;
    let slip = v_tangent.norm();
    let mut friction = Vector3::zeros();
    if slip > 0.0 && normal_force > 0.0 && model.friction_mu > 0.0 {
        let dir = v_tangent / slip;
        let coulomb = model.friction_mu * normal_force * (slip / model.friction_regularization).min(1.0);
        // Largest force that does not reverse the slip within one step.
        let dir_body = state.orientation.inverse_transform_vector(&dir);
        let compliance = contact_compliance(&r, mass_chol);
        let step_limit = slip / (dir_body.dot(&(compliance * dir_body)) * dt);
        friction = -dir * coulomb.min(step_limit);
    }

    let spin = state.orientation * state.angular_velocity;
    let rolling_torque = -(spin - n * spin.dot(&n)) * (model.rolling_damping * normal_force);

    Contact {
        point: hit.world_point,
        normal: n,
        penetration: hit.penetration,
        force: n * normal_force + friction,
        normal_force,
        rolling_torque,
        body_point: r,
    }
}

/// Body-frame velocity response of the contact point to a unit impulse there.
fn contact_compliance(r: &Vector3<f64>, mass_chol: &Cholesky<f64, U7>) -> Matrix3<f64> {
    let mut jt = SMatrix::<f64, 7, 3>::zeros();
    jt.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    jt.fixed_view_mut::<3, 3>(3, 0).copy_from(&r.cross_matrix());
    let minv_jt = mass_chol.solve(&jt);
    jt.transpose() * minv_jt
}

/// Contact set for the current state: empty when airborne, otherwise the
/// deepest point with its penalty normal force and regularized friction.
pub fn contact_resolve(
    state: &RobotState,
    robot: &RobotModel,
    terrain: &Terrain,
    model: &ContactModel,
    dt: f64,
) -> Vec<Contact> {
    let probe = probe(state, robot, terrain);
    match probe.hit {
        Some(hit) => {
            let chol = robot.mass_cholesky(state);
            vec![resolve_hit(state, model, &hit, &chol, dt)]
        }
        None => Vec::new(),
    }
}

/// Lowest shell point above the terrain (negative when penetrating).
pub fn clearance(state: &RobotState, robot: &RobotModel, terrain: &Terrain) -> f64 {
    probe(state, robot, terrain).clearance
}
