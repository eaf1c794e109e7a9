//! Scripted waypoint commander standing in for the human operator.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rock_core::config::{CourseConfig, ScenarioConfig};
use rock_core::controller::Command;
use rock_core::dynamics::{rolling_pose, RobotState, Simulator};
use rock_core::log::{Header, Sample, Summary, TrajectoryLog};
use rock_core::terrain::Terrain;
use rock_core::{Error, Result};

use crate::driver::Driver;

/// Initial pendulum offset from hanging straight down, rad. In the exact
/// rolling pose with the command along the rolling line the projection
/// target is degenerate and the controller holds the current angle, so a
/// perfectly symmetric start would never move; a small release angle breaks
/// the symmetry the way an imperfect placement does on hardware.
pub const START_PENDULUM_OFFSET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointCourse {
    pub waypoints: Vec<Vector2<f64>>,
    pub capture_radius: f64,
}

impl WaypointCourse {
    pub fn new(waypoints: Vec<Vector2<f64>>, capture_radius: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Config("course needs at least one waypoint".into()));
        }
        if !(capture_radius > 0.0 && capture_radius.is_finite()) {
            return Err(Error::Config(format!("capture radius must be positive, got {capture_radius}")));
        }
        if waypoints.iter().any(|w| !(w.x.is_finite() && w.y.is_finite())) {
            return Err(Error::Config("waypoints must be finite".into()));
        }
        Ok(Self { waypoints, capture_radius })
    }

    pub fn from_config(cfg: &CourseConfig) -> Result<Self> {
        Self::new(cfg.waypoints.iter().map(|&[x, y]| Vector2::new(x, y)).collect(), cfg.capture_radius)
    }

    /// Heading of the first leg that actually moves, 0 if none.
    pub fn initial_heading(&self) -> f64 {
        let start = self.waypoints[0];
        self.waypoints
            .iter()
            .map(|w| w - start)
            .find(|d| d.norm() > 1e-9)
            .map_or(0.0, |d| d.y.atan2(d.x))
    }
}

/// Distance from `p` to the segment `a -> b`.
pub fn segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

#[derive(Debug, Clone)]
pub struct CourseRun {
    pub log: TrajectoryLog,
    pub summary: Summary,
    /// Control steps taken.
    pub steps: usize,
    /// Waypoints reached, counting the start.
    pub reached: usize,
}

/// Drives `course` from rest at its first waypoint, facing the first leg.
/// Each control step the command points from the robot to the active
/// waypoint; a waypoint is reached inside the capture radius. The run ends on
/// completion or after `cfg.course.timeout` simulated seconds. Terrain
/// roughness comes from `cfg.course.roughness`, drawn from `seed`.
pub fn follow_course(driver: &mut Driver, course: &WaypointCourse, cfg: &ScenarioConfig, seed: u64) -> Result<CourseRun> {
    let e = &cfg.env;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain =
        Terrain::generate(&mut rng, cfg.course.roughness, e.correlation_length, e.terrain_half_extent, e.terrain_cell)?;
    let robot = cfg.robot()?;
    let pose = rolling_pose(&robot, course.initial_heading());
    let start = course.waypoints[0];
    let mut sim = Simulator::new(robot, cfg.world(terrain), cfg.dynamics.motor, RobotState::default(), cfg.dynamics.dt);
    let pendulum = FRAC_PI_2 + START_PENDULUM_OFFSET;
    let z = sim.touching_height(start.x, start.y, &pose, pendulum);
    sim.state = RobotState::at_rest(Vector3::new(start.x, start.y, z), pose).with_pendulum_angle(pendulum);
    driver.reset();

    let id = driver.kind().as_str();
    let mut log = TrajectoryLog::new(Header {
        controller: id.into(),
        seed,
        waypoints: course.waypoints.iter().map(|w| [w.x, w.y]).collect(),
    });
    let substeps = cfg.substeps();
    let mut active = 0;
    let mut segment_start = start;
    let mut steps = 0;
    let completed = loop {
        let p = sim.state.position.xy();
        while active < course.waypoints.len() && (course.waypoints[active] - p).norm() < course.capture_radius {
            segment_start = course.waypoints[active];
            active += 1;
        }
        let target = course.waypoints.get(active).copied();
        let cross_track = target.map_or(0.0, |t| segment_distance(p, segment_start, t));
        let cmd = target.and_then(|t| Command::normalized(t.x - p.x, t.y - p.y));
        let command = cmd.map(|c| [c.direction().x, c.direction().y]);
        log.push(Sample::from_state(&sim.state, command, id, cross_track))?;
        if target.is_none() {
            break true;
        }
        if sim.state.time >= cfg.course.timeout - 1e-9 {
            break false;
        }
        let setpoint = driver.setpoint(&sim.robot, &sim.state, cmd.as_ref())?;
        sim.motor.set_setpoint(setpoint);
        for _ in 0..substeps {
            sim.step()?;
        }
        steps += 1;
    };
    log.set_completed(completed);
    let summary = log.summary();
    Ok(CourseRun { log, summary, steps, reached: active })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_clamps_to_ends() {
        let (a, b) = (Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0));
        assert_eq!(segment_distance(Vector2::new(1.0, 0.5), a, b), 0.5);
        assert_eq!(segment_distance(Vector2::new(-3.0, 4.0), a, b), 5.0);
        assert_eq!(segment_distance(Vector2::new(1.0, 1.0), a, a), 2f64.sqrt());
    }

    #[test]
    fn course_validation() {
        assert!(WaypointCourse::new(vec![], 0.25).is_err());
        assert!(WaypointCourse::new(vec![Vector2::zeros()], 0.0).is_err());
        let c = WaypointCourse::new(vec![Vector2::zeros(), Vector2::zeros(), Vector2::new(0.0, 2.0)], 0.25).unwrap();
        assert!((c.initial_heading() - FRAC_PI_2).abs() < 1e-12);
    }
}
