use nalgebra::Vector2;
use rock_core::config::{ControllerKind, ScenarioConfig};
use rock_core::log::TrajectoryLog;
use rock_harness::compare::{compare_controllers, CompareEntry};
use rock_harness::{follow_course, Driver, WaypointCourse};

fn flat() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.course.roughness = 0.0;
    cfg
}

fn projection(cfg: &ScenarioConfig) -> Driver {
    Driver::projection(cfg.controller)
}

#[test]
fn single_waypoint_at_start_completes_immediately() {
    let cfg = flat();
    let course = WaypointCourse::new(vec![Vector2::zeros()], 0.25).unwrap();
    let run = follow_course(&mut projection(&cfg), &course, &cfg, 0).unwrap();
    assert_eq!(run.steps, 0);
    assert!(run.summary.completed);
    assert_eq!(run.log.samples().len(), 1);
}

#[test]
fn rectangle_completes_on_flat_ground() {
    let cfg = flat();
    let course = WaypointCourse::from_config(&cfg.course).unwrap();
    let run = follow_course(&mut projection(&cfg), &course, &cfg, 0).unwrap();
    let s = &run.summary;
    assert!(s.completed, "{s:?}");
    assert!(s.max_cross_track < 0.5, "{s:?}");
    assert_eq!(run.reached, 5);
    assert!(s.duration <= cfg.course.timeout);
    assert!(s.average_speed > 0.0);
}

#[test]
fn commands_are_unit_and_point_at_the_active_waypoint() {
    let cfg = flat();
    let course = WaypointCourse::from_config(&cfg.course).unwrap();
    let run = follow_course(&mut projection(&cfg), &course, &cfg, 0).unwrap();
    let mut active = 0;
    for s in run.log.samples() {
        let p = Vector2::new(s.position[0], s.position[1]);
        while active < course.waypoints.len() && (course.waypoints[active] - p).norm() < course.capture_radius {
            active += 1;
        }
        let Some(d) = s.command else {
            assert_eq!(active, course.waypoints.len());
            continue;
        };
        let d = Vector2::new(d[0], d[1]);
        assert!((d.norm() - 1.0).abs() < 1e-12);
        let bearing = course.waypoints[active] - p;
        assert!(d.dot(&bearing) > 0.0);
    }
}

#[test]
fn timeout_emits_an_incomplete_log() {
    let mut cfg = flat();
    cfg.course.timeout = 2.0;
    let course = WaypointCourse::from_config(&cfg.course).unwrap();
    let run = follow_course(&mut projection(&cfg), &course, &cfg, 0).unwrap();
    assert!(!run.summary.completed);
    assert!(run.summary.completion_time.is_none());
    assert!((run.summary.duration - 2.0).abs() < 1e-6);
}

#[test]
fn course_log_round_trips_with_recomputed_metrics() {
    let mut cfg = flat();
    cfg.course.timeout = 5.0;
    let course = WaypointCourse::from_config(&cfg.course).unwrap();
    let run = follow_course(&mut projection(&cfg), &course, &cfg, 3).unwrap();
    let back = TrajectoryLog::from_jsonl(&run.log.to_jsonl()).unwrap();
    assert_eq!(back.summary(), run.summary);
}

#[test]
fn controller_against_itself_gives_identical_rows() {
    let mut cfg = flat();
    cfg.course.timeout = 10.0;
    cfg.course.roughness = 0.01;
    let entry = CompareEntry {
        scenario: "rough".into(),
        cfg,
        controller: ControllerKind::Projection,
        policy: None,
        seeds: vec![1, 2],
    };
    let rows = compare_controllers(&[entry.clone(), entry]).unwrap();
    assert_eq!(rows[0], rows[1]);
    assert_eq!(rows[0].runs, 2);
}
