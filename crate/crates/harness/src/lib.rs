//! Evaluation harness: scripted course following, swing-up jumps,
//! controller comparison, the teleoperation service and the `rock` CLI
//! commands built on them.

pub mod commands;
pub mod compare;
pub mod course;
pub mod driver;
pub mod jump;
pub mod teleop;

pub use compare::{compare_controllers, CompareEntry, CompareRow};
pub use course::{follow_course, CourseRun, WaypointCourse};
pub use driver::Driver;
pub use jump::{jump_trial, JumpTrial};
