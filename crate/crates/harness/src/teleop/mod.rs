//! Live teleoperation: newline-delimited JSON over raw TCP or WebSocket
//! text frames on the same port.

pub mod replay;
pub mod server;
pub mod session;

pub use replay::{replay_flight_log, ReplaySegment};
pub use server::{ServeOptions, TeleopServer};
pub use session::{ClientMessage, ServerMessage, StateFrame, TeleopSession};
