//! Simulation and control core for a one-motor, pendulum-driven rolling
//! robot with an uneven shell.

pub mod angle;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod contact;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod log;
pub mod nn;
pub mod observation;
pub mod quant;
pub mod shell;
pub mod terrain;

pub use error::{Error, Result};
