//! Multi-sensor smartphone proximity detection for contact tracing.
//!
//! The crate covers signal-strength and chirp ranging, ambient environment
//! matching with dynamic time warping, a staged fusion pipeline that turns a
//! window of sensor samples into a contact decision, an in-process model of
//! pseudonym exchange and infection reporting, a seeded testbed simulator and
//! the evaluation metrics used to compare pipeline tiers.

pub mod envmatch;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod model;
pub mod protocol;
pub mod ranging;
pub mod simulator;

pub use model::{
    ContactDecision, ContactWindow, DeviceKey, EnvSensor, GroundTruthLabel, Interval, Pair,
    SensorKind, SensorSample, Tier,
};
