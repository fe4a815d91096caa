//! Deterministic synthetic sensor traces with ground truth.

use thiserror::Error;

pub mod generate;
pub mod propagation;
pub mod scenario;
pub mod testbed;

pub use generate::{generate_traces, GeneratedData, InstanceRecord, Manifest};
pub use propagation::{LinkShadow, Placement, Posture, Propagation, PropagationNoise};
pub use scenario::{BucketSpec, Cadences, InstanceSpec, Scenario, ScenarioConfig};
pub use testbed::{EnvClass, Position, Testbed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("device is not placed at t={0}")]
    Unplaced(f64),
    #[error("invalid placement: {0}")]
    Placement(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}
