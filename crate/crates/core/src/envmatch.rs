//! Ambient-environment comparison: magnetic field magnitude and barometric
//! pressure sequences compared with dynamic time warping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnvSensor, ProxState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("cannot compare an empty sequence")]
    EmptySequence,
    #[error("sequence contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvThresholds {
    pub pressure_threshold_hpa: f64,
    pub magnetic_threshold_ut: f64,
}

impl Default for EnvThresholds {
    fn default() -> Self {
        EnvThresholds {
            pressure_threshold_hpa: 0.15,
            magnetic_threshold_ut: 20.0,
        }
    }
}

impl EnvThresholds {
    pub fn for_sensor(&self, sensor: EnvSensor) -> f64 {
        match sensor {
            EnvSensor::Barometer => self.pressure_threshold_hpa,
            EnvSensor::Magnetometer => self.magnetic_threshold_ut,
        }
    }
}

/// Total field strength, independent of the phone's orientation.
pub fn magnitude(mx: f64, my: f64, mz: f64) -> f64 {
    (mx * mx + my * my + mz * mz).sqrt()
}

pub fn local_cost(a: f64, b: f64) -> f64 {
    let d = a - b;
    d * d
}

/// Result of aligning two sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwAlignment {
    /// Accumulated cost at the final cell.
    pub cost: f64,
    /// Number of matrix cells on the optimal warping path.
    pub path_len: usize,
}

impl DtwAlignment {
    pub fn normalized(&self) -> f64 {
        self.cost / self.path_len as f64
    }
}

#[derive(Clone, Copy)]
struct Cell {
    cost: f64,
    len: usize,
}

impl Cell {
    // lower cost wins; equal cost prefers the shorter path
    fn better_than(&self, other: &Cell) -> bool {
        self.cost < other.cost || (self.cost == other.cost && self.len < other.len)
    }
}

/// Full-matrix DTW over squared local cost.
///
/// Each cell keeps its accumulated cost and the length of the path that
/// produced it. Among equal-cost predecessors the shorter path is kept, and
/// remaining ties resolve diagonal, then vertical (`i-1, j`), then horizontal.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwAlignment, EnvError> {
    if a.is_empty() || b.is_empty() {
        return Err(EnvError::EmptySequence);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite);
    }
    let m = b.len();
    let mut prev: Vec<Cell> = Vec::with_capacity(m);
    let mut cur: Vec<Cell> = Vec::with_capacity(m);

    for (i, &ai) in a.iter().enumerate() {
        cur.clear();
        for (j, &bj) in b.iter().enumerate() {
            let d = local_cost(ai, bj);
            let best = match (i, j) {
                (0, 0) => Cell { cost: 0.0, len: 0 },
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => {
                    let mut best = prev[j - 1];
                    for cand in [prev[j], cur[j - 1]] {
                        if cand.better_than(&best) {
                            best = cand;
                        }
                    }
                    best
                }
            };
            cur.push(Cell {
                cost: best.cost + d,
                len: best.len + 1,
            });
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let last = prev[m - 1];
    Ok(DtwAlignment {
        cost: last.cost,
        path_len: last.len,
    })
}

/// Accumulated warping cost divided by the warping path length.
pub fn dtw_score(a: &[f64], b: &[f64]) -> Result<f64, EnvError> {
    dtw(a, b).map(|al| al.normalized())
}

/// Returns the similarity score in the sensor's own unit (square root of the
/// normalized DTW score) and whether it is within that sensor's threshold.
pub fn env_similar(
    a: &[f64],
    b: &[f64],
    sensor: EnvSensor,
    thresholds: &EnvThresholds,
) -> Result<(f64, bool), EnvError> {
    let score = dtw_score(a, b)?.sqrt();
    Ok((score, score <= thresholds.for_sensor(sensor)))
}

/// Barometer only when both phones are in the open; otherwise magnetometer.
pub fn select_env_sensor(a: ProxState, b: ProxState) -> EnvSensor {
    match (a, b) {
        (ProxState::Far, ProxState::Far) => EnvSensor::Barometer,
        _ => EnvSensor::Magnetometer,
    }
}
