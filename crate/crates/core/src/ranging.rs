//! Distance estimation from RF signal strength and chirp amplitude using the
//! log-distance path-loss form `d = 10^((P1m - rss) / (10 n))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SensorKind;

/// Estimates are clamped into this range after conversion.
pub const MIN_DISTANCE_M: f64 = 0.01;
pub const MAX_DISTANCE_M: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangingError {
    #[error("invalid measurement: {0}")]
    InvalidMeasure(String),
    #[error("distance must be positive and finite, got {0}")]
    InvalidDistance(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no estimates in window")]
    EmptyWindow,
}

/// Calibration of the log-distance model: the level observed at 1 m and the
/// propagation exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub power_at_1m: f64,
    pub exponent: f64,
}

impl PathLossParams {
    /// RF calibration: `power_at_1m` in dBm within [-100, 0].
    pub fn rf(power_at_1m: f64, exponent: f64) -> Result<Self, RangingError> {
        let p = PathLossParams {
            power_at_1m,
            exponent,
        };
        p.validate_rf()?;
        Ok(p)
    }

    /// Acoustic calibration: `power_at_1m` is the chirp level in dB heard at 1 m.
    pub fn sound(level_at_1m: f64, exponent: f64) -> Result<Self, RangingError> {
        let p = PathLossParams {
            power_at_1m: level_at_1m,
            exponent,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if !(self.exponent > 0.0 && self.exponent.is_finite()) {
            return Err(RangingError::InvalidParams(format!(
                "exponent must be > 0, got {}",
                self.exponent
            )));
        }
        if !self.power_at_1m.is_finite() {
            return Err(RangingError::InvalidParams("reference level not finite".into()));
        }
        Ok(())
    }

    pub fn validate_rf(&self) -> Result<(), RangingError> {
        self.validate()?;
        if !(-100.0..=0.0).contains(&self.power_at_1m) {
            return Err(RangingError::InvalidParams(format!(
                "power_at_1m {} dBm outside [-100, 0]",
                self.power_at_1m
            )));
        }
        Ok(())
    }
}

impl Default for PathLossParams {
    /// -59 dBm at 1 m, free-space exponent.
    fn default() -> Self {
        PathLossParams {
            power_at_1m: -59.0,
            exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    pub frequency_hz: f64,
    pub amplitude_db: f64,
    pub duration_ms: f64,
}

impl ChirpSpec {
    pub fn new(frequency_hz: f64, amplitude_db: f64, duration_ms: f64) -> Result<Self, RangingError> {
        let c = ChirpSpec {
            frequency_hz,
            amplitude_db,
            duration_ms,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if !(2000.0..=6000.0).contains(&self.frequency_hz) {
            return Err(RangingError::InvalidParams(format!(
                "chirp frequency {} Hz outside 2-6 kHz",
                self.frequency_hz
            )));
        }
        if !(15.0..=25.0).contains(&self.amplitude_db) {
            return Err(RangingError::InvalidParams(format!(
                "chirp amplitude {} dB outside 20 +/- 5 dB",
                self.amplitude_db
            )));
        }
        if !(self.duration_ms > 0.0 && self.duration_ms.is_finite()) {
            return Err(RangingError::InvalidParams("chirp duration must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ChirpSpec {
    fn default() -> Self {
        ChirpSpec {
            frequency_hz: 4000.0,
            amplitude_db: 20.0,
            duration_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub metres: f64,
    pub source: SensorKind,
    pub timestamp: f64,
}

pub fn clamp_distance(d: f64) -> f64 {
    d.clamp(MIN_DISTANCE_M, MAX_DISTANCE_M)
}

fn unclamped_distance(level: f64, params: &PathLossParams) -> f64 {
    10f64.powf((params.power_at_1m - level) / (10.0 * params.exponent))
}

pub fn distance_from_rss(rss: f64, params: &PathLossParams) -> Result<f64, RangingError> {
    if !rss.is_finite() {
        return Err(RangingError::InvalidMeasure(format!("rss {rss} not finite")));
    }
    params.validate()?;
    Ok(clamp_distance(unclamped_distance(rss, params)))
}

pub fn rss_from_distance(d: f64, params: &PathLossParams) -> Result<f64, RangingError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(RangingError::InvalidDistance(d));
    }
    params.validate()?;
    Ok(params.power_at_1m - 10.0 * params.exponent * d.log10())
}

/// Largest level above the 1 m reference that still maps to a distance at or
/// beyond [`MIN_DISTANCE_M`].
pub fn sound_headroom_db(params: &PathLossParams) -> f64 {
    -10.0 * params.exponent * MIN_DISTANCE_M.log10()
}

/// Distance from a received chirp amplitude. `sound_params.power_at_1m` is
/// the level of `chirp` measured at 1 m.
pub fn sound_distance(
    received_amp: f64,
    chirp: &ChirpSpec,
    sound_params: &PathLossParams,
) -> Result<f64, RangingError> {
    if !received_amp.is_finite() {
        return Err(RangingError::InvalidMeasure(format!(
            "amplitude {received_amp} not finite"
        )));
    }
    sound_params.validate()?;
    let ceiling = chirp.amplitude_db.max(sound_params.power_at_1m) + sound_headroom_db(sound_params);
    if received_amp > ceiling + 1e-9 {
        return Err(RangingError::InvalidMeasure(format!(
            "received {received_amp} dB exceeds emitted chirp {} dB beyond tolerance",
            chirp.amplitude_db
        )));
    }
    Ok(clamp_distance(unclamped_distance(received_amp, sound_params)))
}

pub fn aggregate_window_distance(estimates: &[DistanceEstimate]) -> Result<f64, RangingError> {
    if estimates.is_empty() {
        return Err(RangingError::EmptyWindow);
    }
    let sum: f64 = estimates.iter().map(|e| e.metres).sum();
    Ok(sum / estimates.len() as f64)
}

/// Averages WiFi and sound distances when sound is available.
pub fn combine_distances(wifi_d: f64, sound_d: Option<f64>) -> f64 {
    match sound_d {
        Some(s) => (wifi_d + s) / 2.0,
        None => wifi_d,
    }
}
