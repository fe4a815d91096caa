//! Shared domain vocabulary: samples, traces, device identity, windows,
//! decisions and ground truth.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest RSS a sample may carry, in dBm.
pub const RSS_MIN_DBM: f64 = -120.0;
/// Highest RSS a sample may carry, in dBm.
pub const RSS_MAX_DBM: f64 = 0.0;
/// Valid barometer range in hPa.
pub const PRESSURE_RANGE_HPA: (f64, f64) = (300.0, 1100.0);

/// Proximity samples are binary: `0.0` is near (covered, e.g. pocketed), `1.0` is far.
pub const PROXIMITY_NEAR: f64 = 0.0;
pub const PROXIMITY_FAR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no samples relevant to pair {0} in window [{1}, {2})")]
    EmptyWindow(Pair, f64, f64),
    #[error("window length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensorKind {
    BleRss,
    WifiRss,
    SoundAmplitude,
    AmbientNoise,
    Barometer,
    Magnetometer,
    Proximity,
}

impl SensorKind {
    pub const ALL: [SensorKind; 7] = [
        SensorKind::BleRss,
        SensorKind::WifiRss,
        SensorKind::SoundAmplitude,
        SensorKind::AmbientNoise,
        SensorKind::Barometer,
        SensorKind::Magnetometer,
        SensorKind::Proximity,
    ];

    /// Kinds whose samples describe a link to a peer rather than the ambient
    /// surroundings of the recording device.
    pub fn is_peer_link(self) -> bool {
        matches!(
            self,
            SensorKind::BleRss | SensorKind::WifiRss | SensorKind::SoundAmplitude
        )
    }
}

/// Name of a device inside a trace set. Traces are simulator output, so this
/// is the simulator's device label, not an over-the-air identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceKey(pub String);

impl DeviceKey {
    pub fn new(s: impl Into<String>) -> Self {
        DeviceKey(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceKey {
    fn from(s: &str) -> Self {
        DeviceKey(s.to_owned())
    }
}

/// Ordered device pair. The first member is the scanning (central) device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair(pub DeviceKey, pub DeviceKey);

impl Pair {
    pub fn new(a: impl Into<DeviceKey>, b: impl Into<DeviceKey>) -> Self {
        Pair(a.into(), b.into())
    }

    pub fn contains(&self, d: &DeviceKey) -> bool {
        &self.0 == d || &self.1 == d
    }

    /// The other member, if `d` belongs to the pair.
    pub fn peer_of(&self, d: &DeviceKey) -> Option<&DeviceKey> {
        if &self.0 == d {
            Some(&self.1)
        } else if &self.1 == d {
            Some(&self.0)
        } else {
            None
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// Opaque permanent identity, known only to the simulator and the server.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermanentId(pub String);

/// Rotating pseudonym exchanged between devices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TempId(pub String);

impl fmt::Display for PermanentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for TempId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceId {
    pub permanent_id: PermanentId,
    pub temp_id: TempId,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleValue {
    Scalar(f64),
    Vector([f64; 3]),
}

impl SampleValue {
    pub fn scalar(&self) -> Option<f64> {
        match *self {
            SampleValue::Scalar(v) => Some(v),
            SampleValue::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<[f64; 3]> {
        match *self {
            SampleValue::Vector(v) => Some(v),
            SampleValue::Scalar(_) => None,
        }
    }
}

/// One timestamped reading from one sensor on one device.
///
/// Serialized as a JSON object with the short field names used in trace
/// files: `t`, `kind`, `value`, `src`, `obs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    #[serde(rename = "t")]
    pub timestamp: f64,
    pub kind: SensorKind,
    pub value: SampleValue,
    #[serde(rename = "src")]
    pub source: DeviceKey,
    #[serde(rename = "obs")]
    pub observed: Option<DeviceKey>,
}

impl SensorSample {
    pub fn ambient(t: f64, kind: SensorKind, value: SampleValue, src: DeviceKey) -> Self {
        SensorSample {
            timestamp: t,
            kind,
            value,
            source: src,
            observed: None,
        }
    }

    pub fn link(t: f64, kind: SensorKind, value: f64, src: DeviceKey, obs: DeviceKey) -> Self {
        SensorSample {
            timestamp: t,
            kind,
            value: SampleValue::Scalar(value),
            source: src,
            observed: Some(obs),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSample(msg));
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return bad(format!("timestamp {} must be finite and >= 0", self.timestamp));
        }
        match (self.kind, self.value) {
            (SensorKind::Magnetometer, SampleValue::Vector(v)) => {
                if v.iter().any(|c| !c.is_finite()) {
                    return bad("magnetometer component not finite".into());
                }
            }
            (SensorKind::Magnetometer, SampleValue::Scalar(_)) => {
                return bad("magnetometer sample needs exactly 3 components".into());
            }
            (_, SampleValue::Vector(_)) => {
                return bad(format!("{:?} sample must be scalar", self.kind));
            }
            (kind, SampleValue::Scalar(v)) => {
                if !v.is_finite() {
                    return bad(format!("{kind:?} value not finite"));
                }
                match kind {
                    SensorKind::BleRss | SensorKind::WifiRss
                        if !(RSS_MIN_DBM..=RSS_MAX_DBM).contains(&v) =>
                    {
                        return bad(format!("RSS {v} dBm outside [-120, 0]"));
                    }
                    SensorKind::Barometer
                        if !(PRESSURE_RANGE_HPA.0..=PRESSURE_RANGE_HPA.1).contains(&v) =>
                    {
                        return bad(format!("pressure {v} hPa outside [300, 1100]"));
                    }
                    _ => {}
                }
            }
        }
        if self.kind.is_peer_link() && self.observed.is_none() {
            return bad(format!("{:?} sample must name the observed device", self.kind));
        }
        Ok(())
    }

    /// Whether this sample concerns `pair`: ambient readings of either member,
    /// or link readings between the two members.
    pub fn concerns(&self, pair: &Pair) -> bool {
        let Some(peer) = pair.peer_of(&self.source) else {
            return false;
        };
        match &self.observed {
            None => true,
            Some(obs) => obs == peer,
        }
    }
}

/// Binary proximity-sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxState {
    Near,
    Far,
}

impl ProxState {
    pub fn from_value(v: f64) -> Self {
        if v >= 0.5 {
            ProxState::Far
        } else {
            ProxState::Near
        }
    }

    pub fn value(self) -> f64 {
        match self {
            ProxState::Near => PROXIMITY_NEAR,
            ProxState::Far => PROXIMITY_FAR,
        }
    }
}

/// Environment sensor used for the shared-environment comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvSensor {
    Barometer,
    Magnetometer,
}

impl From<EnvSensor> for SensorKind {
    fn from(s: EnvSensor) -> Self {
        match s {
            EnvSensor::Barometer => SensorKind::Barometer,
            EnvSensor::Magnetometer => SensorKind::Magnetometer,
        }
    }
}

/// Per-device time-ordered sample sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub device: Option<DeviceKey>,
    pub samples: Vec<SensorSample>,
}

impl Trace {
    pub fn new(device: DeviceKey, mut samples: Vec<SensorSample>) -> Self {
        sort_samples(&mut samples);
        Trace {
            device: Some(device),
            samples,
        }
    }
}

/// Stable sort by timestamp.
pub fn sort_samples(samples: &mut [SensorSample]) {
    samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactWindow {
    pub pair: Pair,
    pub start: f64,
    pub end: f64,
    pub samples: Vec<SensorSample>,
}

impl ContactWindow {
    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Extracts the samples relevant to `pair` that fall in `[start, start + length)`.
pub fn make_window<'a, I>(
    samples: I,
    pair: &Pair,
    start: f64,
    length: f64,
) -> Result<ContactWindow, ModelError>
where
    I: IntoIterator<Item = &'a SensorSample>,
{
    if !(length > 0.0 && length.is_finite()) {
        return Err(ModelError::InvalidLength(length));
    }
    let end = start + length;
    let span = Interval::new(start, end);
    let mut picked: Vec<SensorSample> = samples
        .into_iter()
        .filter(|s| span.contains(s.timestamp) && s.concerns(pair))
        .cloned()
        .collect();
    if picked.is_empty() {
        return Err(ModelError::EmptyWindow(pair.clone(), start, end));
    }
    sort_samples(&mut picked);
    Ok(ContactWindow {
        pair: pair.clone(),
        start,
        end,
        samples: picked,
    })
}

/// Window start times covering `[from, to)`. Only windows that fit entirely
/// inside the span are produced.
pub fn window_starts(from: f64, to: f64, length: f64, stride: f64) -> Vec<f64> {
    let mut starts = Vec::new();
    if !(length > 0.0 && stride > 0.0) {
        return starts;
    }
    let mut k = 0u64;
    loop {
        let s = from + k as f64 * stride;
        if s + length > to + 1e-9 {
            break;
        }
        starts.push(s);
        k += 1;
    }
    starts
}

/// Which fusion gates take part in the verdict. Each tier enables a strict
/// superset of the previous tier's gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    /// BLE sightings only.
    AppearanceOnly,
    /// Appearance (BLE and chirps) plus the distance gate.
    AppearanceDistance,
    /// All three gates.
    Full,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::AppearanceOnly, Tier::AppearanceDistance, Tier::Full];

    pub fn uses_sound(self) -> bool {
        self != Tier::AppearanceOnly
    }

    pub fn distance_gate(self) -> bool {
        self >= Tier::AppearanceDistance
    }

    pub fn environment_gate(self) -> bool {
        self == Tier::Full
    }
}

/// The three fusion outputs for one pair over one window plus the verdict.
///
/// `None` means the stage could not be evaluated for lack of evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactDecision {
    pub pair: Pair,
    pub window: Interval,
    pub appearance: Option<bool>,
    pub mean_distance_m: Option<f64>,
    pub env_score: Option<f64>,
    pub env_sensor: Option<EnvSensor>,
    pub env_passed: Option<bool>,
    pub contact: bool,
    pub degraded_reason: Option<String>,
    #[serde(default = "default_tier")]
    pub tier: Tier,
}

fn default_tier() -> Tier {
    Tier::Full
}

impl ContactDecision {
    /// Recomputes the verdict from the recorded metrics alone.
    pub fn rederive(&self, contact_radius: f64) -> bool {
        let appearance = self.appearance == Some(true);
        let distance = !self.tier.distance_gate()
            || self.mean_distance_m.is_some_and(|d| d <= contact_radius);
        let env = !self.tier.environment_gate() || self.env_passed == Some(true);
        appearance && distance && env
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub pair: Pair,
    pub window: Interval,
    pub true_distance_m: f64,
    pub is_contact: bool,
}

impl GroundTruthLabel {
    /// `max_distance` is the largest true distance observed over the window.
    pub fn from_distance(pair: Pair, window: Interval, max_distance: f64, radius: f64) -> Self {
        GroundTruthLabel {
            pair,
            window,
            true_distance_m: max_distance,
            is_contact: max_distance <= radius,
        }
    }
}
