//! Staged fusion pipeline: appearance sensing, distance measuring and
//! environment comparison for one device pair over one window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envmatch::{env_similar, magnitude, select_env_sensor, EnvError, EnvThresholds};
use crate::model::{
    ContactDecision, ContactWindow, DeviceKey, EnvSensor, Interval, Pair, ProxState, SensorKind,
    TempId, Tier,
};
use crate::ranging::{
    aggregate_window_distance, combine_distances, distance_from_rss, sound_distance, ChirpSpec,
    DistanceEstimate, PathLossParams, RangingError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),
    #[error("decision is not a contact")]
    NoContact,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ranging(#[from] RangingError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Calibration shared by the detector and the simulator's forward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangingCalibration {
    pub ble: PathLossParams,
    pub wifi: PathLossParams,
    pub sound: PathLossParams,
    pub chirp: ChirpSpec,
}

impl Default for RangingCalibration {
    fn default() -> Self {
        let chirp = ChirpSpec::default();
        RangingCalibration {
            ble: PathLossParams::default(),
            wifi: PathLossParams::default(),
            sound: PathLossParams {
                power_at_1m: chirp.amplitude_db,
                exponent: 2.0,
            },
            chirp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub contact_radius_m: f64,
    pub window_length_s: f64,
    /// Defaults to the window length (tumbling windows).
    pub window_stride_s: Option<f64>,
    pub ble_scan_period_s: f64,
    /// Maximum WiFi scans per `wifi_cap_period_s`.
    pub wifi_scan_cap: u32,
    pub wifi_cap_period_s: f64,
    pub noise_gate_db: f64,
    pub appearance_quorum: f64,
    pub env_thresholds: EnvThresholds,
    pub ranging: RangingCalibration,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            contact_radius_m: 1.0,
            window_length_s: 900.0,
            window_stride_s: None,
            ble_scan_period_s: 30.0,
            wifi_scan_cap: 4,
            wifi_cap_period_s: 120.0,
            noise_gate_db: 20.0,
            appearance_quorum: 0.5,
            env_thresholds: EnvThresholds::default(),
            ranging: RangingCalibration::default(),
        }
    }
}

impl FusionConfig {
    pub fn stride(&self) -> f64 {
        self.window_stride_s.unwrap_or(self.window_length_s)
    }

    /// Spacing between WiFi scans when running at the cap.
    pub fn wifi_interval(&self) -> f64 {
        self.wifi_cap_period_s / self.wifi_scan_cap as f64
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.to_owned()));
        if !(self.contact_radius_m > 0.0) {
            return bad("contact_radius_m must be > 0");
        }
        if !(self.appearance_quorum > 0.0 && self.appearance_quorum <= 1.0) {
            return bad("appearance_quorum must be in (0, 1]");
        }
        if self.wifi_scan_cap < 1 {
            return bad("wifi_scan_cap must be >= 1");
        }
        if !(self.window_length_s > 0.0 && self.stride() > 0.0) {
            return bad("window length and stride must be > 0");
        }
        if !(self.ble_scan_period_s > 0.0 && self.wifi_cap_period_s > 0.0) {
            return bad("scan periods must be > 0");
        }
        if !(self.env_thresholds.pressure_threshold_hpa > 0.0
            && self.env_thresholds.magnetic_threshold_ut > 0.0)
        {
            return bad("environment thresholds must be > 0");
        }
        self.ranging.ble.validate_rf()?;
        self.ranging.wifi.validate_rf()?;
        self.ranging.sound.validate()?;
        self.ranging.chirp.validate()?;
        Ok(())
    }
}

/// Ambient sequences recorded by one device during the window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceEnvironment {
    pub pressure_hpa: Vec<f64>,
    pub magnetic_ut: Vec<f64>,
    pub prox: Vec<ProxState>,
}

impl DeviceEnvironment {
    /// Majority proximity state; ties and missing readings count as near.
    pub fn majority_prox(&self) -> ProxState {
        let far = self.prox.iter().filter(|p| **p == ProxState::Far).count();
        if far * 2 > self.prox.len() {
            ProxState::Far
        } else {
            ProxState::Near
        }
    }

    pub fn sequence(&self, sensor: EnvSensor) -> &[f64] {
        match sensor {
            EnvSensor::Barometer => &self.pressure_hpa,
            EnvSensor::Magnetometer => &self.magnetic_ut,
        }
    }
}

/// Everything the pipeline looks at for one pair and one window, already
/// converted to the units each stage works in.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEvidence {
    pub pair: Pair,
    pub window: Interval,
    /// One entry per BLE scan slot: whether the peer was seen.
    pub ble_seen: Vec<bool>,
    /// Ambient noise measured before each chirp attempt.
    pub noise_db: Vec<f64>,
    /// Whether the peer's chirp was heard on each attempt.
    pub chirp_heard: Vec<bool>,
    pub wifi_distances: Vec<DistanceEstimate>,
    pub sound_distances: Vec<DistanceEstimate>,
    /// Central device first, peripheral second.
    pub env: [DeviceEnvironment; 2],
}

impl StageEvidence {
    /// Builds evidence from a window's samples. The pair's first member is
    /// the scanning device; link samples it recorded about the second member
    /// drive appearance and distance.
    pub fn from_window(window: &ContactWindow, cfg: &FusionConfig) -> Result<Self, FusionError> {
        let Pair(central, peripheral) = &window.pair;
        let interval = window.interval();
        let is_link = |s: &crate::model::SensorSample, kind: SensorKind| {
            s.kind == kind && &s.source == central && s.observed.as_ref() == Some(peripheral)
        };

        let slots = (interval.length() / cfg.ble_scan_period_s + 1e-9).floor() as usize;
        let mut ble_seen = vec![false; slots];
        for s in window.samples.iter().filter(|s| is_link(s, SensorKind::BleRss)) {
            let k = ((s.timestamp - interval.start) / cfg.ble_scan_period_s).floor() as usize;
            if k < slots {
                ble_seen[k] = true;
            }
        }

        let mut noise: Vec<(f64, f64)> = window
            .samples
            .iter()
            .filter(|s| s.kind == SensorKind::AmbientNoise && &s.source == central)
            .filter_map(|s| s.value.scalar().map(|v| (s.timestamp, v)))
            .collect();
        noise.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut heard_amp: Vec<Option<f64>> = vec![None; noise.len()];
        for s in window.samples.iter().filter(|s| is_link(s, SensorKind::SoundAmplitude)) {
            // attribute each hearing to the most recent noise check
            let idx = noise.partition_point(|(t, _)| *t <= s.timestamp);
            if idx > 0 && s.timestamp - noise[idx - 1].0 < 1.0 {
                heard_amp[idx - 1] = s.value.scalar();
            }
        }

        let mut sound_distances = Vec::new();
        let mut chirp_heard = Vec::with_capacity(noise.len());
        for ((t, n), amp) in noise.iter().zip(&heard_amp) {
            let heard = amp.is_some();
            chirp_heard.push(heard);
            if let (true, Some(a)) = (*n <= cfg.noise_gate_db, amp) {
                if let Ok(d) = sound_distance(*a, &cfg.ranging.chirp, &cfg.ranging.sound) {
                    sound_distances.push(DistanceEstimate {
                        metres: d,
                        source: SensorKind::SoundAmplitude,
                        timestamp: *t,
                    });
                }
            }
        }

        let mut wifi: Vec<DistanceEstimate> = Vec::new();
        let mut per_bucket: std::collections::BTreeMap<i64, u32> = Default::default();
        let mut wifi_samples: Vec<_> = window
            .samples
            .iter()
            .filter(|s| is_link(s, SensorKind::WifiRss))
            .collect();
        wifi_samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        for s in wifi_samples {
            let bucket = ((s.timestamp - interval.start) / cfg.wifi_cap_period_s).floor() as i64;
            let used = per_bucket.entry(bucket).or_default();
            if *used >= cfg.wifi_scan_cap {
                continue;
            }
            let Some(rss) = s.value.scalar() else { continue };
            *used += 1;
            wifi.push(DistanceEstimate {
                metres: distance_from_rss(rss, &cfg.ranging.wifi)?,
                source: SensorKind::WifiRss,
                timestamp: s.timestamp,
            });
        }

        let env_of = |dev: &DeviceKey| {
            let mut env = DeviceEnvironment::default();
            for s in window.samples.iter().filter(|s| &s.source == dev && s.observed.is_none()) {
                match (s.kind, s.value) {
                    (SensorKind::Barometer, crate::model::SampleValue::Scalar(v)) => {
                        env.pressure_hpa.push(v)
                    }
                    (SensorKind::Magnetometer, crate::model::SampleValue::Vector([x, y, z])) => {
                        env.magnetic_ut.push(magnitude(x, y, z))
                    }
                    (SensorKind::Proximity, crate::model::SampleValue::Scalar(v)) => {
                        env.prox.push(ProxState::from_value(v))
                    }
                    _ => {}
                }
            }
            env
        };

        Ok(StageEvidence {
            pair: window.pair.clone(),
            window: interval,
            ble_seen,
            noise_db: noise.iter().map(|(_, n)| *n).collect(),
            chirp_heard,
            wifi_distances: wifi,
            sound_distances,
            env: [env_of(central), env_of(peripheral)],
        })
    }
}

pub fn noise_gate(noise_db: f64, cfg: &FusionConfig) -> bool {
    noise_db <= cfg.noise_gate_db
}

/// Majority vote over BLE scans, with chirp attempts made in a quiet
/// environment voting too when `use_sound` is set. At least one BLE sighting
/// is required.
pub fn stage_appearance(
    ev: &StageEvidence,
    cfg: &FusionConfig,
    use_sound: bool,
) -> Result<bool, FusionError> {
    if ev.ble_seen.is_empty() {
        return Err(FusionError::InsufficientEvidence(
            "no BLE scan attempts in window".into(),
        ));
    }
    let ble_hits = ev.ble_seen.iter().filter(|s| **s).count();
    let mut votes = ev.ble_seen.len();
    let mut positives = ble_hits;
    if use_sound {
        for (noise, heard) in ev.noise_db.iter().zip(&ev.chirp_heard) {
            if noise_gate(*noise, cfg) {
                votes += 1;
                positives += usize::from(*heard);
            }
        }
    }
    let q = cfg.appearance_quorum;
    let majority = positives as f64 > q * votes as f64 || (q >= 1.0 && positives == votes);
    Ok(ble_hits > 0 && majority)
}

/// Mean over WiFi timesteps of the WiFi distance, averaged with the sound
/// distance from the same timestep when one exists.
pub fn stage_distance(
    ev: &StageEvidence,
    cfg: &FusionConfig,
    use_sound: bool,
) -> Result<f64, FusionError> {
    if ev.wifi_distances.is_empty() {
        return Err(FusionError::InsufficientEvidence(
            "no WiFi distance estimates in window".into(),
        ));
    }
    let half_step = cfg.wifi_interval() / 2.0;
    let mut used = vec![false; ev.sound_distances.len()];
    let combined: Vec<DistanceEstimate> = ev
        .wifi_distances
        .iter()
        .map(|w| {
            let mut sound = None;
            if use_sound {
                let nearest = ev
                    .sound_distances
                    .iter()
                    .enumerate()
                    .filter(|(i, s)| !used[*i] && (s.timestamp - w.timestamp).abs() < half_step)
                    .min_by(|a, b| {
                        (a.1.timestamp - w.timestamp)
                            .abs()
                            .total_cmp(&(b.1.timestamp - w.timestamp).abs())
                    });
                if let Some((i, s)) = nearest {
                    used[i] = true;
                    sound = Some(s.metres);
                }
            }
            DistanceEstimate {
                metres: combine_distances(w.metres, sound),
                source: w.source,
                timestamp: w.timestamp,
            }
        })
        .collect();
    Ok(aggregate_window_distance(&combined)?)
}

pub fn stage_environment(
    ev: &StageEvidence,
    cfg: &FusionConfig,
) -> Result<(f64, EnvSensor, bool), FusionError> {
    let sensor = select_env_sensor(ev.env[0].majority_prox(), ev.env[1].majority_prox());
    let a = ev.env[0].sequence(sensor);
    let b = ev.env[1].sequence(sensor);
    if a.is_empty() || b.is_empty() {
        return Err(FusionError::InsufficientEvidence(format!(
            "missing {sensor:?} sequence"
        )));
    }
    let (score, pass) = env_similar(a, b, sensor, &cfg.env_thresholds)?;
    Ok((score, sensor, pass))
}

/// Runs every stage and combines the gates enabled by `tier`.
///
/// All three metrics are computed regardless of earlier outcomes. A stage
/// that lacks evidence is reported as unknown; if its gate is enabled the
/// verdict is forced to no-contact.
pub fn decide(ev: &StageEvidence, cfg: &FusionConfig, tier: Tier) -> ContactDecision {
    let mut reasons: Vec<String> = Vec::new();
    let mut note = |stage: &str, e: FusionError| reasons.push(format!("{stage}: {e}"));

    let appearance = stage_appearance(ev, cfg, tier.uses_sound())
        .map_err(|e| note("appearance", e))
        .ok();
    let distance = stage_distance(ev, cfg, tier.uses_sound())
        .map_err(|e| note("distance", e))
        .ok();
    let env = stage_environment(ev, cfg)
        .map_err(|e| note("environment", e))
        .ok();

    let mut decision = ContactDecision {
        pair: ev.pair.clone(),
        window: ev.window,
        appearance,
        mean_distance_m: distance,
        env_score: env.map(|e| e.0),
        env_sensor: env.map(|e| e.1),
        env_passed: env.map(|e| e.2),
        contact: false,
        degraded_reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
        tier,
    };
    decision.contact = decision.rederive(cfg.contact_radius_m);
    decision
}

/// One locally stored contact: the peer's pseudonym and when it happened.
/// No sensor data is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactLogEntry {
    pub peer: TempId,
    pub window: Interval,
    pub mean_distance_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactLog {
    pub entries: Vec<ContactLogEntry>,
}

impl ContactLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Appends a positive decision to the initiating device's log.
pub fn register_contact(
    log: &mut ContactLog,
    decision: &ContactDecision,
    peer: &TempId,
    window: Interval,
) -> Result<ContactLogEntry, FusionError> {
    if !decision.contact {
        return Err(FusionError::NoContact);
    }
    let entry = ContactLogEntry {
        peer: peer.clone(),
        window,
        mean_distance_m: decision.mean_distance_m,
    };
    log.entries.push(entry.clone());
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_window, SampleValue, SensorSample};
    use proptest::prelude::*;

    fn cfg() -> FusionConfig {
        FusionConfig {
            window_length_s: 300.0,
            ..FusionConfig::default()
        }
    }

    fn est(m: f64, t: f64, source: SensorKind) -> DistanceEstimate {
        DistanceEstimate {
            metres: m,
            source,
            timestamp: t,
        }
    }

    fn env(pressure: f64, mag: f64, prox: ProxState, n: usize) -> DeviceEnvironment {
        DeviceEnvironment {
            pressure_hpa: vec![pressure; n],
            magnetic_ut: vec![mag; n],
            prox: vec![prox; n],
        }
    }

    fn evidence(ble: &[bool]) -> StageEvidence {
        StageEvidence {
            pair: Pair::new("a", "b"),
            window: Interval::new(0.0, 300.0),
            ble_seen: ble.to_vec(),
            noise_db: vec![],
            chirp_heard: vec![],
            wifi_distances: (0..10).map(|i| est(2.0, i as f64 * 30.0, SensorKind::WifiRss)).collect(),
            sound_distances: vec![],
            env: [
                env(1012.4, 50.0, ProxState::Far, 10),
                env(1012.4, 50.0, ProxState::Far, 10),
            ],
        }
    }

    fn votes(n: usize, pos: usize) -> Vec<bool> {
        (0..n).map(|i| i < pos).collect()
    }

    #[test]
    fn appearance_majority() {
        let c = cfg();
        assert!(stage_appearance(&evidence(&votes(10, 6)), &c, true).unwrap());
        assert!(!stage_appearance(&evidence(&votes(10, 5)), &c, true).unwrap());
        assert!(!stage_appearance(&evidence(&votes(10, 0)), &c, true).unwrap());
        assert!(!stage_appearance(&evidence(&votes(3, 0)), &c, false).unwrap());
        assert!(matches!(
            stage_appearance(&evidence(&[]), &c, true),
            Err(FusionError::InsufficientEvidence(_))
        ));
    }

    #[test]
    fn chirps_vote_only_when_quiet() {
        let c = cfg();
        let mut ev = evidence(&votes(10, 6));
        // four quiet attempts, none heard: 6 of 14
        ev.noise_db = vec![10.0; 4];
        ev.chirp_heard = vec![false; 4];
        assert!(!stage_appearance(&ev, &c, true).unwrap());
        assert!(stage_appearance(&ev, &c, false).unwrap());
        // same attempts in a loud room are skipped
        ev.noise_db = vec![35.0; 4];
        assert!(stage_appearance(&ev, &c, true).unwrap());
        // heard chirps are positive votes, but never without a BLE sighting
        let mut ev = evidence(&votes(10, 0));
        ev.noise_db = vec![10.0; 30];
        ev.chirp_heard = vec![true; 30];
        assert!(!stage_appearance(&ev, &c, true).unwrap());
    }

    #[test]
    fn gate_boundaries() {
        let c = cfg();
        assert!(noise_gate(15.0, &c));
        assert!(!noise_gate(35.0, &c));
        assert!(noise_gate(20.0, &c));
    }

    #[test]
    fn distance_examples() {
        let c = cfg();
        let ev = evidence(&votes(10, 10));
        assert_eq!(stage_distance(&ev, &c, true).unwrap(), 2.0);

        let mut ev = evidence(&votes(10, 10));
        ev.sound_distances = (0..10).map(|i| est(1.0, i as f64 * 30.0, SensorKind::SoundAmplitude)).collect();
        assert_eq!(stage_distance(&ev, &c, true).unwrap(), 1.5);
        assert_eq!(stage_distance(&ev, &c, false).unwrap(), 2.0);

        ev.wifi_distances.clear();
        assert!(matches!(
            stage_distance(&ev, &c, true),
            Err(FusionError::InsufficientEvidence(_))
        ));
    }

    #[test]
    fn distance_mixed_availability_matches_replay() {
        let c = cfg();
        let mut ev = evidence(&votes(10, 10));
        ev.wifi_distances = (0..10)
            .map(|i| est(1.0 + i as f64 * 0.5, i as f64 * 30.0, SensorKind::WifiRss))
            .collect();
        // sound only at steps 1, 4, 5, 9
        ev.sound_distances = [1usize, 4, 5, 9]
            .iter()
            .map(|&i| est(0.5 * i as f64, i as f64 * 30.0, SensorKind::SoundAmplitude))
            .collect();
        // scripted reference: step by step
        let mut total = 0.0;
        for i in 0..10 {
            let w = 1.0 + i as f64 * 0.5;
            total += if [1, 4, 5, 9].contains(&i) { (w + 0.5 * i as f64) / 2.0 } else { w };
        }
        let expected = total / 10.0;
        assert!((stage_distance(&ev, &c, true).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn environment_examples() {
        let c = cfg();
        let ev = evidence(&votes(10, 10));
        assert_eq!(stage_environment(&ev, &c).unwrap(), (0.0, EnvSensor::Barometer, true));

        let mut ev = evidence(&votes(10, 10));
        ev.env = [env(1012.4, 50.0, ProxState::Near, 10), env(1012.4, 80.0, ProxState::Far, 10)];
        let (s, sensor, pass) = stage_environment(&ev, &c).unwrap();
        assert!((s - 30.0).abs() < 1e-9);
        assert_eq!(sensor, EnvSensor::Magnetometer);
        assert!(!pass);

        let mut ev = evidence(&votes(10, 10));
        ev.env = [env(1012.40, 50.0, ProxState::Far, 10), env(1011.97, 50.0, ProxState::Far, 10)];
        let (s, sensor, pass) = stage_environment(&ev, &c).unwrap();
        assert!((s - 0.43).abs() < 1e-9);
        assert_eq!(sensor, EnvSensor::Barometer);
        assert!(!pass);

        let mut ev = evidence(&votes(10, 10));
        ev.env[1].pressure_hpa.clear();
        assert!(matches!(
            stage_environment(&ev, &c),
            Err(FusionError::InsufficientEvidence(_))
        ));
    }

    #[test]
    fn majority_proximity() {
        let mut e = env(1012.0, 40.0, ProxState::Far, 0);
        assert_eq!(e.majority_prox(), ProxState::Near);
        e.prox = vec![ProxState::Far, ProxState::Near];
        assert_eq!(e.majority_prox(), ProxState::Near);
        e.prox = vec![ProxState::Far, ProxState::Near, ProxState::Far];
        assert_eq!(e.majority_prox(), ProxState::Far);
    }

    #[test]
    fn decide_examples() {
        let c = cfg();
        let mut ev = evidence(&votes(10, 10));
        ev.wifi_distances.iter_mut().for_each(|e| e.metres = 0.8);
        ev.env = [env(1012.40, 50.0, ProxState::Far, 10), env(1012.45, 50.0, ProxState::Far, 10)];
        let d = decide(&ev, &c, Tier::Full);
        assert!(d.contact);
        assert_eq!(d.appearance, Some(true));
        assert!((d.mean_distance_m.unwrap() - 0.8).abs() < 1e-12);
        assert!((d.env_score.unwrap() - 0.05).abs() < 1e-9);
        assert!(d.degraded_reason.is_none());

        ev.env[1] = env(1011.97, 50.0, ProxState::Far, 10);
        let d = decide(&ev, &c, Tier::Full);
        assert!(!d.contact);
        assert_eq!(d.env_passed, Some(false));
        // the environment gate is not part of the middle tier
        assert!(decide(&ev, &c, Tier::AppearanceDistance).contact);

        let mut ev2 = ev.clone();
        ev2.ble_seen = votes(10, 2);
        let d = decide(&ev2, &c, Tier::Full);
        assert!(!d.contact);
        // every metric is still reported
        assert!(d.mean_distance_m.is_some() && d.env_score.is_some());
    }

    #[test]
    fn unknown_stage_forces_no_contact() {
        let c = cfg();
        let mut ev = evidence(&votes(10, 10));
        ev.wifi_distances.clear();
        let d = decide(&ev, &c, Tier::Full);
        assert!(!d.contact);
        assert_eq!(d.mean_distance_m, None);
        assert!(d.degraded_reason.as_deref().unwrap().contains("distance"));
        // a disabled gate does not matter
        let d = decide(&ev, &c, Tier::AppearanceOnly);
        assert!(d.contact);
        assert!(d.degraded_reason.is_some());
    }

    #[test]
    fn contact_log() {
        let c = cfg();
        let mut ev = evidence(&votes(10, 10));
        ev.wifi_distances.iter_mut().for_each(|e| e.metres = 0.5);
        let yes = decide(&ev, &c, Tier::Full);
        let mut no = yes.clone();
        no.contact = false;
        let mut log = ContactLog::default();
        let peer = TempId("t1".into());
        register_contact(&mut log, &yes, &peer, Interval::new(0.0, 300.0)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(register_contact(&mut log, &no, &peer, Interval::new(300.0, 600.0)), Err(FusionError::NoContact));
        assert_eq!(log.len(), 1);
        register_contact(&mut log, &yes, &peer, Interval::new(300.0, 600.0)).unwrap();
        assert_eq!(log.len(), 2);
        assert_ne!(log.entries[0], log.entries[1]);
        assert_eq!(log.entries[0].mean_distance_m, Some(0.5));
    }

    fn window_samples() -> Vec<SensorSample> {
        let (a, b) = (DeviceKey::from("a"), DeviceKey::from("b"));
        let mut v = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 15.0;
            if i % 2 == 0 {
                v.push(SensorSample::link(t + 1.0, SensorKind::BleRss, -60.0, a.clone(), b.clone()));
            }
            v.push(SensorSample::link(t, SensorKind::WifiRss, -59.0, a.clone(), b.clone()));
            v.push(SensorSample::ambient(t, SensorKind::AmbientNoise, SampleValue::Scalar(if i < 10 { 10.0 } else { 30.0 }), a.clone()));
            v.push(SensorSample::link(t, SensorKind::SoundAmplitude, 26.0, a.clone(), b.clone()));
            for d in [&a, &b] {
                v.push(SensorSample::ambient(t, SensorKind::Barometer, SampleValue::Scalar(1012.4), d.clone()));
                v.push(SensorSample::ambient(t, SensorKind::Magnetometer, SampleValue::Vector([30.0, 40.0, 0.0]), d.clone()));
                v.push(SensorSample::ambient(t, SensorKind::Proximity, SampleValue::Scalar(1.0), d.clone()));
            }
        }
        v
    }

    #[test]
    fn evidence_from_window() {
        let c = cfg();
        let w = make_window(&window_samples(), &Pair::new("a", "b"), 0.0, 300.0).unwrap();
        let ev = StageEvidence::from_window(&w, &c).unwrap();
        assert_eq!(ev.ble_seen, vec![true; 10]);
        // 20 WiFi samples at 15 s spacing are capped to 4 per 120 s
        assert_eq!(ev.wifi_distances.len(), 4 + 4 + 4);
        assert!(ev.wifi_distances.iter().all(|e| e.metres == 1.0));
        assert_eq!(ev.chirp_heard, vec![true; 20]);
        // only the ten quiet attempts produce distances
        assert_eq!(ev.sound_distances.len(), 10);
        assert!(ev.sound_distances.iter().all(|e| (e.metres - 10f64.powf(-6.0 / 20.0)).abs() < 1e-12));
        assert_eq!(ev.env[0].magnetic_ut, vec![50.0; 20]);
        assert_eq!(ev.env[1].majority_prox(), ProxState::Far);
        let d = decide(&ev, &c, Tier::Full);
        assert!(d.contact);
        assert_eq!(d.env_sensor, Some(EnvSensor::Barometer));
    }

    #[test]
    fn wifi_cap_respected() {
        let c = cfg();
        let w = make_window(&window_samples(), &Pair::new("a", "b"), 0.0, 300.0).unwrap();
        let ev = StageEvidence::from_window(&w, &c).unwrap();
        for k in 0..3 {
            let lo = k as f64 * 120.0;
            let n = ev.wifi_distances.iter().filter(|e| e.timestamp >= lo && e.timestamp < lo + 120.0).count();
            assert!(n <= c.wifi_scan_cap as usize);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig { appearance_quorum: 0.0, ..FusionConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FusionConfig { wifi_scan_cap: 0, ..FusionConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FusionConfig { contact_radius_m: -1.0, ..FusionConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn arb_evidence() -> impl Strategy<Value = StageEvidence> {
        (
            proptest::collection::vec(any::<bool>(), 1..15),
            proptest::collection::vec((0.0f64..40.0, any::<bool>()), 0..10),
            proptest::collection::vec(0.1f64..5.0, 0..10),
            proptest::collection::vec(1011.0f64..1013.0, 1..8),
            proptest::collection::vec(1011.0f64..1013.0, 1..8),
        )
            .prop_map(|(ble, chirps, wifi, pa, pb)| StageEvidence {
                pair: Pair::new("a", "b"),
                window: Interval::new(0.0, 300.0),
                ble_seen: ble,
                noise_db: chirps.iter().map(|c| c.0).collect(),
                chirp_heard: chirps.iter().map(|c| c.1).collect(),
                wifi_distances: wifi.iter().enumerate().map(|(i, m)| est(*m, i as f64 * 30.0, SensorKind::WifiRss)).collect(),
                sound_distances: vec![],
                env: [
                    DeviceEnvironment { pressure_hpa: pa, magnetic_ut: vec![], prox: vec![ProxState::Far] },
                    DeviceEnvironment { pressure_hpa: pb, magnetic_ut: vec![], prox: vec![ProxState::Far] },
                ],
            })
    }

    proptest! {
        #[test]
        fn deterministic_and_rederivable(ev in arb_evidence()) {
            let c = cfg();
            for tier in Tier::ALL {
                let d1 = decide(&ev, &c, tier);
                let d2 = decide(&ev, &c, tier);
                prop_assert_eq!(&d1, &d2);
                prop_assert_eq!(d1.contact, d1.rederive(c.contact_radius_m));
                if d1.contact && tier == Tier::Full {
                    prop_assert!(d1.appearance == Some(true));
                    prop_assert!(d1.mean_distance_m.unwrap() <= c.contact_radius_m);
                    prop_assert!(d1.env_score.unwrap() <= c.env_thresholds.for_sensor(d1.env_sensor.unwrap()));
                }
            }
        }

        #[test]
        fn worse_evidence_never_creates_contact(ev in arb_evidence(), drop_idx in 0usize..15, stretch in 1.0f64..3.0, shift in 0.0f64..1.0) {
            let c = cfg();
            let before = decide(&ev, &c, Tier::Full).contact;

            let mut fewer = ev.clone();
            let i = drop_idx % fewer.ble_seen.len();
            fewer.ble_seen[i] = false;
            let mut farther = ev.clone();
            farther.wifi_distances.iter_mut().for_each(|e| e.metres *= stretch);
            let mut apart = ev.clone();
            apart.env[1].pressure_hpa.iter_mut().for_each(|p| *p += shift);
            apart.env[0].pressure_hpa.iter_mut().for_each(|p| *p -= shift);
            // shifting in opposite directions only helps when b sat below a
            let widened = ev.env[0].pressure_hpa.iter().all(|a| ev.env[1].pressure_hpa.iter().all(|b| b >= a));

            for worse in [fewer, farther] {
                prop_assert!(before || !decide(&worse, &c, Tier::Full).contact);
            }
            if widened {
                prop_assert!(before || !decide(&apart, &c, Tier::Full).contact);
            }
        }
    }
}
