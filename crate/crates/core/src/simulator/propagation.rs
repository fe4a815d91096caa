//! Forward sensor models. RF and acoustic levels use the same log-distance
//! form as the detector, plus obstruction losses and Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::testbed::{EnvClass, Position, Testbed};
use super::ScenarioError;
use crate::fusion::RangingCalibration;
use crate::model::{Interval, ProxState, SensorKind, RSS_MAX_DBM, RSS_MIN_DBM};
use crate::ranging::{rss_from_distance, MIN_DISTANCE_M};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationNoise {
    /// Per-scan BLE fluctuation (frequency hopping).
    pub ble_hop_sigma_db: f64,
    pub wifi_sigma_db: f64,
    pub sound_sigma_db: f64,
    /// Per-link static multipath offset, drawn once per device pair.
    pub ble_shadow_sigma_db: f64,
    pub wifi_shadow_sigma_db: f64,
    pub sound_shadow_sigma_db: f64,
    /// Extra RF multipath offset for indoor links at medium range (3-20 m),
    /// where indoor RSS is least stable.
    pub indoor_multipath_sigma_db: f64,
    pub wall_loss_db: f64,
    pub floor_loss_ble_db: f64,
    pub floor_loss_wifi_db: f64,
    pub sound_wall_loss_db: f64,
    pub sound_floor_loss_db: f64,
    pub sound_max_range_m: f64,
    /// Chirps never reach a phone this many floors away or more.
    pub sound_floor_cutoff: u32,
    pub detection_floor_dbm: f64,
    pub magnetic_sigma_ut: f64,
    pub ambient_noise_sigma_db: f64,
}

impl Default for PropagationNoise {
    fn default() -> Self {
        PropagationNoise {
            ble_hop_sigma_db: 6.0,
            wifi_sigma_db: 2.0,
            sound_sigma_db: 0.5,
            ble_shadow_sigma_db: 3.0,
            wifi_shadow_sigma_db: 2.5,
            sound_shadow_sigma_db: 1.5,
            indoor_multipath_sigma_db: 8.0,
            wall_loss_db: 8.0,
            floor_loss_ble_db: 3.5,
            floor_loss_wifi_db: 3.5,
            sound_wall_loss_db: 15.0,
            sound_floor_loss_db: 8.0,
            sound_max_range_m: 10.0,
            sound_floor_cutoff: 2,
            detection_floor_dbm: -95.0,
            magnetic_sigma_ut: 1.0,
            ambient_noise_sigma_db: 3.0,
        }
    }
}

impl PropagationNoise {
    /// Same obstruction model with every random term switched off.
    pub fn zero(&self) -> Self {
        PropagationNoise {
            ble_hop_sigma_db: 0.0,
            wifi_sigma_db: 0.0,
            sound_sigma_db: 0.0,
            ble_shadow_sigma_db: 0.0,
            wifi_shadow_sigma_db: 0.0,
            sound_shadow_sigma_db: 0.0,
            indoor_multipath_sigma_db: 0.0,
            magnetic_sigma_ut: 0.0,
            ambient_noise_sigma_db: 0.0,
            ..self.clone()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.ble_hop_sigma_db == 0.0 && self.wifi_sigma_db == 0.0 && self.sound_sigma_db == 0.0
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let sigmas = [
            self.ble_hop_sigma_db,
            self.wifi_sigma_db,
            self.sound_sigma_db,
            self.ble_shadow_sigma_db,
            self.wifi_shadow_sigma_db,
            self.sound_shadow_sigma_db,
            self.indoor_multipath_sigma_db,
            self.magnetic_sigma_ut,
            self.ambient_noise_sigma_db,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ScenarioError::Invalid("noise sigmas must be finite and >= 0".into()));
        }
        if !self.is_zero()
            && !(self.ble_hop_sigma_db > self.wifi_sigma_db && self.wifi_sigma_db > self.sound_sigma_db)
        {
            return Err(ScenarioError::Invalid(
                "expected BLE sigma > WiFi sigma > sound sigma".into(),
            ));
        }
        if self.sound_floor_cutoff == 0 || !(self.sound_max_range_m > 0.0) {
            return Err(ScenarioError::Invalid("sound range and floor cutoff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    /// Held in the open.
    Hand,
    /// In a pocket or bag; the proximity sensor reads near.
    Pocket,
}

impl Posture {
    pub fn prox(self) -> ProxState {
        match self {
            Posture::Hand => ProxState::Far,
            Posture::Pocket => ProxState::Near,
        }
    }
}

/// Where a device is and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: Position,
    pub posture: Posture,
    pub span: Interval,
}

impl Placement {
    fn at(&self, t: f64) -> Result<&Position, ScenarioError> {
        if self.span.contains(t) {
            Ok(&self.position)
        } else {
            Err(ScenarioError::Unplaced(t))
        }
    }
}

/// Static multipath offsets for one device pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkShadow {
    pub ble_db: f64,
    pub wifi_db: f64,
    pub sound_db: f64,
}

/// Weight of the indoor multipath term: half within 1 m, full from 3 m to
/// 20 m, fading out by 30 m.
pub fn medium_range_weight(d: f64) -> f64 {
    let rise = 0.5 + 0.5 * ((d - 1.0) / 2.0).clamp(0.0, 1.0);
    let fade = ((30.0 - d) / 10.0).clamp(0.0, 1.0);
    rise * fade
}

impl LinkShadow {
    /// Offsets for a link of true length `distance_m`; `indoor` adds the
    /// medium-range multipath term to the RF offsets.
    pub fn draw<R: Rng + ?Sized>(
        noise: &PropagationNoise,
        distance_m: f64,
        indoor: bool,
        rng: &mut R,
    ) -> Self {
        let mp = if indoor {
            noise.indoor_multipath_sigma_db * medium_range_weight(distance_m)
        } else {
            0.0
        };
        LinkShadow {
            ble_db: gauss(rng, noise.ble_shadow_sigma_db.hypot(mp)),
            wifi_db: gauss(rng, noise.wifi_shadow_sigma_db.hypot(mp)),
            sound_db: gauss(rng, noise.sound_shadow_sigma_db.hypot(mp)),
        }
    }
}

pub(crate) fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

/// Forward models bound to one testbed and calibration.
#[derive(Debug, Clone, Copy)]
pub struct Propagation<'a> {
    pub testbed: &'a Testbed,
    pub calibration: &'a RangingCalibration,
    pub noise: &'a PropagationNoise,
}

impl<'a> Propagation<'a> {
    /// Received RF level at `rx` from `tx`, or `None` when below the
    /// detection floor.
    pub fn simulate_rss<R: Rng + ?Sized>(
        &self,
        tx: &Placement,
        rx: &Placement,
        t: f64,
        kind: SensorKind,
        shadow: &LinkShadow,
        rng: &mut R,
    ) -> Result<Option<f64>, ScenarioError> {
        let (a, b) = (tx.at(t)?, rx.at(t)?);
        let (params, sigma, floor_loss, shadow_db) = match kind {
            SensorKind::BleRss => (
                &self.calibration.ble,
                self.noise.ble_hop_sigma_db,
                self.noise.floor_loss_ble_db,
                shadow.ble_db,
            ),
            SensorKind::WifiRss => (
                &self.calibration.wifi,
                self.noise.wifi_sigma_db,
                self.noise.floor_loss_wifi_db,
                shadow.wifi_db,
            ),
            other => return Err(ScenarioError::Invalid(format!("{other:?} is not an RF link"))),
        };
        let d = self.testbed.distance(a, b).max(MIN_DISTANCE_M);
        let walls: f64 = self
            .testbed
            .walls_crossed(a, b)
            .map(|w| w.loss_db.unwrap_or(self.noise.wall_loss_db))
            .sum();
        let floors = self.testbed.floors_between(a, b) as f64 * floor_loss;
        let rss = rss_from_distance(d, params).map_err(|e| ScenarioError::Invalid(e.to_string()))?
            - walls
            - floors
            + shadow_db
            + gauss(rng, sigma);
        if rss < self.noise.detection_floor_dbm {
            return Ok(None);
        }
        Ok(Some(rss.clamp(RSS_MIN_DBM, RSS_MAX_DBM)))
    }

    /// Level of `tx`'s chirp heard at `rx`, or `None` when out of range, two
    /// or more floors away, or masked by `ambient_db` at the receiver.
    pub fn simulate_sound<R: Rng + ?Sized>(
        &self,
        tx: &Placement,
        rx: &Placement,
        t: f64,
        ambient_db: f64,
        shadow: &LinkShadow,
        rng: &mut R,
    ) -> Result<Option<f64>, ScenarioError> {
        let (a, b) = (tx.at(t)?, rx.at(t)?);
        let floors = self.testbed.floors_between(a, b);
        let d = self.testbed.distance(a, b).max(MIN_DISTANCE_M);
        if floors >= self.noise.sound_floor_cutoff || d > self.noise.sound_max_range_m {
            return Ok(None);
        }
        let walls = self.testbed.walls_crossed(a, b).count() as f64 * self.noise.sound_wall_loss_db;
        let amp = rss_from_distance(d, &self.calibration.sound)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?
            - walls
            - floors as f64 * self.noise.sound_floor_loss_db
            + shadow.sound_db
            + gauss(rng, self.noise.sound_sigma_db);
        if amp <= ambient_db {
            return Ok(None);
        }
        Ok(Some(amp))
    }

    pub fn simulate_ambient_noise<R: Rng + ?Sized>(
        &self,
        device: &Placement,
        t: f64,
        rng: &mut R,
    ) -> Result<f64, ScenarioError> {
        let p = device.at(t)?;
        Ok((self.testbed.ambient_noise_at(p) + gauss(rng, self.noise.ambient_noise_sigma_db)).max(0.0))
    }

    pub fn simulate_barometer<R: Rng + ?Sized>(
        &self,
        device: &Placement,
        t: f64,
        rng: &mut R,
    ) -> Result<f64, ScenarioError> {
        let p = device.at(t)?;
        let m = &self.testbed.pressure;
        let mut v = m.base_hpa - p.floor as f64 * m.floor_gap_hpa;
        if self.testbed.environment_at(p) == EnvClass::Indoor {
            v += m.indoor_offset_hpa;
        }
        if device.posture == Posture::Pocket {
            v += m.pocket_bias_hpa;
        }
        Ok(v + gauss(rng, m.noise_sigma_hpa))
    }

    /// Field vector whose magnitude is the cell mean plus noise, pointing in
    /// a uniformly random direction.
    pub fn simulate_magnetometer<R: Rng + ?Sized>(
        &self,
        device: &Placement,
        t: f64,
        rng: &mut R,
    ) -> Result<[f64; 3], ScenarioError> {
        let p = device.at(t)?;
        let mag = (self.testbed.magnetic_mean(p) + gauss(rng, self.noise.magnetic_sigma_ut)).max(0.0);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        Ok([dir[0] * mag, dir[1] * mag, dir[2] * mag])
    }

    /// Binary proximity reading: the simulated cover distance is compared
    /// against 10 cm.
    pub fn simulate_proximity<R: Rng + ?Sized>(
        &self,
        device: &Placement,
        t: f64,
        rng: &mut R,
    ) -> Result<ProxState, ScenarioError> {
        device.at(t)?;
        let cover_cm: f64 = match device.posture {
            Posture::Pocket => rng.random_range(0.0..3.0),
            Posture::Hand => rng.random_range(20.0..100.0),
        };
        Ok(if cover_cm < 10.0 {
            ProxState::Near
        } else {
            ProxState::Far
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmatch::magnitude;
    use crate::ranging::distance_from_rss;
    use crate::simulator::testbed::{MagneticField, PressureModel, Region, Wall};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bed() -> Testbed {
        Testbed {
            name: "t".into(),
            bounds: [[0.0, 0.0], [60.0, 20.0]],
            floors: 8,
            ceiling_height_m: 3.0,
            default_environment: EnvClass::Indoor,
            default_ambient_noise_db: 10.0,
            walls: (1..=3)
                .map(|i| Wall { from: [i as f64 * 5.0, 0.0], to: [i as f64 * 5.0, 20.0], loss_db: None })
                .collect(),
            rooms: vec![],
            regions: vec![
                Region {
                    name: "out".into(),
                    polygon: vec![[30.0, 0.0], [60.0, 0.0], [60.0, 20.0], [30.0, 20.0]],
                    environment: EnvClass::Outdoor,
                    ambient_noise_db: 10.0,
                },
                Region {
                    name: "loud".into(),
                    polygon: vec![[0.0, 15.0], [4.0, 15.0], [4.0, 20.0], [0.0, 20.0]],
                    environment: EnvClass::Indoor,
                    ambient_noise_db: 35.0,
                },
            ],
            magnetic: MagneticField::default(),
            pressure: PressureModel::default(),
        }
    }

    fn at(x: f64, y: f64, floor: i32) -> Placement {
        Placement {
            position: Position::new(x, y, floor),
            posture: Posture::Hand,
            span: Interval::new(0.0, 1000.0),
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn colocated_rss_is_clamped_distance() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise::default().zero();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &nz };
        let a = at(2.0, 2.0, 0);
        let rss = prop
            .simulate_rss(&a, &a, 0.0, SensorKind::BleRss, &LinkShadow::default(), &mut rng())
            .unwrap()
            .unwrap();
        assert!((rss - (cal.ble.power_at_1m + 40.0)).abs() < 1e-9);
    }

    #[test]
    fn wall_loss_composes() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise { detection_floor_dbm: -200.0, ..PropagationNoise::default().zero() };
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &nz };
        // 20 m along y=10 crossing the walls at x=5, 10, 15
        let (a, b) = (at(1.0, 10.0, 0), at(21.0, 10.0, 0));
        let rss = prop
            .simulate_rss(&a, &b, 1.0, SensorKind::WifiRss, &LinkShadow::default(), &mut rng())
            .unwrap()
            .unwrap();
        let oracle = -59.0 - 20.0 * 20f64.log10() - 3.0 * 8.0;
        assert!((rss - oracle).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_roundtrip_recovers_distance() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise::default().zero();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &nz };
        let a = at(31.0, 1.0, 0);
        for k in 1..40 {
            let b = at(31.0 + k as f64 * 0.7, 1.0 + k as f64 * 0.3, 0);
            let truth = tb.distance(&a.position, &b.position);
            let rss = prop
                .simulate_rss(&a, &b, 0.0, SensorKind::WifiRss, &LinkShadow::default(), &mut rng())
                .unwrap()
                .unwrap();
            assert!((distance_from_rss(rss, &cal.wifi).unwrap() - truth).abs() < 1e-6);
        }
    }

    #[test]
    fn ble_at_30m_outdoors_is_intermittent() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let noise = PropagationNoise::default();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &noise };
        let (a, b) = (at(30.0, 5.0, 0), at(60.0, 5.0, 0));
        let mut seen = 0;
        let runs = 400;
        for seed in 0..runs {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let shadow = LinkShadow::draw(&noise, 30.0, false, &mut r);
            if prop.simulate_rss(&a, &b, 0.0, SensorKind::BleRss, &shadow, &mut r).unwrap().is_some() {
                seen += 1;
            }
        }
        assert!(seen > 0 && seen < runs, "seen {seen} of {runs}");
    }

    #[test]
    fn sound_rules() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise::default().zero();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &nz };
        let s = LinkShadow::default();
        let a = at(31.0, 5.0, 0);
        // 1 m, quiet: exactly the reference level
        let amp = prop.simulate_sound(&a, &at(32.0, 5.0, 0), 0.0, 0.0, &s, &mut rng()).unwrap();
        assert_eq!(amp, Some(cal.sound.power_at_1m));
        // masked by a loud receiver
        assert_eq!(prop.simulate_sound(&a, &at(33.0, 5.0, 0), 0.0, 35.0, &s, &mut rng()).unwrap(), None);
        // one floor apart can still be heard in silence, two floors never
        assert!(prop.simulate_sound(&a, &at(31.0, 5.0, 1), 0.0, 0.0, &s, &mut rng()).unwrap().is_some());
        assert_eq!(prop.simulate_sound(&a, &at(31.0, 5.0, 2), 0.0, -100.0, &s, &mut rng()).unwrap(), None);
        // beyond range
        assert_eq!(prop.simulate_sound(&a, &at(45.0, 5.0, 0), 0.0, -100.0, &s, &mut rng()).unwrap(), None);
    }

    #[test]
    fn barometer_levels() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise::default().zero();
        let mut tb0 = tb.clone();
        tb0.pressure = tb.pressure.zero_noise();
        let prop = Propagation { testbed: &tb0, calibration: &cal, noise: &nz };
        let mut r = rng();
        let f0 = prop.simulate_barometer(&at(2.0, 2.0, 0), 0.0, &mut r).unwrap();
        let f1 = prop.simulate_barometer(&at(2.0, 2.0, 1), 0.0, &mut r).unwrap();
        assert!((f0 - f1 - 0.43).abs() < 1e-9);
        let out = prop.simulate_barometer(&at(40.0, 2.0, 0), 0.0, &mut r).unwrap();
        assert!((out - f0 - 0.19).abs() < 1e-9);
        let f0b = prop.simulate_barometer(&at(2.5, 2.5, 0), 0.0, &mut r).unwrap();
        assert_eq!(f0, f0b);
        let mut pocket = at(2.0, 2.0, 0);
        pocket.posture = Posture::Pocket;
        assert!((prop.simulate_barometer(&pocket, 0.0, &mut r).unwrap() - f0 - 0.25).abs() < 1e-9);
        let levels: Vec<f64> = (0..8)
            .map(|f| prop.simulate_barometer(&at(2.0, 2.0, f), 0.0, &mut r).unwrap())
            .collect();
        assert!(levels.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn magnetometer_magnitudes() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let nz = PropagationNoise::default().zero();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &nz };
        let mut r = rng();
        let a = prop.simulate_magnetometer(&at(2.1, 2.1, 0), 0.0, &mut r).unwrap();
        let b = prop.simulate_magnetometer(&at(2.15, 2.2, 0), 0.0, &mut r).unwrap();
        assert!((magnitude(a[0], a[1], a[2]) - magnitude(b[0], b[1], b[2])).abs() < 1e-9);
        assert_ne!(a, b);
        let noise = PropagationNoise::default();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &noise };
        for i in 0..200 {
            let v = prop.simulate_magnetometer(&at(30.0 + i as f64 * 0.15, 7.0, 0), 0.0, &mut r).unwrap();
            assert!(magnitude(v[0], v[1], v[2]) <= 67.0 + 5.0 * noise.magnetic_sigma_ut);
        }
    }

    #[test]
    fn unplaced_device_errors() {
        let tb = bed();
        let cal = RangingCalibration::default();
        let noise = PropagationNoise::default();
        let prop = Propagation { testbed: &tb, calibration: &cal, noise: &noise };
        let a = at(1.0, 1.0, 0);
        let mut r = rng();
        assert!(matches!(prop.simulate_barometer(&a, 2000.0, &mut r), Err(ScenarioError::Unplaced(_))));
        assert!(prop.simulate_rss(&a, &a, -1.0, SensorKind::BleRss, &LinkShadow::default(), &mut r).is_err());
        assert!(prop.simulate_magnetometer(&a, 1000.0, &mut r).is_err());
    }

    #[test]
    fn noise_ordering_enforced() {
        assert!(PropagationNoise::default().validate().is_ok());
        assert!(PropagationNoise::default().zero().validate().is_ok());
        let bad = PropagationNoise { wifi_sigma_db: 7.0, ..PropagationNoise::default() };
        assert!(bad.validate().is_err());
    }
}
