//! Scenario configuration: testbeds, noise, cadences and which device pairs
//! to place where. Read from TOML.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::propagation::{Posture, PropagationNoise};
use super::testbed::{EnvClass, Hotspot, MagneticField, Position, Region, Room, Testbed, Wall};
use super::ScenarioError;
use crate::fusion::FusionConfig;

/// Reporting buckets for true pair distance, in metres. The first bucket is
/// closed at zero, the rest are `(lo, hi]`.
pub const DISTANCE_BUCKETS: [(f64, f64); 4] = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 30.0)];

pub fn bucket_label(lo: f64, hi: f64) -> String {
    format!("{lo}-{hi}")
}

/// Index into [`DISTANCE_BUCKETS`], or `None` beyond the last bucket.
pub fn bucket_index(d: f64) -> Option<usize> {
    DISTANCE_BUCKETS
        .iter()
        .position(|&(lo, hi)| d <= hi && (d > lo || lo == 0.0) && d >= 0.0)
}

/// Sampling cadences not covered by the fusion configuration. BLE scans
/// follow `ble_scan_period_s` and WiFi scans run at the cap rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cadences {
    pub chirp_period_s: f64,
    pub env_period_s: f64,
}

impl Default for Cadences {
    fn default() -> Self {
        Cadences { chirp_period_s: 30.0, env_period_s: 30.0 }
    }
}

/// `count` pairs placed at a uniformly drawn distance in `(lo_m, hi_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub testbed: String,
    pub lo_m: f64,
    pub hi_m: f64,
    pub count: usize,
    /// Lets the pair sit on different floors when the distance allows it.
    #[serde(default = "yes")]
    pub allow_floor_change: bool,
}

fn yes() -> bool {
    true
}

/// One explicitly placed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub testbed: String,
    pub a: Position,
    pub b: Position,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posture_a: Option<Posture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posture_b: Option<Posture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Defaults to one window length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default = "default_pocket")]
    pub pocket_probability: f64,
    #[serde(default)]
    pub cadence: Cadences,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub noise: PropagationNoise,
    pub testbeds: Vec<Testbed>,
    #[serde(default)]
    pub buckets: Vec<BucketSpec>,
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
}

fn default_pocket() -> f64 {
    0.5
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    config: ScenarioConfig,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        validate(&config)?;
        Ok(Scenario { config })
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Scenario::new(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(&self.config).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }

    pub fn duration(&self) -> f64 {
        self.config
            .duration_s
            .unwrap_or(self.config.fusion.window_length_s)
    }

    pub fn testbed(&self, name: &str) -> Option<&Testbed> {
        self.config.testbeds.iter().find(|t| t.name == name)
    }

    pub fn instance_count(&self) -> usize {
        self.config.buckets.iter().map(|b| b.count).sum::<usize>() + self.config.instances.len()
    }

    /// The reference layout: an office, a multi-storey building and an open
    /// parking garage, with 240 pairs split 60/60/40/80 over the distance
    /// buckets.
    pub fn standard(seed: u64) -> Self {
        let mut buckets = Vec::new();
        for (testbed, counts) in [
            ("office", [20, 20, 10, 10]),
            ("building", [20, 20, 10, 10]),
            ("garage", [20, 20, 20, 60]),
        ] {
            for (i, &(lo, hi)) in DISTANCE_BUCKETS.iter().enumerate() {
                buckets.push(BucketSpec {
                    testbed: testbed.into(),
                    // phones are never closer than 20 cm
                    lo_m: if i == 0 { 0.2 } else { lo },
                    hi_m: hi,
                    count: counts[i],
                    allow_floor_change: true,
                });
            }
        }
        let config = ScenarioConfig {
            seed,
            duration_s: None,
            pocket_probability: default_pocket(),
            cadence: Cadences::default(),
            // five minutes per placement
            fusion: FusionConfig { window_length_s: 300.0, ..FusionConfig::default() },
            noise: PropagationNoise::default(),
            testbeds: vec![office(), building(), garage()],
            buckets,
            instances: Vec::new(),
        };
        Scenario::new(config).expect("standard scenario is valid")
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

fn wall(from: [f64; 2], to: [f64; 2], loss_db: Option<f64>) -> Wall {
    Wall { from, to, loss_db }
}

/// A row of `n` equal rooms between `y0` and `y1`, separated by partitions
/// with the given RF loss.
fn room_row(prefix: &str, x0: f64, width: f64, n: usize, y0: f64, y1: f64, loss_db: f64) -> (Vec<Room>, Vec<Wall>) {
    let rooms = (0..n)
        .map(|i| Room {
            name: format!("{prefix}{i}"),
            polygon: rect(x0 + i as f64 * width, y0, x0 + (i + 1) as f64 * width, y1),
        })
        .collect();
    let walls = (1..n)
        .map(|i| {
            let x = x0 + i as f64 * width;
            wall([x, y0], [x, y1], Some(loss_db))
        })
        .collect();
    (rooms, walls)
}

fn region(name: &str, polygon: Vec<[f64; 2]>, environment: EnvClass, ambient_noise_db: f64) -> Region {
    Region { name: name.into(), polygon, environment, ambient_noise_db }
}

/// Indoor field: strong per-room anomalies over mild small-scale variation.
fn indoor_field(seed: u64, hotspots: Vec<Hotspot>) -> MagneticField {
    MagneticField {
        seed,
        lattice_m: 3.0,
        indoor_variation_ut: 50.0,
        room_variation_ut: 10.0,
        regional_ut: 35.0,
        base_ut: 70.0,
        hotspots,
        ..MagneticField::default()
    }
}

/// Three-storey office: ten small rooms behind drywall partitions, a
/// corridor, and a busy open-plan area with a kitchen.
fn office() -> Testbed {
    let (mut rooms, mut walls) = room_row("room", 0.0, 4.0, 10, 0.0, 8.0, 3.0);
    walls.push(wall([0.0, 8.0], [40.0, 8.0], Some(3.0)));
    walls.push(wall([0.0, 11.0], [40.0, 11.0], Some(3.0)));
    // glass between the two open-plan halves
    walls.push(wall([20.0, 11.0], [20.0, 20.0], Some(2.0)));
    rooms.push(Room { name: "corridor".into(), polygon: rect(0.0, 8.0, 40.0, 11.0) });
    rooms.push(Room { name: "open-west".into(), polygon: rect(0.0, 11.0, 20.0, 20.0) });
    rooms.push(Room { name: "open-east".into(), polygon: rect(20.0, 11.0, 40.0, 20.0) });
    Testbed {
        name: "office".into(),
        bounds: [[0.0, 0.0], [40.0, 20.0]],
        floors: 3,
        ceiling_height_m: 3.0,
        default_environment: EnvClass::Indoor,
        default_ambient_noise_db: 10.0,
        walls,
        rooms,
        regions: vec![
            region("kitchen", rect(34.0, 11.0, 40.0, 20.0), EnvClass::Indoor, 32.0),
            region("open-plan", rect(0.0, 11.0, 40.0, 20.0), EnvClass::Indoor, 24.0),
            region("corridor", rect(0.0, 8.0, 40.0, 11.0), EnvClass::Indoor, 18.0),
        ],
        magnetic: indoor_field(
            11,
            vec![
                Hotspot { x: 37.0, y: 16.0, floor: 0, amplitude_ut: 45.0, radius_m: 1.5 },
                Hotspot { x: 2.0, y: 4.0, floor: 1, amplitude_ut: 35.0, radius_m: 1.0 },
            ],
        ),
        pressure: Default::default(),
    }
}

/// Fourteen-storey block: offices either side of a central corridor. The
/// north side is open-plan and busy.
fn building() -> Testbed {
    let (mut rooms, mut walls) = room_row("s", 0.0, 6.0, 4, 0.0, 10.0, 3.0);
    let (north, north_walls) = room_row("n", 0.0, 6.0, 4, 14.0, 24.0, 3.0);
    rooms.extend(north);
    walls.extend(north_walls);
    walls.push(wall([0.0, 10.0], [24.0, 10.0], Some(3.0)));
    walls.push(wall([0.0, 14.0], [24.0, 14.0], Some(3.0)));
    rooms.push(Room { name: "corridor".into(), polygon: rect(0.0, 10.0, 24.0, 14.0) });
    // lift machinery on every floor
    let hotspots = (0..14)
        .map(|f| Hotspot { x: 22.0, y: 12.0, floor: f, amplitude_ut: 40.0, radius_m: 1.5 })
        .collect();
    Testbed {
        name: "building".into(),
        bounds: [[0.0, 0.0], [24.0, 24.0]],
        floors: 14,
        ceiling_height_m: 3.0,
        default_environment: EnvClass::Indoor,
        default_ambient_noise_db: 12.0,
        walls,
        rooms,
        regions: vec![
            region("open-offices", rect(0.0, 14.0, 24.0, 24.0), EnvClass::Indoor, 24.0),
            region("corridor", rect(0.0, 10.0, 24.0, 14.0), EnvClass::Indoor, 22.0),
        ],
        magnetic: indoor_field(23, hotspots),
        pressure: Default::default(),
    }
}

/// Open two-level parking garage with a loud ramp.
fn garage() -> Testbed {
    let mut hotspots = Vec::new();
    for level in 0..2 {
        for i in 0..6 {
            hotspots.push(Hotspot {
                x: 5.0 + i as f64 * 10.0,
                y: if level == 0 { 8.0 } else { 32.0 },
                floor: level,
                amplitude_ut: 12.0,
                radius_m: 1.2,
            });
        }
    }
    Testbed {
        name: "garage".into(),
        bounds: [[0.0, 0.0], [60.0, 40.0]],
        floors: 2,
        ceiling_height_m: 3.0,
        default_environment: EnvClass::Outdoor,
        default_ambient_noise_db: 14.0,
        walls: Vec::new(),
        rooms: Vec::new(),
        regions: vec![Region {
            name: "ramp".into(),
            polygon: rect(50.0, 0.0, 60.0, 10.0),
            environment: EnvClass::Outdoor,
            ambient_noise_db: 26.0,
        }],
        magnetic: MagneticField { seed: 37, outdoor_variation_ut: 19.0, regional_ut: 0.0, hotspots, ..MagneticField::default() },
        pressure: Default::default(),
    }
}

fn validate(c: &ScenarioConfig) -> Result<(), ScenarioError> {
    let bad = |m: String| Err(ScenarioError::Invalid(m));
    c.fusion
        .validate()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    c.noise.validate()?;
    if !(0.0..=1.0).contains(&c.pocket_probability) {
        return bad("pocket_probability must be in [0, 1]".into());
    }
    if !(c.cadence.chirp_period_s > 0.0 && c.cadence.env_period_s > 0.0) {
        return bad("cadences must be > 0".into());
    }
    if let Some(d) = c.duration_s {
        if !(d >= c.fusion.window_length_s && d.is_finite()) {
            return bad(format!("duration {d} s is shorter than one window"));
        }
    }
    let mut names = HashSet::new();
    for tb in &c.testbeds {
        if !names.insert(tb.name.as_str()) {
            return bad(format!("duplicate testbed {:?}", tb.name));
        }
        let [lo, hi] = tb.bounds;
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || tb.floors < 1 || !(tb.ceiling_height_m > 0.0) {
            return bad(format!("testbed {:?} has degenerate geometry", tb.name));
        }
    }
    for b in &c.buckets {
        if !names.contains(b.testbed.as_str()) {
            return bad(format!("bucket refers to unknown testbed {:?}", b.testbed));
        }
        if !(b.lo_m >= 0.0 && b.lo_m < b.hi_m && b.hi_m.is_finite()) {
            return bad(format!("bucket range ({}, {}] is empty", b.lo_m, b.hi_m));
        }
    }
    for inst in &c.instances {
        let Some(tb) = c.testbeds.iter().find(|t| t.name == inst.testbed) else {
            return bad(format!("instance refers to unknown testbed {:?}", inst.testbed));
        };
        for p in [&inst.a, &inst.b] {
            if !tb.contains(p) {
                return Err(ScenarioError::Placement(format!(
                    "({}, {}, floor {}) lies outside testbed {:?}",
                    p.x, p.y, p.floor, tb.name
                )));
            }
        }
    }
    if c.buckets.iter().all(|b| b.count == 0) && c.instances.is_empty() {
        return bad("scenario places no pairs".into());
    }
    Ok(())
}

impl BucketSpec {
    /// Draws two positions inside `tb` whose 3D distance lies in the bucket.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        tb: &Testbed,
        rng: &mut R,
    ) -> Result<(Position, Position), ScenarioError> {
        let [lo, hi] = tb.bounds;
        for _ in 0..10_000 {
            let d = self.hi_m - rng.random::<f64>() * (self.hi_m - self.lo_m);
            let floor_a = rng.random_range(0..tb.floors);
            let max_k = if self.allow_floor_change {
                ((d / tb.ceiling_height_m).floor() as i32).min(tb.floors - 1)
            } else {
                0
            };
            let k = rng.random_range(0..=max_k);
            let floor_b = if rng.random::<bool>() { floor_a + k } else { floor_a - k };
            let dz = k as f64 * tb.ceiling_height_m;
            let horizontal = (d * d - dz * dz).max(0.0).sqrt();
            let a = Position::new(rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1]), floor_a);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let b = Position::new(a.x + horizontal * theta.cos(), a.y + horizontal * theta.sin(), floor_b);
            if tb.contains(&a) && tb.contains(&b) {
                return Ok((a, b));
            }
        }
        Err(ScenarioError::Placement(format!(
            "cannot fit a ({}, {}] m pair in testbed {:?}",
            self.lo_m, self.hi_m, tb.name
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_has_table_buckets() {
        let s = Scenario::standard(42);
        assert_eq!(s.instance_count(), 240);
        let mut per_bucket = [0usize; 4];
        for b in &s.config().buckets {
            per_bucket[bucket_index(b.hi_m).unwrap()] += b.count;
        }
        assert_eq!(per_bucket, [60, 60, 40, 80]);
    }

    #[test]
    fn toml_roundtrip() {
        let s = Scenario::standard(7);
        let text = s.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
            seed = 5
            [[testbeds]]
            name = "lab"
            bounds = [[0.0, 0.0], [10.0, 10.0]]
            default_environment = "indoor"
            default_ambient_noise_db = 10.0

            [[instances]]
            testbed = "lab"
            a = { x = 1.0, y = 1.0 }
            b = { x = 1.5, y = 1.0 }
        "#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.duration(), 900.0);
        assert_eq!(s.testbed("lab").unwrap().floors, 1);
        assert_eq!(s.config().pocket_probability, 0.5);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = Scenario::standard(1).config().clone();
        c.instances.push(InstanceSpec {
            testbed: "office".into(),
            a: Position::new(100.0, 0.0, 0),
            b: Position::new(1.0, 1.0, 0),
            posture_a: None,
            posture_b: None,
        });
        assert!(matches!(Scenario::new(c), Err(ScenarioError::Placement(_))));

        let mut c = Scenario::standard(1).config().clone();
        c.buckets[0].testbed = "nowhere".into();
        assert!(Scenario::new(c).is_err());

        let mut c = Scenario::standard(1).config().clone();
        c.pocket_probability = 1.5;
        assert!(Scenario::new(c).is_err());

        assert!(matches!(Scenario::from_toml("seed = "), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn bucket_sampling_respects_range() {
        let s = Scenario::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for b in &s.config().buckets {
            let tb = s.testbed(&b.testbed).unwrap();
            for _ in 0..50 {
                let (p, q) = b.sample(tb, &mut rng).unwrap();
                let d = tb.distance(&p, &q);
                assert!(d > b.lo_m - 1e-9 && d <= b.hi_m + 1e-9, "{d} not in ({}, {}]", b.lo_m, b.hi_m);
                assert!(tb.contains(&p) && tb.contains(&q));
            }
        }
    }

    #[test]
    fn bucket_index_edges() {
        assert_eq!(bucket_index(0.0), Some(0));
        assert_eq!(bucket_index(1.0), Some(0));
        assert_eq!(bucket_index(1.0001), Some(1));
        assert_eq!(bucket_index(30.0), Some(3));
        assert_eq!(bucket_index(31.0), None);
    }
}
