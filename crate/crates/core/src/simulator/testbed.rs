//! Testbed geometry and ambient fields.

use serde::{Deserialize, Serialize};

pub type Xy = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvClass {
    Indoor,
    Outdoor,
}

/// A position inside a testbed. `floor` 0 is ground level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub floor: i32,
}

impl Position {
    pub fn new(x: f64, y: f64, floor: i32) -> Self {
        Position { x, y, floor }
    }

    pub fn xy(&self) -> Xy {
        [self.x, self.y]
    }
}

/// Straight wall segment, repeated on every floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub from: Xy,
    pub to: Xy,
    /// Overrides the propagation model's per-wall loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    pub polygon: Vec<Xy>,
}

/// Area with its own environment class and ambient noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub polygon: Vec<Xy>,
    pub environment: EnvClass,
    pub ambient_noise_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub floor: i32,
    pub amplitude_ut: f64,
    pub radius_m: f64,
}

/// Procedural magnetic magnitude map: a base level, smooth seeded value
/// noise, a per-room anomaly offset and appliance hotspots, quantized to
/// square cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MagneticField {
    pub seed: u64,
    pub cell_m: f64,
    pub lattice_m: f64,
    pub base_ut: f64,
    pub indoor_variation_ut: f64,
    pub outdoor_variation_ut: f64,
    pub room_variation_ut: f64,
    /// Coarse building-scale trend, applied indoors and outdoors.
    pub regional_ut: f64,
    pub regional_lattice_m: f64,
    pub indoor_max_ut: f64,
    pub outdoor_max_ut: f64,
    pub min_ut: f64,
    pub hotspots: Vec<Hotspot>,
}

impl Default for MagneticField {
    fn default() -> Self {
        MagneticField {
            seed: 1,
            cell_m: 0.25,
            lattice_m: 2.5,
            base_ut: 48.0,
            indoor_variation_ut: 22.0,
            outdoor_variation_ut: 7.0,
            room_variation_ut: 20.0,
            regional_ut: 0.0,
            regional_lattice_m: 15.0,
            indoor_max_ut: 120.0,
            outdoor_max_ut: 67.0,
            min_ut: 20.0,
            hotspots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PressureModel {
    /// Outdoor ground-level pressure.
    pub base_hpa: f64,
    pub floor_gap_hpa: f64,
    pub noise_sigma_hpa: f64,
    /// Added indoors relative to outdoors at the same level.
    pub indoor_offset_hpa: f64,
    /// Added when the phone is pocketed.
    pub pocket_bias_hpa: f64,
}

impl Default for PressureModel {
    fn default() -> Self {
        PressureModel {
            base_hpa: 1012.59,
            floor_gap_hpa: 0.43,
            noise_sigma_hpa: 0.13 / 3.0,
            indoor_offset_hpa: -0.19,
            pocket_bias_hpa: 0.25,
        }
    }
}

impl PressureModel {
    pub fn zero_noise(&self) -> Self {
        PressureModel {
            noise_sigma_hpa: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testbed {
    pub name: String,
    /// Axis-aligned bounds `[min, max]` for placements.
    pub bounds: [Xy; 2],
    #[serde(default = "one")]
    pub floors: i32,
    #[serde(default = "default_ceiling")]
    pub ceiling_height_m: f64,
    pub default_environment: EnvClass,
    pub default_ambient_noise_db: f64,
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub magnetic: MagneticField,
    #[serde(default)]
    pub pressure: PressureModel,
}

fn one() -> i32 {
    1
}

fn default_ceiling() -> f64 {
    3.0
}

impl Testbed {
    pub fn contains(&self, p: &Position) -> bool {
        let [lo, hi] = self.bounds;
        (lo[0]..=hi[0]).contains(&p.x)
            && (lo[1]..=hi[1]).contains(&p.y)
            && (0..self.floors).contains(&p.floor)
    }

    fn region_at(&self, p: &Position) -> Option<&Region> {
        self.regions.iter().find(|r| point_in_polygon(p.xy(), &r.polygon))
    }

    pub fn environment_at(&self, p: &Position) -> EnvClass {
        self.region_at(p)
            .map_or(self.default_environment, |r| r.environment)
    }

    pub fn ambient_noise_at(&self, p: &Position) -> f64 {
        self.region_at(p)
            .map_or(self.default_ambient_noise_db, |r| r.ambient_noise_db)
    }

    pub fn room_at(&self, p: &Position) -> Option<usize> {
        self.rooms.iter().position(|r| point_in_polygon(p.xy(), &r.polygon))
    }

    /// Straight-line 3D distance, ignoring obstacles.
    pub fn distance(&self, a: &Position, b: &Position) -> f64 {
        let dz = (a.floor - b.floor) as f64 * self.ceiling_height_m;
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + dz * dz).sqrt()
    }

    /// Walls crossed by the horizontal projection of the path, with their losses.
    pub fn walls_crossed<'a>(&'a self, a: &Position, b: &Position) -> impl Iterator<Item = &'a Wall> + 'a {
        let (p, q) = (a.xy(), b.xy());
        self.walls
            .iter()
            .filter(move |w| segments_cross(p, q, w.from, w.to))
    }

    pub fn floors_between(&self, a: &Position, b: &Position) -> u32 {
        a.floor.abs_diff(b.floor)
    }

    /// Mean field magnitude of the cell containing `p`.
    pub fn magnetic_mean(&self, p: &Position) -> f64 {
        let m = &self.magnetic;
        let cx = ((p.x / m.cell_m).floor() + 0.5) * m.cell_m;
        let cy = ((p.y / m.cell_m).floor() + 0.5) * m.cell_m;
        let centre = Position::new(cx, cy, p.floor);
        let env = self.environment_at(p);
        let (variation, max) = match env {
            EnvClass::Indoor => (m.indoor_variation_ut, m.indoor_max_ut),
            EnvClass::Outdoor => (m.outdoor_variation_ut, m.outdoor_max_ut),
        };
        let mut v = m.base_ut
            + variation * value_noise(m.seed, cx / m.lattice_m, cy / m.lattice_m, p.floor);
        if m.regional_ut != 0.0 {
            let (rx, ry) = (cx / m.regional_lattice_m, cy / m.regional_lattice_m);
            v += m.regional_ut * value_noise(m.seed ^ 0x07e6_10a1, rx, ry, p.floor);
        }
        if env == EnvClass::Indoor {
            if let Some(room) = self.room_at(p) {
                v += m.room_variation_ut * hash_unit(m.seed ^ 0x005e_ed0f_200d, room as i64, 0, p.floor);
            }
        }
        for h in m.hotspots.iter().filter(|h| h.floor == p.floor) {
            let r2 = (centre.x - h.x).powi(2) + (centre.y - h.y).powi(2);
            v += h.amplitude_ut * (-r2 / (2.0 * h.radius_m * h.radius_m)).exp();
        }
        v.clamp(m.min_ut, max)
    }
}

fn cross(o: Xy, a: Xy, b: Xy) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Proper or touching intersection of segments `pq` and `ab`.
pub fn segments_cross(p: Xy, q: Xy, a: Xy, b: Xy) -> bool {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let d3 = cross(p, q, a);
    let d4 = cross(p, q, b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Xy, b: Xy, c: Xy| {
        c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on(a, b, p))
        || (d2 == 0.0 && on(a, b, q))
        || (d3 == 0.0 && on(p, q, a))
        || (d4 == 0.0 && on(p, q, b))
}

pub fn point_in_polygon(pt: Xy, poly: &[Xy]) -> bool {
    let mut inside = false;
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > pt[1]) != (b[1] > pt[1])
            && pt[0] < (b[0] - a[0]) * (pt[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic value in [-1, 1] for a lattice point.
fn hash_unit(seed: u64, ix: i64, iy: i64, floor: i32) -> f64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ ix as u64);
    h = splitmix64(h ^ (iy as u64).rotate_left(21));
    h = splitmix64(h ^ (floor as i64 as u64).rotate_left(42));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in [-1, 1] with smoothstep easing.
fn value_noise(seed: u64, x: f64, y: f64, floor: i32) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = hash_unit(seed, ix, iy, floor);
    let v10 = hash_unit(seed, ix + 1, iy, floor);
    let v01 = hash_unit(seed, ix, iy + 1, floor);
    let v11 = hash_unit(seed, ix + 1, iy + 1, floor);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}
