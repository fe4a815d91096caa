//! Trace generation: places every pair, then samples each sensor at its
//! cadence from one seeded random stream.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::propagation::{LinkShadow, Placement, Posture, Propagation};
use super::scenario::{bucket_index, bucket_label, Scenario, DISTANCE_BUCKETS};
use super::testbed::{EnvClass, Position};
use super::ScenarioError;
use crate::fusion::FusionConfig;
use crate::io::{read_jsonl, write_atomic, write_jsonl, IoError};
use crate::model::{
    window_starts, DeviceKey, GroundTruthLabel, Interval, Pair, SampleValue, SensorKind,
    SensorSample, Trace,
};

/// Where one generated pair was placed. The first device of `pair` is the
/// scanning (central) side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub testbed: String,
    pub pair: Pair,
    pub a: Position,
    pub b: Position,
    pub posture_a: Posture,
    pub posture_b: Posture,
    pub true_distance_m: f64,
    pub bucket: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub duration_s: f64,
    pub fusion: FusionConfig,
    pub instances: Vec<InstanceRecord>,
}

impl Manifest {
    pub fn pairs(&self) -> impl Iterator<Item = &Pair> {
        self.instances.iter().map(|i| &i.pair)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub traces: Vec<Trace>,
    pub truth: Vec<GroundTruthLabel>,
    pub manifest: Manifest,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const TRACE_DIR: &str = "traces";

impl GeneratedData {
    /// Writes `manifest.json`, `truth.jsonl` and one `traces/<device>.jsonl`
    /// per device.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        for trace in &self.traces {
            let Some(dev) = &trace.device else { continue };
            write_jsonl(&dir.join(TRACE_DIR).join(format!("{dev}.jsonl")), &trace.samples)?;
        }
        write_jsonl(&dir.join(TRUTH_FILE), &self.truth)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| IoError::Io { path, source })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut traces = Vec::new();
        for inst in &manifest.instances {
            for dev in [&inst.pair.0, &inst.pair.1] {
                let samples = read_jsonl(&dir.join(TRACE_DIR).join(format!("{dev}.jsonl")))?;
                traces.push(Trace::new(dev.clone(), samples));
            }
        }
        let truth = read_jsonl(&dir.join(TRUTH_FILE))?;
        Ok(GeneratedData { traces, truth, manifest })
    }
}

struct Planned {
    testbed: String,
    a: Position,
    b: Position,
    posture_a: Option<Posture>,
    posture_b: Option<Posture>,
}

pub fn device_keys(id: usize) -> (DeviceKey, DeviceKey) {
    (DeviceKey::new(format!("i{id:03}a")), DeviceKey::new(format!("i{id:03}b")))
}

/// Runs the scenario. The same scenario and seed always give identical output.
pub fn generate_traces(scenario: &Scenario) -> Result<GeneratedData, ScenarioError> {
    let cfg = scenario.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let duration = scenario.duration();
    let span = Interval::new(0.0, duration);

    let mut planned = Vec::with_capacity(scenario.instance_count());
    for bucket in &cfg.buckets {
        let tb = scenario
            .testbed(&bucket.testbed)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown testbed {}", bucket.testbed)))?;
        for _ in 0..bucket.count {
            let (a, b) = bucket.sample(tb, &mut rng)?;
            planned.push(Planned { testbed: tb.name.clone(), a, b, posture_a: None, posture_b: None });
        }
    }
    for inst in &cfg.instances {
        planned.push(Planned {
            testbed: inst.testbed.clone(),
            a: inst.a,
            b: inst.b,
            posture_a: inst.posture_a,
            posture_b: inst.posture_b,
        });
    }

    let windows = window_starts(0.0, duration, cfg.fusion.window_length_s, cfg.fusion.stride());
    let mut traces = Vec::with_capacity(planned.len() * 2);
    let mut truth = Vec::new();
    let mut instances = Vec::with_capacity(planned.len());

    for (id, plan) in planned.into_iter().enumerate() {
        let tb = scenario
            .testbed(&plan.testbed)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown testbed {}", plan.testbed)))?;
        let posture = |fixed: Option<Posture>, rng: &mut ChaCha8Rng| {
            fixed.unwrap_or_else(|| {
                if rng.random::<f64>() < cfg.pocket_probability {
                    Posture::Pocket
                } else {
                    Posture::Hand
                }
            })
        };
        let posture_a = posture(plan.posture_a, &mut rng);
        let posture_b = posture(plan.posture_b, &mut rng);
        let pa = Placement { position: plan.a, posture: posture_a, span };
        let pb = Placement { position: plan.b, posture: posture_b, span };
        let (ka, kb) = device_keys(id);
        let indoor = [&plan.a, &plan.b]
            .iter()
            .all(|p| tb.environment_at(p) == EnvClass::Indoor);
        let shadow = LinkShadow::draw(&cfg.noise, tb.distance(&plan.a, &plan.b), indoor, &mut rng);
        let prop = Propagation {
            testbed: tb,
            calibration: &cfg.fusion.ranging,
            noise: &cfg.noise,
        };

        let mut sa = Vec::new();
        let mut sb = Vec::new();
        simulate_pair(&prop, scenario, duration, [&pa, &pb], [&ka, &kb], [&mut sa, &mut sb], &shadow, &mut rng)?;

        let d = tb.distance(&plan.a, &plan.b);
        let pair = Pair(ka.clone(), kb.clone());
        for &start in &windows {
            truth.push(GroundTruthLabel::from_distance(
                pair.clone(),
                Interval::new(start, start + cfg.fusion.window_length_s),
                d,
                cfg.fusion.contact_radius_m,
            ));
        }
        instances.push(InstanceRecord {
            id,
            testbed: plan.testbed,
            pair,
            a: plan.a,
            b: plan.b,
            posture_a,
            posture_b,
            true_distance_m: d,
            bucket: bucket_index(d).map(|i| bucket_label(DISTANCE_BUCKETS[i].0, DISTANCE_BUCKETS[i].1)),
        });
        traces.push(Trace::new(ka, sa));
        traces.push(Trace::new(kb, sb));
    }

    Ok(GeneratedData {
        traces,
        truth,
        manifest: Manifest {
            seed: cfg.seed,
            duration_s: duration,
            fusion: cfg.fusion,
            instances,
        },
    })
}

fn ticks(period: f64, offset: f64, duration: f64) -> impl Iterator<Item = f64> {
    (0u64..)
        .map(move |k| k as f64 * period + offset)
        .take_while(move |t| *t < duration)
}

/// Samples both devices of one pair. Each device scans and listens for the
/// other and records its own ambient sensors.
#[allow(clippy::too_many_arguments)]
fn simulate_pair(
    prop: &Propagation<'_>,
    scenario: &Scenario,
    duration: f64,
    place: [&Placement; 2],
    keys: [&DeviceKey; 2],
    out: [&mut Vec<SensorSample>; 2],
    shadow: &LinkShadow,
    rng: &mut ChaCha8Rng,
) -> Result<(), ScenarioError> {
    let cfg = scenario.config();
    let fusion = &cfg.fusion;
    let outs = out;

    for (side, lag) in [(0usize, 0.0), (1, 1.0)] {
        let (me, peer) = (side, 1 - side);
        for t in ticks(fusion.ble_scan_period_s, 1.0 + lag, duration) {
            if let Some(rss) = prop.simulate_rss(place[peer], place[me], t, SensorKind::BleRss, shadow, rng)? {
                outs[me].push(SensorSample::link(t, SensorKind::BleRss, rss, keys[me].clone(), keys[peer].clone()));
            }
        }
        for t in ticks(fusion.wifi_interval(), 3.0 + lag, duration) {
            if let Some(rss) = prop.simulate_rss(place[peer], place[me], t, SensorKind::WifiRss, shadow, rng)? {
                outs[me].push(SensorSample::link(t, SensorKind::WifiRss, rss, keys[me].clone(), keys[peer].clone()));
            }
        }
        // listen for the peer's chirp right after checking the noise level;
        // the peer only chirps when the listener reports a quiet room
        for t in ticks(cfg.cadence.chirp_period_s, 5.0 + 2.0 * lag, duration) {
            let noise = prop.simulate_ambient_noise(place[me], t, rng)?;
            outs[me].push(SensorSample::ambient(t, SensorKind::AmbientNoise, SampleValue::Scalar(noise), keys[me].clone()));
            if noise > fusion.noise_gate_db {
                continue;
            }
            let heard_at = t + 0.5;
            if let Some(amp) = prop.simulate_sound(place[peer], place[me], heard_at, noise, shadow, rng)? {
                outs[me].push(SensorSample::link(
                    heard_at,
                    SensorKind::SoundAmplitude,
                    amp,
                    keys[me].clone(),
                    keys[peer].clone(),
                ));
            }
        }
        for t in ticks(cfg.cadence.env_period_s, 10.0 + lag, duration) {
            let p = prop.simulate_barometer(place[me], t, rng)?;
            let m = prop.simulate_magnetometer(place[me], t, rng)?;
            let x = prop.simulate_proximity(place[me], t, rng)?;
            let key = keys[me];
            outs[me].push(SensorSample::ambient(t, SensorKind::Barometer, SampleValue::Scalar(p), key.clone()));
            outs[me].push(SensorSample::ambient(t, SensorKind::Magnetometer, SampleValue::Vector(m), key.clone()));
            outs[me].push(SensorSample::ambient(t, SensorKind::Proximity, SampleValue::Scalar(x.value()), key.clone()));
        }
    }
    Ok(())
}
