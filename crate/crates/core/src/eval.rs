//! Evaluation: confusion counts, accuracy, per-tier runs, distance-error CDF
//! and magnetic separation by distance bucket.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envmatch::magnitude;
use crate::fusion::{decide, FusionConfig, FusionError, StageEvidence};
use crate::model::{
    make_window, ContactDecision, ContactWindow, DeviceKey, GroundTruthLabel, Interval, Pair,
    SensorKind, SensorSample, Tier, Trace,
};
use crate::simulator::scenario::{bucket_label, DISTANCE_BUCKETS};
use crate::simulator::GeneratedData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("decisions and ground truth disagree on instance keys: {0}")]
    KeyMismatch(String),
    #[error("no instances to evaluate")]
    Empty,
    #[error("length mismatch: {0} estimates vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `(TP + TN) / total` as a reduced fraction.
pub fn accuracy_ratio(c: &ConfusionCounts) -> Result<(u64, u64), EvaluationError> {
    let total = c.total();
    if total == 0 {
        return Err(EvaluationError::Empty);
    }
    let correct = c.tp + c.tn;
    let g = gcd(correct, total).max(1);
    Ok((correct / g, total / g))
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, EvaluationError> {
    let (n, d) = accuracy_ratio(c)?;
    Ok(n as f64 / d as f64)
}

type Key = (Pair, u64, u64);

fn key(pair: &Pair, w: &Interval) -> Key {
    (pair.clone(), w.start.to_bits(), w.end.to_bits())
}

/// Tallies decisions against labels. Both must cover exactly the same
/// (pair, window) instances, each once.
pub fn confusion(
    decisions: &[ContactDecision],
    truth: &[GroundTruthLabel],
) -> Result<ConfusionCounts, EvaluationError> {
    let mut labels: HashMap<Key, bool> = HashMap::with_capacity(truth.len());
    for l in truth {
        if labels.insert(key(&l.pair, &l.window), l.is_contact).is_some() {
            return Err(EvaluationError::KeyMismatch(format!("duplicate label for {}", l.pair)));
        }
    }
    let mut seen = HashSet::with_capacity(decisions.len());
    let mut counts = ConfusionCounts::default();
    for d in decisions {
        let k = key(&d.pair, &d.window);
        let Some(&actual) = labels.get(&k) else {
            return Err(EvaluationError::KeyMismatch(format!(
                "no label for {} at [{}, {})",
                d.pair, d.window.start, d.window.end
            )));
        };
        if !seen.insert(k) {
            return Err(EvaluationError::KeyMismatch(format!("duplicate decision for {}", d.pair)));
        }
        counts.record(d.contact, actual);
    }
    if seen.len() != labels.len() {
        return Err(EvaluationError::KeyMismatch(format!(
            "{} labels have no decision",
            labels.len() - seen.len()
        )));
    }
    Ok(counts)
}

/// Samples of each device, keyed by device.
pub fn index_traces(traces: &[Trace]) -> HashMap<&DeviceKey, &[SensorSample]> {
    traces
        .iter()
        .filter_map(|t| t.device.as_ref().map(|d| (d, t.samples.as_slice())))
        .collect()
}

/// Runs the pipeline for each (pair, window).
pub fn detect(
    traces: &[Trace],
    instances: &[(Pair, Interval)],
    tier: Tier,
    cfg: &FusionConfig,
) -> Result<Vec<ContactDecision>, EvaluationError> {
    cfg.validate()?;
    let by_device = index_traces(traces);
    let none: &[SensorSample] = &[];
    instances
        .iter()
        .map(|(pair, w)| {
            let a = by_device.get(&pair.0).copied().unwrap_or(none);
            let b = by_device.get(&pair.1).copied().unwrap_or(none);
            let window = make_window(a.iter().chain(b), pair, w.start, w.length()).unwrap_or_else(|_| {
                ContactWindow { pair: pair.clone(), start: w.start, end: w.end, samples: Vec::new() }
            });
            let ev = StageEvidence::from_window(&window, cfg)?;
            Ok(decide(&ev, cfg, tier))
        })
        .collect()
}

/// Detection over every labelled instance, then the confusion tally.
pub fn run_tier(
    traces: &[Trace],
    truth: &[GroundTruthLabel],
    tier: Tier,
    cfg: &FusionConfig,
) -> Result<(Vec<ContactDecision>, ConfusionCounts), EvaluationError> {
    let keys: Vec<(Pair, Interval)> = truth.iter().map(|l| (l.pair.clone(), l.window)).collect();
    let decisions = detect(traces, &keys, tier, cfg)?;
    let counts = confusion(&decisions, truth)?;
    Ok((decisions, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub error: f64,
    pub fraction: f64,
}

/// Empirical CDF of absolute errors, one point per distinct error value.
pub fn distance_error_cdf(estimated: &[f64], truth: &[f64]) -> Result<Vec<CdfPoint>, EvaluationError> {
    if estimated.len() != truth.len() {
        return Err(EvaluationError::LengthMismatch(estimated.len(), truth.len()));
    }
    if estimated.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let mut errors: Vec<f64> = estimated.iter().zip(truth).map(|(e, t)| (e - t).abs()).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let mut points: Vec<CdfPoint> = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.error == *e => last.fraction = fraction,
            _ => points.push(CdfPoint { error: *e, fraction }),
        }
    }
    Ok(points)
}

pub fn cdf_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("abs_error_m,fraction\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.error, p.fraction);
    }
    out
}

/// Euclidean distance between two sequences, truncated to the shorter one.
pub fn sequence_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub bucket: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
}

/// Mean and population standard deviation of the magnetic-magnitude sequence
/// distance per true-distance bucket. Empty buckets report no statistics.
pub fn magnetic_separation_report(pairs: &[(f64, Vec<f64>, Vec<f64>)]) -> Vec<BucketStat> {
    DISTANCE_BUCKETS
        .iter()
        .map(|&(lo, hi)| {
            let ds: Vec<f64> = pairs
                .iter()
                .filter(|(d, _, _)| *d <= hi && (*d > lo || (lo == 0.0 && *d >= 0.0)))
                .map(|(_, a, b)| sequence_distance(a, b))
                .collect();
            let n = ds.len();
            let (mean, std_dev) = if n == 0 {
                (None, None)
            } else {
                let m = ds.iter().sum::<f64>() / n as f64;
                let v = ds.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
                (Some(m), Some(v.sqrt()))
            };
            BucketStat { bucket: bucket_label(lo, hi), count: n, mean, std_dev }
        })
        .collect()
}

pub fn bucket_csv(stats: &[BucketStat]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("bucket_m,count,mean,std_dev\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{},{}", s.bucket, s.count, fmt(s.mean), fmt(s.std_dev));
    }
    out
}

/// Magnetic magnitude sequences of both devices for every generated pair,
/// with the pair's true distance.
pub fn magnetic_pairs(data: &GeneratedData) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let by_device = index_traces(&data.traces);
    let seq = |d: &DeviceKey| -> Vec<f64> {
        by_device
            .get(d)
            .map(|s| {
                s.iter()
                    .filter(|s| s.kind == SensorKind::Magnetometer)
                    .filter_map(|s| s.value.vector())
                    .map(|[x, y, z]| magnitude(x, y, z))
                    .collect()
            })
            .unwrap_or_default()
    };
    data.manifest
        .instances
        .iter()
        .map(|i| (i.true_distance_m, seq(&i.pair.0), seq(&i.pair.1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub tier: Tier,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
}

pub fn metrics_csv(rows: &[TierMetrics]) -> String {
    let mut out = String::from("tier,tp,fp,tn,fn,accuracy\n");
    for r in rows {
        let c = &r.counts;
        let tier = serde_json::to_value(r.tier)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let _ = writeln!(out, "{tier},{},{},{},{},{}", c.tp, c.fp, c.tn, c.fn_, r.accuracy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    fn pct(x: f64) -> String {
        format!("{:.2}", x * 100.0)
    }

    #[test]
    fn reference_tier_accuracies() {
        assert_eq!(pct(accuracy(&counts(60, 180, 0, 0)).unwrap()), "25.00");
        assert_eq!(pct(accuracy(&counts(38, 61, 119, 22)).unwrap()), "65.42");
        assert_eq!(pct(accuracy(&counts(38, 9, 171, 22)).unwrap()), "87.08");
        assert_eq!(counts(38, 9, 171, 22).total(), 240);
        assert_eq!(accuracy_ratio(&counts(38, 9, 171, 22)).unwrap(), (209, 240));
        assert_eq!(accuracy_ratio(&counts(60, 180, 0, 0)).unwrap(), (1, 4));
    }

    #[test]
    fn empty_counts_error() {
        assert_eq!(accuracy(&ConfusionCounts::default()), Err(EvaluationError::Empty));
    }

    fn label(i: usize, contact: bool) -> GroundTruthLabel {
        GroundTruthLabel {
            pair: Pair::new(format!("a{i}").as_str(), format!("b{i}").as_str()),
            window: Interval::new(0.0, 300.0),
            true_distance_m: if contact { 0.5 } else { 5.0 },
            is_contact: contact,
        }
    }

    fn decision(l: &GroundTruthLabel, contact: bool) -> ContactDecision {
        ContactDecision {
            pair: l.pair.clone(),
            window: l.window,
            appearance: Some(contact),
            mean_distance_m: None,
            env_score: None,
            env_sensor: None,
            env_passed: None,
            contact,
            degraded_reason: None,
            tier: Tier::AppearanceOnly,
        }
    }

    #[test]
    fn all_correct_positives() {
        let truth: Vec<_> = (0..5).map(|i| label(i, true)).collect();
        let dec: Vec<_> = truth.iter().map(|l| decision(l, true)).collect();
        let c = confusion(&dec, &truth).unwrap();
        assert_eq!(c, counts(5, 0, 0, 0));
    }

    #[test]
    fn key_mismatches_rejected() {
        let truth: Vec<_> = (0..3).map(|i| label(i, true)).collect();
        let mut dec: Vec<_> = truth.iter().map(|l| decision(l, true)).collect();
        assert!(confusion(&dec[..2], &truth).is_err());
        dec[2].window = Interval::new(300.0, 600.0);
        assert!(matches!(confusion(&dec, &truth), Err(EvaluationError::KeyMismatch(_))));
        let dup = vec![dec[0].clone(), dec[0].clone(), dec[1].clone()];
        assert!(confusion(&dup, &truth).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(
            distance_error_cdf(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            vec![CdfPoint { error: 0.0, fraction: 1.0 }]
        );
        let cdf = distance_error_cdf(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(cdf[1], CdfPoint { error: 2.0, fraction: 2.0 / 3.0 });
        assert!(matches!(distance_error_cdf(&[1.0], &[]), Err(EvaluationError::LengthMismatch(1, 0))));
        assert!(cdf_csv(&cdf).starts_with("abs_error_m,fraction\n1,"));
    }

    #[test]
    fn magnetic_report_closed_forms() {
        let same = vec![50.0; 8];
        let shifted = vec![53.0; 8];
        let report = magnetic_separation_report(&[
            (0.5, same.clone(), same.clone()),
            (1.5, same.clone(), shifted.clone()),
            (1.7, same.clone(), shifted[..4].to_vec()),
        ]);
        assert_eq!(report[0].mean, Some(0.0));
        let expect = (3.0 * 8f64.sqrt() + 3.0 * 4f64.sqrt()) / 2.0;
        assert!((report[1].mean.unwrap() - expect).abs() < 1e-12);
        assert_eq!(report[1].count, 2);
        assert_eq!(report[2].mean, None);
        assert_eq!(report[3].count, 0);
        assert!(bucket_csv(&report).contains("2-3,0,,\n"));
    }

    proptest! {
        #[test]
        fn accuracy_matches_rational(tp in 0u64..5000, fp in 0u64..5000, tn in 0u64..5000, fn_ in 0u64..5000) {
            let c = counts(tp, fp, tn, fn_);
            prop_assume!(c.total() > 0);
            let (n, d) = accuracy_ratio(&c).unwrap();
            // cross-multiplication is exact in integers
            prop_assert_eq!(n as u128 * c.total() as u128, d as u128 * (tp + tn) as u128);
            prop_assert_eq!(gcd(n, d), if n == 0 { d } else { 1 });
            prop_assert_eq!(accuracy(&c).unwrap(), (tp + tn) as f64 / c.total() as f64);
        }

        #[test]
        fn confusion_matches_recount(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let truth: Vec<_> = bits.iter().enumerate().map(|(i, (_, t))| label(i, *t)).collect();
            let dec: Vec<_> = truth.iter().zip(&bits).map(|(l, (p, _))| decision(l, *p)).collect();
            let c = confusion(&dec, &truth).unwrap();
            let naive = |p: bool, t: bool| bits.iter().filter(|b| **b == (p, t)).count() as u64;
            prop_assert_eq!(c, counts(naive(true, true), naive(true, false), naive(false, false), naive(false, true)));
            prop_assert_eq!(c.total(), bits.len() as u64);
        }

        #[test]
        fn cdf_monotone_to_one(pairs in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0), 1..80)) {
            let (est, tru): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let cdf = distance_error_cdf(&est, &tru).unwrap();
            prop_assert!(cdf.windows(2).all(|w| w[0].error < w[1].error && w[0].fraction < w[1].fraction));
            prop_assert_eq!(cdf.last().unwrap().fraction, 1.0);
            // sort-and-count oracle
            for p in &cdf {
                let below = est.iter().zip(&tru).filter(|(e, t)| (*e - *t).abs() <= p.error).count();
                prop_assert!((p.fraction - below as f64 / est.len() as f64).abs() < 1e-12);
            }
        }
    }
}
