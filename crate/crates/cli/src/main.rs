use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use proxtrace::eval::{
    accuracy, bucket_csv, cdf_csv, confusion, detect, distance_error_cdf, magnetic_pairs,
    magnetic_separation_report, metrics_csv, ConfusionCounts, TierMetrics,
};
use proxtrace::io::{read_jsonl, write_atomic, write_jsonl};
use proxtrace::simulator::{generate_traces, GeneratedData, Scenario};
use proxtrace::{ContactDecision, GroundTruthLabel, Interval, Pair, Tier};

const RUN_FILE: &str = "run.json";
const SCENARIO_FILE: &str = "scenario.toml";
const STANDARD_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "proxtrace", version, about = "Smartphone proximity detection: simulate, detect, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write traces, ground truth and a manifest.
    Generate {
        /// Scenario file (TOML).
        #[arg(long, conflicts_with = "standard", required_unless_present = "standard")]
        config: Option<PathBuf>,
        /// Use the built-in 240-instance scenario.
        #[arg(long)]
        standard: bool,
        /// Overrides the scenario seed (the standard scenario defaults to 42).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fusion pipeline over every labelled window of a generated run.
    Detect {
        /// Directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = TierArg::Full)]
        tier: TierArg,
        /// Decisions file; defaults to `<data>/decisions-<tier>.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score decision files against ground truth.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "decisions", required = true)]
        decisions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready CSVs: distance-error CDF and magnetic separation per bucket.
    Report {
        #[arg(long)]
        data: PathBuf,
        /// Decisions with distance estimates, usually from `--tier full`.
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Appearance,
    Distance,
    Full,
}

impl TierArg {
    fn tier(self) -> Tier {
        match self {
            TierArg::Appearance => Tier::AppearanceOnly,
            TierArg::Distance => Tier::AppearanceDistance,
            TierArg::Full => Tier::Full,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TierArg::Appearance => "appearance",
            TierArg::Distance => "distance",
            TierArg::Full => "full",
        }
    }
}

/// Provenance written next to every run and copied into reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunInfo {
    seed: u64,
    config_sha256: String,
}

#[derive(Serialize)]
struct ConfusionReport<'a> {
    seed: u64,
    config_sha256: &'a str,
    tiers: Vec<TierMetrics>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn generate(config: Option<&Path>, standard: bool, seed: Option<u64>, out: &Path) -> Result<()> {
    let scenario = match (config, standard) {
        (Some(path), _) => {
            let s = Scenario::load(path)?;
            match seed {
                Some(seed) => s.with_seed(seed),
                None => s,
            }
        }
        (None, true) => Scenario::standard(seed.unwrap_or(STANDARD_SEED)),
        (None, false) => bail!("either --config or --standard is required"),
    };
    let toml = scenario.to_toml()?;
    let data = generate_traces(&scenario)?;
    data.write(out)?;
    write_atomic(&out.join(SCENARIO_FILE), toml.as_bytes())?;
    let info = RunInfo { seed: scenario.seed(), config_sha256: sha256_hex(toml.as_bytes()) };
    write_json(&out.join(RUN_FILE), &info)?;
    eprintln!(
        "generated {} instances, {} windows into {}",
        data.manifest.instances.len(),
        data.truth.len(),
        out.display()
    );
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn run_info(data: &Path) -> Result<RunInfo> {
    let path = data.join(RUN_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn detect_cmd(data: &Path, tier: TierArg, out: Option<PathBuf>) -> Result<()> {
    let run = GeneratedData::read(data)?;
    let keys: Vec<(Pair, Interval)> = run.truth.iter().map(|l| (l.pair.clone(), l.window)).collect();
    let decisions = detect(&run.traces, &keys, tier.tier(), &run.manifest.fusion)?;
    let out = out.unwrap_or_else(|| data.join(format!("decisions-{}.jsonl", tier.name())));
    write_jsonl(&out, &decisions)?;
    let contacts = decisions.iter().filter(|d| d.contact).count();
    eprintln!("{} windows, {contacts} contacts -> {}", decisions.len(), out.display());
    Ok(())
}

fn evaluate(data: &Path, files: &[PathBuf], out: &Path) -> Result<()> {
    let info = run_info(data)?;
    let truth: Vec<GroundTruthLabel> = read_jsonl(&data.join(proxtrace::simulator::generate::TRUTH_FILE))?;
    let mut rows = Vec::new();
    for file in files {
        let decisions: Vec<ContactDecision> = read_jsonl(file)?;
        let Some(tier) = decisions.first().map(|d| d.tier) else {
            bail!("{} holds no decisions", file.display());
        };
        if decisions.iter().any(|d| d.tier != tier) {
            bail!("{} mixes tiers", file.display());
        }
        let counts: ConfusionCounts = confusion(&decisions, &truth)?;
        rows.push(TierMetrics { tier, counts, accuracy: accuracy(&counts)? });
    }
    rows.sort_by_key(|r| r.tier);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    let report = ConfusionReport { seed: info.seed, config_sha256: &info.config_sha256, tiers: rows };
    write_json(&out.join("confusion.json"), &report)?;
    for r in &report.tiers {
        let c = &r.counts;
        eprintln!("{:?}: tp={} fp={} tn={} fn={} accuracy={:.4}", r.tier, c.tp, c.fp, c.tn, c.fn_, r.accuracy);
    }
    Ok(())
}

fn report(data: &Path, decisions: &Path, out: &Path) -> Result<()> {
    let info = run_info(data)?;
    let run = GeneratedData::read(data)?;
    let decisions: Vec<ContactDecision> = read_jsonl(decisions)?;
    let truth: std::collections::HashMap<(&Pair, u64), f64> = run
        .truth
        .iter()
        .map(|l| ((&l.pair, l.window.start.to_bits()), l.true_distance_m))
        .collect();
    let (est, actual): (Vec<f64>, Vec<f64>) = decisions
        .iter()
        .filter_map(|d| {
            let t = truth.get(&(&d.pair, d.window.start.to_bits()))?;
            Some((d.mean_distance_m?, *t))
        })
        .unzip();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let header = format!("# seed={} config_sha256={}\n", info.seed, info.config_sha256);
    let cdf = distance_error_cdf(&est, &actual)?;
    write_atomic(&out.join("distance_cdf.csv"), (header.clone() + &cdf_csv(&cdf)).as_bytes())?;
    let buckets = magnetic_separation_report(&magnetic_pairs(&run));
    write_atomic(&out.join("magnetic_buckets.csv"), (header + &bucket_csv(&buckets)).as_bytes())?;
    eprintln!("{} distance estimates, {} buckets -> {}", est.len(), buckets.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, standard, seed, out } => generate(config.as_deref(), standard, seed, &out),
        Command::Detect { data, tier, out } => detect_cmd(&data, tier, out),
        Command::Evaluate { data, decisions, out } => evaluate(&data, &decisions, &out),
        Command::Report { data, decisions, out } => report(&data, &decisions, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            let body = serde_json::json!({ "error": chain.first(), "causes": &chain[1..] });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
