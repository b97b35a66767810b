//! `iad` command-line tool: generate datasets, run detection, score results
//! and time the detector.
//!
//! Option precedence: explicit flag, then `IAD_*` environment variable, then
//! the `--config` file, then the built-in default.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use iad_core::bench::{bench_scaling, DEFAULT_REPETITIONS};
use iad_core::datagen::{generate_synthetic, SyntheticSpec};
use iad_core::engine::{detect_many, DEFAULT_MAX_GAP, DEFAULT_MIN_EVENTS};
use iad_core::eval::{f1_score, overlap_score, EvalReport};
use iad_core::io::{
    read_json, read_labels_csv, read_traces_csv, write_json, write_labels_csv, write_traces_csv,
};
use iad_core::report::{DetectionReport, RunEcho};
use iad_core::{DetectorConfig, DetectorKind, GroundTruth, TickInterval, VmmGroup};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "iad",
    version,
    about = "Detect anomalous hypervisors from hosted VM utilization"
)]
struct Cli {
    /// key=value configuration file; explicit flags and IAD_* variables win.
    #[arg(long, global = true, env = "IAD_CONFIG")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Generate {
        /// Output traces CSV (`.gz` compresses).
        #[arg(long)]
        traces: PathBuf,
        /// Output labels CSV.
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Run detection over a traces CSV and write the results JSON.
    Detect {
        #[arg(long)]
        traces: PathBuf,
        /// Results JSON; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a results JSON against a labels CSV.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Evaluation JSON; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Lead (ticks) for the event-overlap score; defaults to the window.
        #[arg(long, env = "IAD_LEAD")]
        lead: Option<usize>,
    },
    /// Time detection over a grid of VM counts and series lengths.
    Bench {
        /// Comma-separated VM counts.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        vms: Vec<usize>,
        /// Comma-separated tick counts.
        #[arg(long, value_delimiter = ',', default_value = "1000")]
        ticks: Vec<usize>,
        #[arg(long, env = "IAD_REPETITIONS")]
        repetitions: Option<usize>,
        /// Bench report JSON.
        #[arg(long)]
        output_json: Option<PathBuf>,
        /// `num_vms,num_ticks,seconds` CSV; stdout when neither output is given.
        #[arg(long)]
        output_csv: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Generate, detect and evaluate in one run; prints the F1 last.
    Pipeline {
        /// Directory for traces.csv, labels.csv, results.json, evaluation.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug, Default)]
struct DetectorArgs {
    /// Window length in ticks.
    #[arg(long = "w", env = "IAD_W")]
    window: Option<usize>,
    #[arg(long, env = "IAD_MEAN_THRESHOLD_PERCENT")]
    mean_threshold_percent: Option<f64>,
    #[arg(long, env = "IAD_Z_MULTIPLIER")]
    z_multiplier: Option<f64>,
    #[arg(long, env = "IAD_MIN_PERCENT_VMS_FAULT")]
    min_percent_vms_fault: Option<f64>,
    /// History ticks required before the first verdict (default: w).
    #[arg(long, env = "IAD_WARMUP_TICKS")]
    warmup_ticks: Option<usize>,
    #[arg(long, env = "IAD_EPSILON")]
    epsilon: Option<f64>,
    /// `zscore` or `mean`.
    #[arg(long, env = "IAD_DETECTOR")]
    detector: Option<DetectorKind>,
    /// Quiet ticks tolerated inside one event.
    #[arg(long, env = "IAD_MAX_GAP")]
    max_gap: Option<usize>,
    /// Events needed to classify a VMM as anomalous.
    #[arg(long, env = "IAD_MIN_EVENTS")]
    min_events: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Worker threads over VMMs.
    #[arg(long, env = "IAD_PARALLELISM")]
    parallelism: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct SpecArgs {
    #[arg(long, env = "IAD_NUM_VMMS")]
    num_vmms: Option<usize>,
    #[arg(long, env = "IAD_VMS_PER_VMM")]
    vms_per_vmm: Option<usize>,
    #[arg(long, env = "IAD_PERCENT_VMS_WITH_FAULT")]
    percent_vms_with_fault: Option<f64>,
    #[arg(long, env = "IAD_PERCENT_ANOMALOUS_VMMS")]
    percent_anomalous_vmms: Option<f64>,
    /// Ticks per VM (synthetic data).
    #[arg(long = "num-ticks", env = "IAD_NUM_TICKS")]
    num_ticks: Option<usize>,
    #[arg(long, env = "IAD_BASELINE_MEAN_LO")]
    baseline_mean_lo: Option<f64>,
    #[arg(long, env = "IAD_BASELINE_MEAN_HI")]
    baseline_mean_hi: Option<f64>,
    #[arg(long, env = "IAD_BASELINE_STD")]
    baseline_std: Option<f64>,
    #[arg(long, env = "IAD_FAULT_SHIFT", allow_negative_numbers = true)]
    fault_shift: Option<f64>,
    /// Apply `fault_shift` with its own sign instead of a random one.
    #[arg(long, env = "IAD_FIXED_FAULT_SIGN")]
    fixed_fault_sign: Option<bool>,
    #[arg(long, env = "IAD_FAULT_START")]
    fault_start: Option<usize>,
    #[arg(long, env = "IAD_FAULT_END")]
    fault_end: Option<usize>,
    #[arg(long, env = "IAD_SEED")]
    seed: Option<u64>,
}

const CONFIG_KEYS: &[&str] = &[
    "w",
    "mean_threshold_percent",
    "z_multiplier",
    "min_percent_vms_fault",
    "warmup_ticks",
    "epsilon",
    "detector",
    "max_gap",
    "min_events",
    "parallelism",
    "num_vmms",
    "vms_per_vmm",
    "percent_vms_with_fault",
    "percent_anomalous_vmms",
    "num_ticks",
    "baseline_mean_lo",
    "baseline_mean_hi",
    "baseline_std",
    "fault_shift",
    "fixed_fault_sign",
    "fault_start",
    "fault_end",
    "seed",
    "repetitions",
    "lead",
];

/// `key = value` lines; `#` starts a comment, values may be quoted and keys
/// may use `-` or `_`.
#[derive(Debug, Default)]
struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Io)?;
        Self::parse(&text).map_err(Failure::Usage)
    }

    fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
            let key = k.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(anyhow!("config line {}: unknown key `{}`", i + 1, k.trim()));
            }
            let value = v.trim().trim_matches('"').trim_matches('\'').to_string();
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::Usage(anyhow!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Io(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<iad_core::Error> for Failure {
    fn from(e: iad_core::Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.into())
        } else {
            Failure::Io(e.into())
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Io(e) | Failure::Internal(e) => e,
        }
    }
}

struct Detection {
    cfg: DetectorConfig,
    max_gap: usize,
    min_events: usize,
}

fn resolve_detector(args: &DetectorArgs, file: &ConfigFile) -> Result<Detection, Failure> {
    let d = DetectorConfig::default();
    let cfg = DetectorConfig {
        window: file.pick(args.window, "w")?.unwrap_or(d.window),
        mean_threshold_percent: file
            .pick(args.mean_threshold_percent, "mean_threshold_percent")?
            .unwrap_or(d.mean_threshold_percent),
        z_multiplier: file
            .pick(args.z_multiplier, "z_multiplier")?
            .unwrap_or(d.z_multiplier),
        min_percent_vms_fault: file
            .pick(args.min_percent_vms_fault, "min_percent_vms_fault")?
            .unwrap_or(d.min_percent_vms_fault),
        warmup_ticks: file.pick(args.warmup_ticks, "warmup_ticks")?,
        epsilon: file.pick(args.epsilon, "epsilon")?.unwrap_or(d.epsilon),
        detector_kind: file
            .pick(args.detector, "detector")?
            .unwrap_or(d.detector_kind),
    };
    cfg.validate()?;
    Ok(Detection {
        cfg,
        max_gap: file
            .pick(args.max_gap, "max_gap")?
            .unwrap_or(DEFAULT_MAX_GAP),
        min_events: file
            .pick(args.min_events, "min_events")?
            .unwrap_or(DEFAULT_MIN_EVENTS),
    })
}

fn resolve_parallelism(args: &RunArgs, file: &ConfigFile) -> Result<usize, Failure> {
    let p = file.pick(args.parallelism, "parallelism")?.unwrap_or(1);
    if p == 0 {
        return Err(Failure::Usage(anyhow!("--parallelism must be at least 1")));
    }
    Ok(p)
}

fn resolve_spec(args: &SpecArgs, file: &ConfigFile) -> Result<SyntheticSpec, Failure> {
    let d = SyntheticSpec::default();
    let ticks = file.pick(args.num_ticks, "num_ticks")?.unwrap_or(d.ticks);
    let start = file.pick(args.fault_start, "fault_start")?;
    let end = file.pick(args.fault_end, "fault_end")?;
    let fault_interval = match (start, end) {
        (None, None) => None,
        (Some(s), Some(e)) => Some(TickInterval::new(s, e)),
        _ => {
            return Err(Failure::Usage(anyhow!(
                "--fault-start and --fault-end must be given together"
            )))
        }
    };
    let fixed_sign: bool = file
        .pick(args.fixed_fault_sign, "fixed_fault_sign")?
        .unwrap_or(false);
    let spec = SyntheticSpec {
        num_vmms: file.pick(args.num_vmms, "num_vmms")?.unwrap_or(d.num_vmms),
        vms_per_vmm: file
            .pick(args.vms_per_vmm, "vms_per_vmm")?
            .unwrap_or(d.vms_per_vmm),
        percent_vms_with_fault: file
            .pick(args.percent_vms_with_fault, "percent_vms_with_fault")?
            .unwrap_or(d.percent_vms_with_fault),
        percent_anomalous_vmms: file
            .pick(args.percent_anomalous_vmms, "percent_anomalous_vmms")?
            .unwrap_or(d.percent_anomalous_vmms),
        ticks,
        baseline_mean_range: (
            file.pick(args.baseline_mean_lo, "baseline_mean_lo")?
                .unwrap_or(d.baseline_mean_range.0),
            file.pick(args.baseline_mean_hi, "baseline_mean_hi")?
                .unwrap_or(d.baseline_mean_range.1),
        ),
        baseline_std: file
            .pick(args.baseline_std, "baseline_std")?
            .unwrap_or(d.baseline_std),
        fault_shift: file
            .pick(args.fault_shift, "fault_shift")?
            .unwrap_or(d.fault_shift),
        random_fault_sign: !fixed_sign,
        fault_interval,
        seed: file.pick(args.seed, "seed")?.unwrap_or(d.seed),
    };
    spec.validate()?;
    Ok(spec)
}

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => write_json(path, value).map_err(Failure::from),
        None => {
            let text =
                serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.into()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run_detection(
    groups: &[VmmGroup],
    det: &Detection,
    parallelism: usize,
    seed: Option<u64>,
    input: Option<&Path>,
) -> Result<DetectionReport, Failure> {
    let start = Instant::now();
    let detections = detect_many(groups, &det.cfg, det.max_gap, parallelism)?;
    let elapsed = start.elapsed().as_secs_f64();
    let echo = RunEcho {
        detector: det.cfg.clone(),
        warmup_ticks: det.cfg.warmup(),
        max_gap: det.max_gap,
        min_events: det.min_events,
        parallelism,
        seed,
        input: input.map(|p| p.display().to_string()),
    };
    Ok(DetectionReport::new(echo, &detections, elapsed))
}

#[derive(Serialize)]
struct EvaluationOutput<'a> {
    config: &'a RunEcho,
    labels: Option<String>,
    report: EvalReport,
}

fn evaluate(
    results: &DetectionReport,
    labels: &[GroundTruth],
    lead: Option<usize>,
) -> Result<EvalReport, Failure> {
    let mut report = f1_score(&results.predictions(), labels)?;
    let lead = lead.unwrap_or(results.config.detector.window);
    report.overlap = Some(overlap_score(&results.events_by_vmm(), labels, lead));
    Ok(report)
}

fn summary(groups: &[VmmGroup], labels: &[GroundTruth], seed: u64) -> String {
    let anomalous = labels.iter().filter(|l| l.anomalous).count();
    let vms = groups.first().map_or(0, VmmGroup::num_vms);
    let ticks = groups.first().map_or(0, VmmGroup::num_ticks);
    format!(
        "generated {} VMMs ({anomalous} anomalous), {vms} VMs each, {ticks} ticks, seed {seed}",
        groups.len()
    )
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate {
            traces,
            labels,
            spec,
        } => {
            let spec = resolve_spec(&spec, &file)?;
            let (groups, truth) = generate_synthetic(&spec)?;
            write_traces_csv(&groups, &traces)?;
            write_labels_csv(&truth, &labels)?;
            println!("{}", summary(&groups, &truth, spec.seed));
        }
        Command::Detect {
            traces,
            output,
            detector,
            run,
        } => {
            let det = resolve_detector(&detector, &file)?;
            let parallelism = resolve_parallelism(&run, &file)?;
            let groups = read_traces_csv(&traces)?;
            let report = run_detection(&groups, &det, parallelism, None, Some(&traces))?;
            let flagged = report.vmms.iter().filter(|v| v.anomalous).count();
            emit_json(&report, output.as_deref())?;
            eprintln!(
                "{} VMMs analysed, {flagged} flagged anomalous",
                report.vmms.len()
            );
        }
        Command::Evaluate {
            results,
            labels,
            output,
            lead,
        } => {
            let lead = file.pick(lead, "lead")?;
            let detection: DetectionReport = read_json(&results)?;
            let truth = read_labels_csv(&labels)?;
            let report = evaluate(&detection, &truth, lead)?;
            let f1 = report.f1;
            let out = EvaluationOutput {
                config: &detection.config,
                labels: Some(labels.display().to_string()),
                report,
            };
            emit_json(&out, output.as_deref())?;
            eprintln!("f1 {f1:.6}");
        }
        Command::Bench {
            vms,
            ticks,
            repetitions,
            output_json,
            output_csv,
            spec,
            detector,
        } => {
            let spec = resolve_spec(&spec, &file)?;
            let det = resolve_detector(&detector, &file)?;
            let reps = file
                .pick(repetitions, "repetitions")?
                .unwrap_or(DEFAULT_REPETITIONS);
            let report = bench_scaling(&vms, &ticks, &spec, &det.cfg, reps)?;
            if let Some(p) = &output_json {
                write_json(p, &report)?;
            }
            if let Some(p) = &output_csv {
                report.write_csv(p)?;
            }
            if output_json.is_none() && output_csv.is_none() {
                print!("{}", report.to_csv());
            }
        }
        Command::Pipeline {
            out_dir,
            spec,
            detector,
            run,
        } => {
            let spec = resolve_spec(&spec, &file)?;
            let det = resolve_detector(&detector, &file)?;
            let parallelism = resolve_parallelism(&run, &file)?;
            let (groups, truth) = generate_synthetic(&spec)?;
            let results = run_detection(&groups, &det, parallelism, Some(spec.seed), None)?;
            let report = evaluate(&results, &truth, None)?;
            println!("{}", summary(&groups, &truth, spec.seed));
            println!(
                "tp {} fp {} fn {} tn {} precision {:.6} recall {:.6}",
                report.true_positives,
                report.false_positives,
                report.false_negatives,
                report.true_negatives,
                report.precision,
                report.recall
            );
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)
                    .with_context(|| format!("creating {}", dir.display()))
                    .map_err(Failure::Io)?;
                write_traces_csv(&groups, &dir.join("traces.csv"))?;
                write_labels_csv(&truth, &dir.join("labels.csv"))?;
                write_json(&dir.join("results.json"), &results)?;
                let out = EvaluationOutput {
                    config: &results.config,
                    labels: None,
                    report: report.clone(),
                };
                write_json(&dir.join("evaluation.json"), &out)?;
            }
            println!("{:.6}", report.f1);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
