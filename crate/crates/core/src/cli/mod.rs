//! Command-line front end: `simulate`, `run` and `eval`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 engine
//! degeneracy beyond the configured tolerance.

pub mod io;
pub mod metrics;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::ConfigFile;
use crate::error::Error;
use crate::essm::EssmStep;
use crate::hmm::HmmStep;
use crate::rng::SeedTree;
use crate::scenario::{Scenario, TargetState, TruthLabel, LABELS};

use self::metrics::{EngineMetrics, DEFAULT_MARGIN};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mixsaw", version, about = "Mixture-model situation awareness: simulate, filter, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Hmm,
    Essm,
    Both,
}

impl Engine {
    fn hmm(self) -> bool {
        matches!(self, Engine::Hmm | Engine::Both)
    }
    fn essm(self) -> bool {
        matches!(self, Engine::Essm | Engine::Both)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate truth, measurements and labels for a scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable process and sensor noise.
        #[arg(long)]
        no_noise: bool,
    },
    /// Run the inference engine(s) over a measurement stream.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        engine: Engine,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Output directory; defaults to `<data>/run`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a run directory against ground-truth labels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Truth trajectory for position RMSE; defaults to truth.csv next to the labels.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: usize,
    },
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))
}

fn load(config: &Path) -> CliResult<(ConfigFile, Scenario)> {
    let cfg = ConfigFile::load(config)?;
    let sc = cfg.scenario()?;
    Ok((cfg, sc))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub truth_seed: u64,
    pub sensor_seed: u64,
    pub steps: usize,
    pub noise: bool,
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, no_noise: bool) -> CliResult<SimulateReport> {
    let (cfg, sc) = load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let seeds = SeedTree::new(seed);
    let sim = sc.simulate(&seeds, !no_noise)?;
    ensure_dir(out)?;
    io::write_truth(&out.join(io::TRUTH_FILE), &sim.truth)?;
    io::write_measurements(&out.join(io::MEASUREMENTS_FILE), &sim.observations)?;
    io::write_labels(&out.join(io::LABELS_FILE), &sim.labels)?;
    Ok(SimulateReport {
        seed,
        truth_seed: seeds.child("truth").seed(),
        sensor_seed: seeds.child("sensor").seed(),
        steps: sim.truth.len(),
        noise: !no_noise,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineSummary {
    pub seed: u64,
    pub flagged_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EngineMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub seed: u64,
    /// Relative to the run output directory.
    pub dir: String,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmm: Option<EngineSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub essm: Option<EngineSummary>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricAggregate {
    pub accuracy: MeanStd,
    /// Smallest per-pass max `p(danger)` of each replicate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_pass_max_p_danger: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_rmse: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub engine: Engine,
    pub master_seed: u64,
    /// How per-replicate and per-engine seeds are derived.
    pub seed_derivation: &'static str,
    pub mc_samples: usize,
    pub particles: usize,
    pub ess_threshold: f64,
    pub replicates: Vec<ReplicateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmm_aggregate: Option<MetricAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub essm_aggregate: Option<MetricAggregate>,
}

const SEED_DERIVATION: &str = "replicate r: SeedTree(master).child(\"replicate\").index(r); \
engines: .child(\"hmm\") / .child(\"essm\"); HMM draws: .stream_at(k, label); \
ESSM: .child(\"init\"), .child(\"propagate\").stream_at(k, chunk), .child(\"resample\").stream_at(k, 0)";

fn aggregate(ms: &[&EngineMetrics]) -> Option<MetricAggregate> {
    let acc: Vec<f64> = ms.iter().map(|m| m.accuracy).collect();
    let min_pass: Vec<f64> = ms
        .iter()
        .filter(|m| !m.passes.is_empty())
        .map(|m| m.passes.iter().map(|p| p.max_p_danger).fold(f64::INFINITY, f64::min))
        .collect();
    let rmse: Vec<f64> = ms.iter().filter_map(|m| m.position_rmse).collect();
    Some(MetricAggregate {
        accuracy: MeanStd::of(&acc)?,
        min_pass_max_p_danger: MeanStd::of(&min_pass),
        position_rmse: MeanStd::of(&rmse),
    })
}

struct Replicate {
    hmm: Option<Vec<HmmStep>>,
    essm: Option<Vec<EssmStep>>,
}

fn write_replicate(dir: &Path, rep: &Replicate) -> CliResult<()> {
    ensure_dir(dir)?;
    if let Some(steps) = &rep.hmm {
        io::write_posteriors(&dir.join(io::HMM_POSTERIOR_FILE), &LABELS, &pipeline::hmm_rows(steps))?;
        io::write_lines(
            &dir.join(io::HMM_DIAGNOSTICS_FILE),
            "k,flags",
            steps.iter().map(|s| format!("{},{}", s.k, pipeline::hmm_flags(s))),
        )?;
    }
    if let Some(steps) = &rep.essm {
        io::write_posteriors(&dir.join(io::ESSM_POSTERIOR_FILE), &LABELS, &pipeline::essm_rows(steps))?;
        io::write_states(&dir.join(io::ESSM_ESTIMATE_FILE), &pipeline::essm_estimates(steps))?;
        io::write_lines(
            &dir.join(io::ESSM_DIAGNOSTICS_FILE),
            "k,ess,resampled,flags",
            steps.iter().map(|s| {
                format!("{},{},{},{}", s.k, io::fmt_f64(s.ess), u8::from(s.resampled), pipeline::essm_flags(s))
            }),
        )?;
    }
    Ok(())
}

pub struct RunArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub engine: Engine,
    pub replicates: usize,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
}

/// Runs the engine(s); returns the summary, or a degeneracy error after
/// all outputs have been written.
pub fn cmd_run(args: &RunArgs<'_>) -> CliResult<RunSummary> {
    let (cfg, sc) = load(args.config)?;
    if args.replicates == 0 {
        return Err(CliError::Config("--replicates must be >= 1".into()));
    }
    let obs = io::read_measurements(&args.data.join(io::MEASUREMENTS_FILE))?;
    if obs.is_empty() {
        return Err(CliError::Data("measurement file has no rows".into()));
    }
    let labels_path = args.data.join(io::LABELS_FILE);
    let labels: Option<Vec<TruthLabel>> = labels_path.exists().then(|| io::read_labels(&labels_path)).transpose()?;
    let truth_path = args.data.join(io::TRUTH_FILE);
    let truth: Option<Vec<TargetState>> = truth_path.exists().then(|| io::read_truth(&truth_path)).transpose()?;
    let out = args.out.map(Path::to_path_buf).unwrap_or_else(|| args.data.join("run"));
    let master = args.seed.unwrap_or(cfg.seed);
    let root = SeedTree::new(master).child("replicate");
    let params = &cfg.engine;

    let reps: Vec<(usize, Replicate)> = (0..args.replicates)
        .into_par_iter()
        .map(|r| -> CliResult<(usize, Replicate)> {
            let seeds = root.index(r as u64);
            let hmm = args.engine.hmm().then(|| pipeline::run_hmm(&sc, params, &obs, seeds.child("hmm"))).transpose()?;
            let essm =
                args.engine.essm().then(|| pipeline::run_essm(&sc, params, &obs, seeds.child("essm"))).transpose()?;
            Ok((r, Replicate { hmm, essm }))
        })
        .collect::<CliResult<_>>()?;

    ensure_dir(&out)?;
    let mut summaries = Vec::with_capacity(reps.len());
    let mut degenerate = Vec::new();
    let tolerance = params.max_degenerate_fraction;
    for (r, rep) in &reps {
        let rel = if args.replicates == 1 { ".".to_string() } else { format!("rep_{r:03}") };
        let dir = out.join(&rel);
        write_replicate(&dir, rep)?;
        let seeds = root.index(*r as u64);
        let metrics_for = |rows: Vec<Vec<f64>>, est: Option<Vec<[f64; 4]>>| -> CliResult<Option<EngineMetrics>> {
            let Some(labels) = &labels else { return Ok(None) };
            let pair = match (&est, &truth) {
                (Some(e), Some(t)) => Some((e.as_slice(), t.as_slice())),
                _ => None,
            };
            Ok(Some(metrics::evaluate(&rows, labels, pair, DEFAULT_MARGIN)?))
        };
        let hmm = match &rep.hmm {
            Some(steps) => {
                let flagged = steps.iter().filter(|s| s.zero_evidence).count();
                if flagged as f64 > tolerance * steps.len() as f64 {
                    degenerate.push(format!("replicate {r}: HMM flagged {flagged}/{} steps", steps.len()));
                }
                Some(EngineSummary {
                    seed: seeds.child("hmm").seed(),
                    flagged_steps: flagged,
                    resample_count: None,
                    metrics: metrics_for(pipeline::hmm_rows(steps), None)?,
                })
            }
            None => None,
        };
        let essm = match &rep.essm {
            Some(steps) => {
                let flagged = steps.iter().filter(|s| s.flagged()).count();
                if flagged as f64 > tolerance * steps.len() as f64 {
                    degenerate.push(format!("replicate {r}: ESSM flagged {flagged}/{} steps", steps.len()));
                }
                Some(EngineSummary {
                    seed: seeds.child("essm").seed(),
                    flagged_steps: flagged,
                    resample_count: Some(steps.iter().filter(|s| s.resampled).count()),
                    metrics: metrics_for(pipeline::essm_rows(steps), Some(pipeline::essm_estimates(steps)))?,
                })
            }
            None => None,
        };
        summaries.push(ReplicateSummary {
            index: *r,
            seed: seeds.seed(),
            dir: rel,
            steps: obs.len(),
            hmm,
            essm,
        });
    }
    let collect = |pick: fn(&ReplicateSummary) -> Option<&EngineSummary>| {
        let ms: Vec<&EngineMetrics> = summaries.iter().filter_map(|s| pick(s)?.metrics.as_ref()).collect();
        aggregate(&ms)
    };
    let summary = RunSummary {
        engine: args.engine,
        master_seed: master,
        seed_derivation: SEED_DERIVATION,
        mc_samples: params.mc_samples,
        particles: params.particles,
        ess_threshold: params.ess_threshold,
        hmm_aggregate: collect(|s| s.hmm.as_ref()),
        essm_aggregate: collect(|s| s.essm.as_ref()),
        replicates: summaries,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(out.join(io::SUMMARY_FILE), json + "\n").map_err(|e| CliError::Data(e.to_string()))?;
    if !degenerate.is_empty() {
        return Err(CliError::Degenerate(format!(
            "engine degeneracy beyond tolerance {tolerance}: {}",
            degenerate.join("; ")
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub margin: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmm: Option<EngineMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub essm: Option<EngineMetrics>,
}

fn read_engine_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let (labels, rows) = io::read_posteriors(path)?;
    if labels.iter().map(String::as_str).ne(LABELS.iter().copied()) {
        return Err(CliError::Data(format!("{}: label columns {labels:?}, expected {LABELS:?}", path.display())));
    }
    Ok(rows)
}

/// Pure function of the files in `run` plus the labels (and truth) files.
pub fn cmd_eval(run: &Path, labels: &Path, truth: Option<&Path>, margin: usize) -> CliResult<EvalReport> {
    let labels_v = io::read_labels(labels)?;
    let hmm_path = run.join(io::HMM_POSTERIOR_FILE);
    let essm_path = run.join(io::ESSM_POSTERIOR_FILE);
    if !hmm_path.exists() && !essm_path.exists() {
        return Err(CliError::Data(format!("{}: no posterior tables found", run.display())));
    }
    let hmm = hmm_path
        .exists()
        .then(|| -> CliResult<EngineMetrics> {
            Ok(metrics::evaluate(&read_engine_rows(&hmm_path)?, &labels_v, None, margin)?)
        })
        .transpose()?;
    let essm = essm_path
        .exists()
        .then(|| -> CliResult<EngineMetrics> {
            let rows = read_engine_rows(&essm_path)?;
            let est_path = run.join(io::ESSM_ESTIMATE_FILE);
            let truth_path = truth
                .map(Path::to_path_buf)
                .unwrap_or_else(|| labels.parent().unwrap_or(Path::new(".")).join(io::TRUTH_FILE));
            let pair = if est_path.exists() && truth_path.exists() {
                Some((io::read_states(&est_path)?, io::read_truth(&truth_path)?))
            } else {
                None
            };
            Ok(metrics::evaluate(
                &rows,
                &labels_v,
                pair.as_ref().map(|(e, t)| (e.as_slice(), t.as_slice())),
                margin,
            )?)
        })
        .transpose()?;
    let report = EvalReport { margin, hmm, essm };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(run.join(io::METRICS_FILE), json + "\n").map_err(|e| CliError::Data(e.to_string()))?;
    Ok(report)
}

fn print_json<T: Serialize>(v: &T) {
    match serde_json::to_string_pretty(v) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("cannot serialize report: {e}"),
    }
}

/// Parses arguments, dispatches, and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Simulate { config, out, seed, no_noise } => {
            cmd_simulate(config, out, *seed, *no_noise).map(|r| print_json(&r))
        }
        Command::Run { config, data, engine, replicates, out, seed } => cmd_run(&RunArgs {
            config,
            data,
            engine: *engine,
            replicates: *replicates,
            out: out.as_deref(),
            seed: *seed,
        })
        .map(|r| print_json(&r)),
        Command::Eval { run, labels, truth, margin } => {
            cmd_eval(run, labels, truth.as_deref(), *margin).map(|r| print_json(&r))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
