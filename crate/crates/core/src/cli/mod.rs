//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input parse error, 2 dataset
//! error, 3 runtime error (including interruption). Standard output carries
//! JSON only; logs go to standard error.

pub mod config;

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, CorrelationReport};
use crate::complexity::{count_flops, ComplexityReport};
use crate::data::{self, SearchData};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::moea::{self, GenerationSnapshot, RweEvaluator};
use crate::rwe;
use crate::search_space::{decode, Genome};
use crate::VERSION;

pub use config::{resolve, Profile, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rwe-nas",
    version,
    about = "Bi-objective cell architecture search with random-weight evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the evolutionary search and write history.json, front.csv and front_plot.csv.
    Search(RunArgs),
    /// Score one genome (error, FLOPs, wall time) and print JSON.
    Evaluate {
        /// File with 40 whitespace-separated integers (`-` for stdin).
        genome: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the per-layer FLOPs/params report of one genome.
    Flops {
        /// File with 40 whitespace-separated integers (`-` for stdin).
        genome: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Spearman correlation between two `id,accuracy` CSV files.
    Correlate {
        predictions: PathBuf,
        truth: PathBuf,
        /// Directory for correlation.json and correlation_plot.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CIFAR-10 binary directory (falls back to $RWE_NAS_DATA).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub crossover_prob: Option<f64>,
    #[arg(long)]
    pub mutation_prob: Option<f64>,
    #[arg(long)]
    pub eta_m: Option<f64>,
    #[arg(long)]
    pub classifiers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub standardize: Option<bool>,
    #[arg(long)]
    pub infer_batch: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Comma-separated 1-based reduction layers, or `none`.
    #[arg(long)]
    pub reductions: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// `n_train,n_val` or `none`.
    #[arg(long)]
    pub subsample: Option<String>,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        macro_rules! push {
            ($($key:literal => $field:expr),* $(,)?) => {
                $(if let Some(v) = &$field { o.push(($key, v.to_string())); })*
            };
        }
        push!(
            "seed" => self.seed,
            "pop_size" => self.pop,
            "generations" => self.generations,
            "crossover_prob" => self.crossover_prob,
            "mutation_prob" => self.mutation_prob,
            "eta_m" => self.eta_m,
            "classifiers" => self.classifiers,
            "epochs" => self.epochs,
            "batch_size" => self.batch_size,
            "lr0" => self.lr0,
            "momentum" => self.momentum,
            "standardize" => self.standardize,
            "infer_batch" => self.infer_batch,
            "layers" => self.layers,
            "channels" => self.channels,
            "reductions" => self.reductions,
            "train_fraction" => self.train_fraction,
            "subsample" => self.subsample,
        );
        if let Some(d) = &self.data {
            o.push(("data", d.display().to_string()));
        }
        if let Some(d) = &self.out {
            o.push(("out", d.display().to_string()));
        }
        o
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        config::resolve(self.profile, self.config.as_deref(), &self.overrides())
    }
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl Failure {
    pub fn config(error: Error) -> Self {
        Failure { code: 1, error }
    }
    pub fn data(error: Error) -> Self {
        Failure { code: 2, error }
    }
    pub fn runtime(error: Error) -> Self {
        Failure { code: 3, error }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Top-level output document: version, resolved config and payload.
#[derive(Serialize)]
struct Artifact<'a, C: Serialize, T: Serialize> {
    version: &'static str,
    config: &'a C,
    #[serde(flatten)]
    payload: T,
}

fn to_json<C: Serialize, T: Serialize>(config: &C, payload: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Artifact {
        version: VERSION,
        config,
        payload,
    })?;
    s.push('\n');
    Ok(s)
}

fn emit(json: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(json.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn read_genome(path: &Path) -> CliResult<Genome> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Failure::config(e.into()))?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| {
            Failure::config(Error::Config(format!(
                "cannot read genome file {}: {e}",
                path.display()
            )))
        })?
    };
    text.parse().map_err(Failure::config)
}

fn load_data(cfg: &RunConfig) -> CliResult<SearchData> {
    let root = data::resolve_data_root(cfg.data_root.as_deref()).ok_or_else(|| {
        Failure::data(Error::Config(format!(
            "no dataset directory: pass --data or set {}",
            data::DATA_ENV
        )))
    })?;
    let set = data::load_cifar10(&root).map_err(Failure::data)?;
    log::info!("loaded {} training records from {}", set.train.len(), root.display());
    data::prepare(&set.train, &cfg.split).map_err(Failure::data)
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(e.into()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::runtime(e.into()))
}

#[derive(Serialize)]
struct HistoryPayload<'a> {
    generations: &'a [GenerationSnapshot],
}

#[derive(Serialize)]
struct GenerationLine {
    generation: usize,
    min_error: f64,
    min_flops: u64,
    front_size: usize,
    evaluations: usize,
    cache_hits: usize,
    seconds: f64,
}

fn front_csv(history: &moea::SearchHistory) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["genome", "error", "flops"])?;
    for p in analysis::extract_front(history) {
        w.write_record([p.genome.to_string(), p.error.to_string(), p.flops.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv writes utf-8"))
}

fn front_plot_csv(history: &moea::SearchHistory) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["generation", "flops", "error"])?;
    for snap in &history.generations {
        for p in analysis::snapshot_front(snap) {
            w.write_record([snap.generation.to_string(), p.flops.to_string(), p.error.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv writes utf-8"))
}

/// `search`: writes the artifacts even when interrupted, then reports the
/// interruption as a runtime failure.
pub fn cmd_search(args: &RunArgs, cancel: &AtomicBool) -> CliResult<()> {
    let cfg = args.resolve().map_err(Failure::config)?;
    let data = load_data(&cfg)?;
    create_out_dir(&cfg.out_dir)?;
    let evaluator = RweEvaluator {
        data: &data,
        config: cfg.eval.clone(),
        exec: Exec::default(),
    };
    let history = exec::with_threads(args.threads, || {
        moea::run_search(
            &cfg.search,
            &evaluator,
            Exec::default(),
            Some(cancel),
            |snap, elapsed| {
                let line = GenerationLine {
                    generation: snap.generation,
                    min_error: snap.min_error(),
                    min_flops: snap.min_flops(),
                    front_size: snap.front.len(),
                    evaluations: snap.cache.evaluations,
                    cache_hits: snap.cache.hits,
                    seconds: elapsed.as_secs_f64(),
                };
                log::info!(
                    "generation {}: min error {:.4}, min flops {}, front {}, {:.1}s",
                    line.generation,
                    line.min_error,
                    line.min_flops,
                    line.front_size,
                    line.seconds
                );
                if let Ok(s) = serde_json::to_string(&line) {
                    let _ = emit(&(s + "\n"));
                }
            },
        )
    })
    .map_err(Failure::runtime)?;

    let json = to_json(
        &cfg,
        HistoryPayload {
            generations: &history.generations,
        },
    )
    .map_err(Failure::runtime)?;
    write_file(&cfg.out_dir.join("history.json"), &json)?;
    write_file(
        &cfg.out_dir.join("front.csv"),
        &front_csv(&history).map_err(Failure::runtime)?,
    )?;
    write_file(
        &cfg.out_dir.join("front_plot.csv"),
        &front_plot_csv(&history).map_err(Failure::runtime)?,
    )?;
    log::info!("wrote results to {}", cfg.out_dir.display());
    if history.interrupted {
        return Err(Failure::runtime(Error::Interrupted {
            completed: history.generations.len().saturating_sub(1),
        }));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluatePayload {
    genome: Genome,
    #[serde(flatten)]
    result: rwe::EvalResult,
}

pub fn cmd_evaluate(genome: &Path, args: &RunArgs) -> CliResult<()> {
    let genome = read_genome(genome)?;
    let cfg = args.resolve().map_err(Failure::config)?;
    decode(&genome, &cfg.eval.macro_cfg).map_err(Failure::config)?;
    let data = load_data(&cfg)?;
    let result = exec::with_threads(args.threads, || {
        rwe::evaluate(&genome, &data, &cfg.eval, Exec::default())
    })
    .map_err(Failure::runtime)?;
    let json = to_json(&cfg, EvaluatePayload { genome, result }).map_err(Failure::runtime)?;
    emit(&json).map_err(Failure::runtime)
}

#[derive(Serialize)]
struct FlopsPayload {
    genome: Genome,
    #[serde(flatten)]
    report: ComplexityReport,
}

/// `flops`: prints the report and, with `--out`, also writes complexity.json.
pub fn cmd_flops(genome: &Path, args: &RunArgs) -> CliResult<()> {
    let genome = read_genome(genome)?;
    let cfg = args.resolve().map_err(Failure::config)?;
    let plan = decode(&genome, &cfg.eval.macro_cfg).map_err(Failure::config)?;
    let json = to_json(
        &cfg,
        FlopsPayload {
            genome,
            report: count_flops(&plan),
        },
    )
    .map_err(Failure::runtime)?;
    if args.out.is_some() {
        create_out_dir(&cfg.out_dir)?;
        write_file(&cfg.out_dir.join("complexity.json"), &json)?;
    }
    emit(&json).map_err(Failure::runtime)
}

#[derive(Serialize)]
struct CorrelateConfig<'a> {
    predictions: &'a Path,
    truth: &'a Path,
}

pub fn cmd_correlate(predictions: &Path, truth: &Path, out: Option<&Path>) -> CliResult<()> {
    let preds = analysis::read_scores(predictions).map_err(Failure::config)?;
    let truth_rows = analysis::read_scores(truth).map_err(Failure::config)?;
    let truth_map: HashMap<String, f64> = truth_rows.into_iter().collect();
    let report: CorrelationReport =
        analysis::correlation_study(&preds, &truth_map, &truth.display().to_string()).map_err(Failure::config)?;
    let json = to_json(&CorrelateConfig { predictions, truth }, &report).map_err(Failure::runtime)?;
    if let Some(dir) = out {
        create_out_dir(dir)?;
        write_file(&dir.join("correlation.json"), &json)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = std::iter::once(["predicted".to_string(), "ground_truth".to_string()]).chain(
            report
                .pairs
                .iter()
                .map(|p| [p.predicted.to_string(), p.ground_truth.to_string()]),
        );
        for r in rows {
            w.write_record(r).map_err(|e| Failure::runtime(e.into()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Failure::runtime(Error::Io(e.into_error())))?;
        fs::write(dir.join("correlation_plot.csv"), bytes).map_err(|e| Failure::runtime(e.into()))?;
    }
    emit(&json).map_err(Failure::runtime)
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let flag = Arc::clone(&cancel);
        if let Err(e) = ctrlc::set_handler(move || {
            log::warn!("interrupt received; stopping after the current generation");
            flag.store(true, Ordering::Relaxed);
        }) {
            log::warn!("cannot install interrupt handler: {e}");
        }
    }
    let result = match &cli.command {
        Command::Search(args) => cmd_search(args, &cancel),
        Command::Evaluate { genome, run } => cmd_evaluate(genome, run),
        Command::Flops { genome, run } => cmd_flops(genome, run),
        Command::Correlate {
            predictions,
            truth,
            out,
        } => cmd_correlate(predictions, truth, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
