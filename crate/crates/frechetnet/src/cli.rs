//! Command-line surface: `simulate`, `train`, `predict`, and `reproduce`.
//!
//! Configuration precedence is flags over config file over built-in
//! defaults; every run echoes its effective configuration into the output
//! directory as `manifest.toml`. Exit codes (enforced by the binary): 0 on
//! success, 1 for runtime failures (I/O, malformed data files, divergence),
//! 2 for usage and validation errors (bad flags, bad config values, missing
//! inputs). File formats are documented in `docs/formats.md`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::experiments::{
    self, gen_experiment1, gen_experiment2, McSetting, Method, SummaryRow, DATA_STREAM,
};
use crate::network::Architecture;
use crate::numerics::RngState;
use crate::spaces::MetricSpace;
use crate::training::{
    load_checkpoint, save_checkpoint, train, BatchMode, TrainConfig, TrainHistory,
};
use crate::Error;

/// Seed fallback environment variable.
pub const SEED_ENV_VAR: &str = "FRECHETNET_SEED";

/// Neural networks with metric-space-valued outputs: distributions, graph
/// Laplacians, compositions.
#[derive(Debug, Parser)]
#[command(name = "frechetnet", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset file and print its content digest.
    Simulate(SimulateArgs),
    /// Train a model on a dataset file; writes checkpoint, history, manifest.
    Train(TrainArgs),
    /// Predict responses for a CSV of predictor rows using a checkpoint.
    Predict(PredictArgs),
    /// Run a full experiment comparison (DFNN vs GFR) and write its tables.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation experiment: 1 (distributional) or 2 (network responses).
    #[arg(long)]
    pub experiment: u8,
    /// Number of records to generate.
    #[arg(long)]
    pub n: usize,
    /// Edge-noise half-width a >= 0 (experiment 2 only).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Node count q, 2..=10 (experiment 2 only).
    #[arg(long, default_value_t = 10)]
    pub nodes: usize,
    /// Seed; falls back to FRECHETNET_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameter overrides shared by `train` and `reproduce`.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// Learning rate (built-in default 0.001; reproduce uses per-experiment
    /// defaults).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dropout rate in [0, 1).
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Number of hidden layers.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Width of all hidden layers before the last.
    #[arg(long)]
    pub width: Option<usize>,
    /// Width of the final (representation) layer.
    #[arg(long)]
    pub last_width: Option<usize>,
    /// Batch mode: "full" or a minibatch size.
    #[arg(long)]
    pub batch: Option<String>,
    /// Epoch ceiling.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Burn-in epochs before validation tracking.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Minimum validation improvement that counts as progress.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Consecutive non-improving epochs tolerated before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file (see docs/formats.md).
    pub dataset: PathBuf,
    /// Assert the dataset's space kind (wasserstein|laplacian|aitchison|euclidean).
    #[arg(long)]
    pub space: Option<String>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Seed; falls back to FRECHETNET_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (model.ckpt, history.csv, manifest.toml).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    pub checkpoint: PathBuf,
    /// CSV of predictor rows, one record per line, no header.
    pub inputs: PathBuf,
    /// Output predictions file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// Few replicates, reduced width; minutes on a laptop.
    Desk,
    /// Published replicate counts and architectures; hours of compute.
    Paper,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Experiment: 1 (distributional), 2 (network), 3 (compositions CSV).
    #[arg(long)]
    pub experiment: u8,
    /// Replicate counts and architecture scale.
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Compositions CSV (experiment 3 only; schema in docs/formats.md).
    pub data: Option<PathBuf>,
    /// Training sample size (experiments 1-2; default 200).
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge-noise half-width (experiment 2; default 0).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Node count (experiment 2; default 10).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Base seed; falls back to FRECHETNET_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (replicates.csv, summary.csv, manifest.toml).
    #[arg(long)]
    pub out: PathBuf,
}

/// CLI failure with its exit classification.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config values, missing inputs: exit code 2.
    Usage(String),
    /// I/O, malformed data files, divergence: exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Resolved run description echoed to `manifest.toml`. Exactly one of
/// `data_path` and `generator` is set.
#[derive(Debug, Serialize)]
pub struct RunSpec {
    pub command: String,
    pub space: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub train: TrainConfig,
}

impl RunSpec {
    fn validate(&self) -> CliResult<()> {
        if self.data_path.is_some() == self.generator.is_some() {
            return Err(usage(
                "exactly one data source (a dataset path or a generator setting) must be set",
            ));
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    }
}

fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|_| usage(format!("{SEED_ENV_VAR} must be an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let seed = resolve_seed(args.seed)?;
    let mut rng = RngState::derive(seed, DATA_STREAM);
    let (space, pairs) = match args.experiment {
        1 => (
            experiments::experiment1_space(),
            gen_experiment1(args.n, &mut rng).map_err(usage)?,
        ),
        2 => {
            if !(2..=10).contains(&args.nodes) {
                return Err(usage(format!(
                    "--nodes must lie in 2..=10, got {}",
                    args.nodes
                )));
            }
            if !(args.noise >= 0.0) {
                return Err(usage(format!(
                    "--noise must be nonnegative, got {}",
                    args.noise
                )));
            }
            let (_, pairs) =
                gen_experiment2(args.n, args.nodes, args.noise, &mut rng).map_err(usage)?;
            (experiments::experiment2_space(args.nodes), pairs)
        }
        other => return Err(usage(format!("--experiment must be 1 or 2, got {other}"))),
    };
    let dataset = Dataset::from_pairs(space, pairs).map_err(runtime)?;
    dataset.write_container(&args.out).map_err(runtime)?;
    let bytes = std::fs::read(&args.out).map_err(runtime)?;
    println!(
        "wrote {} ({} records)\nsha256={}",
        args.out.display(),
        dataset.len(),
        sha256_hex(&bytes)
    );
    Ok(())
}

/// Optional values accepted from a TOML config file; flags override them.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    lr: Option<f64>,
    dropout: Option<f64>,
    depth: Option<usize>,
    width: Option<usize>,
    last_width: Option<usize>,
    batch: Option<BatchMode>,
    max_epochs: Option<usize>,
    burn_in: Option<usize>,
    tol: Option<f64>,
    patience: Option<usize>,
    seed: Option<u64>,
}

fn read_config_file(path: Option<&Path>) -> CliResult<FileOverrides> {
    let Some(path) = path else {
        return Ok(FileOverrides::default());
    };
    let text = std::fs::read_to_string(path).map_err(runtime)?;
    toml::from_str(&text).map_err(|e| usage(format!("config file {}: {e}", path.display())))
}

fn parse_batch(text: &str) -> CliResult<BatchMode> {
    if text == "full" {
        return Ok(BatchMode::Full);
    }
    text.parse::<usize>()
        .map(BatchMode::Minibatch)
        .map_err(|_| usage(format!("--batch must be \"full\" or an integer, got {text:?}")))
}

/// Built-in architecture defaults for `train` on an arbitrary dataset.
struct ArchDefaults {
    depth: usize,
    width: usize,
    last_width: usize,
    dropout: f64,
}

const TRAIN_DEFAULTS: ArchDefaults = ArchDefaults {
    depth: 3,
    width: 64,
    last_width: 8,
    dropout: 0.1,
};

/// Applies precedence (flags over file over `base`/defaults) and builds the
/// effective training configuration.
fn effective_config(
    input_dim: usize,
    base: &TrainConfig,
    defaults: &ArchDefaults,
    file: &FileOverrides,
    flags: &TrainFlags,
    seed_flag: Option<u64>,
) -> CliResult<TrainConfig> {
    let depth = flags.depth.or(file.depth).unwrap_or(defaults.depth);
    let width = flags.width.or(file.width).unwrap_or(defaults.width);
    let last_width = flags
        .last_width
        .or(file.last_width)
        .unwrap_or(defaults.last_width);
    let dropout = flags.dropout.or(file.dropout).unwrap_or(defaults.dropout);
    let arch = Architecture::with_uniform_widths(input_dim, depth, width, last_width, dropout)
        .map_err(usage)?;
    let mut config = base.clone();
    config.arch = arch;
    if let Some(lr) = flags.lr.or(file.lr) {
        config.learning_rate = lr;
    }
    if let Some(batch) = &flags.batch {
        config.batch_mode = parse_batch(batch)?;
    } else if let Some(batch) = file.batch {
        config.batch_mode = batch;
    }
    if let Some(v) = flags.max_epochs.or(file.max_epochs) {
        config.max_epochs = v;
    }
    if let Some(v) = flags.burn_in.or(file.burn_in) {
        config.burn_in = v;
    }
    if let Some(v) = flags.tol.or(file.tol) {
        config.tolerance = v;
    }
    if let Some(v) = flags.patience.or(file.patience) {
        config.patience = v;
    }
    config.seed = match seed_flag {
        Some(seed) => seed,
        None => match file.seed {
            Some(seed) => seed,
            None => resolve_seed(None)?,
        },
    };
    config.validate().map_err(usage)?;
    Ok(config)
}

fn write_manifest(out_dir: &Path, spec: &RunSpec) -> CliResult<()> {
    spec.validate()?;
    let text = toml::to_string_pretty(spec).map_err(|e| runtime(format!("manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.toml"), text).map_err(runtime)?;
    Ok(())
}

fn write_history_csv(path: &Path, history: &TrainHistory) -> CliResult<()> {
    let mut text = String::from("epoch,train_risk,val_mspe\n");
    for (i, risk) in history.train_risk.iter().enumerate() {
        let val = match history.val_mspe[i] {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        text.push_str(&format!("{},{},{}\n", i + 1, risk, val));
    }
    std::fs::write(path, text).map_err(runtime)?;
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let dataset = Dataset::read_container(&args.dataset).map_err(runtime)?;
    if let Some(expected) = &args.space {
        if expected != dataset.space().kind() {
            return Err(usage(format!(
                "--space {} does not match the dataset's space {}",
                expected,
                dataset.space().kind()
            )));
        }
    }
    let file = read_config_file(args.config.as_deref())?;
    let base = TrainConfig::new(Architecture::new(dataset.predictor_dim(), vec![1], 0.0).unwrap());
    let config = effective_config(
        dataset.predictor_dim(),
        &base,
        &TRAIN_DEFAULTS,
        &file,
        &args.train,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    let spec = RunSpec {
        command: "train".into(),
        space: dataset.space().kind().into(),
        data_path: Some(args.dataset.display().to_string()),
        generator: None,
        seed: config.seed,
        out_dir: args.out.display().to_string(),
        train: config.clone(),
    };
    write_manifest(&args.out, &spec)?;
    let (checkpoint, history) = train(&dataset, &config).map_err(runtime)?;
    save_checkpoint(&checkpoint, &args.out.join("model.ckpt")).map_err(runtime)?;
    write_history_csv(&args.out.join("history.csv"), &history)?;
    match history.best_val_mspe() {
        Some(v) => println!(
            "trained {} epochs ({:?}); best validation MSPE {v} at epoch {}",
            history.epochs(),
            history.stop_reason,
            history.best_epoch
        ),
        None => println!(
            "trained {} epochs ({:?}); no validation epochs ran",
            history.epochs(),
            history.stop_reason
        ),
    }
    Ok(())
}

pub fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let checkpoint = load_checkpoint(&args.checkpoint).map_err(runtime)?;
    let p = checkpoint.config.arch.input_dim;
    let text = std::fs::read_to_string(&args.inputs).map_err(runtime)?;
    let mut rows: Vec<Array1<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values =
            values.map_err(|_| runtime(format!("inputs line {}: bad number", lineno + 1)))?;
        if values.len() != p {
            return Err(runtime(format!(
                "inputs line {}: {} fields, model expects p={p}",
                lineno + 1,
                values.len()
            )));
        }
        rows.push(Array1::from_vec(values));
    }
    let mut out = String::new();
    if !rows.is_empty() {
        let mut x = Array2::<f64>::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            x.row_mut(i).assign(row);
        }
        let predictions = checkpoint.predict_batch(&x.view()).map_err(runtime)?;
        for point in predictions {
            let natural = checkpoint.space.to_natural(&point).map_err(runtime)?;
            let fields: Vec<String> = natural.iter().map(|v| format!("{v}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    std::fs::write(&args.out, out).map_err(runtime)?;
    println!("wrote {} ({} predictions)", args.out.display(), rows.len());
    Ok(())
}

/// Per-experiment defaults for `reproduce`.
struct ReproduceDefaults {
    arch: ArchDefaults,
    learning_rate: f64,
    burn_in: usize,
    patience: usize,
    max_epochs: usize,
    replicates: usize,
}

fn reproduce_defaults(experiment: u8, scale: Scale) -> ReproduceDefaults {
    let full = matches!(scale, Scale::Paper);
    match experiment {
        1 => ReproduceDefaults {
            arch: ArchDefaults {
                depth: if full { 4 } else { 3 },
                width: if full { 2048 } else { 512 },
                last_width: 8,
                dropout: 0.3,
            },
            learning_rate: 0.001,
            burn_in: 50,
            patience: 150,
            max_epochs: if full { 5000 } else { 600 },
            replicates: if full { 250 } else { 10 },
        },
        2 => ReproduceDefaults {
            arch: ArchDefaults {
                depth: if full { 4 } else { 3 },
                width: if full { 4096 } else { 512 },
                last_width: 15,
                dropout: 0.3,
            },
            learning_rate: 0.01,
            burn_in: 50,
            patience: 100,
            max_epochs: if full { 5000 } else { 400 },
            replicates: if full { 250 } else { 10 },
        },
        _ => ReproduceDefaults {
            arch: ArchDefaults {
                depth: if full { 4 } else { 3 },
                width: if full { 1024 } else { 128 },
                last_width: 14,
                dropout: 0.3,
            },
            learning_rate: 0.01,
            burn_in: 500,
            patience: 1000,
            max_epochs: if full { 5000 } else { 1500 },
            // Cross-validation repeats for the compositions experiment.
            replicates: if full { 100 } else { 10 },
        },
    }
}

pub fn cmd_reproduce(args: ReproduceArgs) -> CliResult<()> {
    if !(1..=3).contains(&args.experiment) {
        return Err(usage(format!(
            "--experiment must be 1, 2, or 3, got {}",
            args.experiment
        )));
    }
    let defaults = reproduce_defaults(args.experiment, args.scale);
    let file = read_config_file(args.config.as_deref())?;

    let input_dim = if args.experiment == 3 {
        experiments::COMPOSITION_PREDICTORS
    } else {
        10
    };
    let mut base = TrainConfig::new(Architecture::new(input_dim, vec![1], 0.0).unwrap());
    base.learning_rate = defaults.learning_rate;
    base.burn_in = defaults.burn_in;
    base.patience = defaults.patience;
    base.max_epochs = defaults.max_epochs;
    let config = effective_config(
        input_dim,
        &base,
        &defaults.arch,
        &file,
        &args.train,
        args.seed,
    )?;
    let base_seed = config.seed;

    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    let methods = [Method::Dfnn, Method::Gfr];

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| runtime(format!("thread pool: {e}")))?;

    let (space_name, generator, data_path, setting_label, results) = match args.experiment {
        1 | 2 => {
            if args.experiment == 1 && (args.noise.is_some() || args.nodes.is_some()) {
                return Err(usage("--noise and --nodes apply to experiment 2 only"));
            }
            let setting = McSetting {
                n: args.n.unwrap_or(200),
                a: args.noise.unwrap_or(0.0),
                q: args.nodes.unwrap_or(10),
            };
            if setting.n < 5 {
                return Err(usage("--n must be at least 5"));
            }
            if args.experiment == 2 && !(2..=10).contains(&setting.q) {
                return Err(usage(format!(
                    "--nodes must lie in 2..=10, got {}",
                    setting.q
                )));
            }
            if args.experiment == 2 && !(setting.a >= 0.0) {
                return Err(usage("--noise must be nonnegative"));
            }
            let results = pool
                .install(|| {
                    experiments::run_monte_carlo(
                        args.experiment,
                        setting,
                        defaults.replicates,
                        &methods,
                        &config,
                        base_seed,
                    )
                })
                .map_err(runtime)?;
            let space = if args.experiment == 1 {
                experiments::experiment1_space()
            } else {
                experiments::experiment2_space(setting.q)
            };
            let generator = format!(
                "experiment={};{};replicates={}",
                args.experiment,
                setting.label(args.experiment),
                defaults.replicates
            );
            (
                space.kind().to_string(),
                Some(generator),
                None,
                setting.label(args.experiment),
                results,
            )
        }
        _ => {
            let Some(data_path) = &args.data else {
                return Err(usage(
                    "experiment 3 needs a compositions CSV; see docs/formats.md for the \
                     schema (header state,share_1..share_9,pred_1..pred_17)",
                ));
            };
            let (x, compositions) = experiments::load_compositions(data_path).map_err(runtime)?;
            let space = MetricSpace::Aitchison {
                dim: experiments::COMPOSITION_PARTS,
            };
            let responses = compositions
                .into_iter()
                .map(crate::spaces::Point::Composition)
                .collect();
            let dataset = Dataset::new(space, x, responses).map_err(runtime)?;
            let label = format!("cv10x{}", defaults.replicates);
            let results = pool
                .install(|| {
                    experiments::run_cv(
                        &dataset,
                        10,
                        defaults.replicates,
                        &methods,
                        &config,
                        base_seed,
                    )
                })
                .map_err(runtime)?;
            (
                space.kind().to_string(),
                None,
                Some(data_path.display().to_string()),
                label,
                results,
            )
        }
    };

    let spec = RunSpec {
        command: "reproduce".into(),
        space: space_name,
        data_path,
        generator,
        seed: base_seed,
        out_dir: args.out.display().to_string(),
        train: config,
    };
    write_manifest(&args.out, &spec)?;
    experiments::write_replicates_csv(&args.out.join("replicates.csv"), &setting_label, &results)
        .map_err(runtime)?;
    let experiment_name = args.experiment.to_string();
    let rows: Vec<SummaryRow> = results
        .iter()
        .map(|r| SummaryRow::from_result(&experiment_name, &setting_label, r))
        .collect();
    experiments::write_summary_csv(&args.out.join("summary.csv"), &rows).map_err(runtime)?;
    for row in &rows {
        println!(
            "{}: mean MSPE {:.4} (sd {:.4}) over {} replicates",
            row.method, row.mean_mspe, row.sd_mspe, row.replicates
        );
    }
    Ok(())
}

// Library-level error classification helpers for tests.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parameter(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
