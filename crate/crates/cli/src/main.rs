//! `sol` — train, sweep, verify and experiment from the command line.
//!
//! Every subcommand reads one JSON config file, optionally patched by
//! `key=value` overrides (dotted paths, values parsed as JSON when
//! possible). Configs are validated in full before any file is
//! written; successful runs leave a `manifest.json` listing every
//! artifact with its SHA-256 hash, so identical configs and seeds can
//! be checked for byte-identical outputs.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! abort during training, 5 verification failure.

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use sol_core::confusion::LabeledBatch;
use sol_core::experiment::{
    run_experiment, threshold_distribution_report, ExperimentConfig, ExperimentError,
};
use sol_core::ingest::{clean_and_encode, read_csv, write_csv, IngestError, PreprocessPlan};
use sol_core::network::{NetworkSpec, ObjectiveSpec};
use sol_core::scores::{by_name, loss_from_config, LossConfig};
use sol_core::threshold_opt::sweep;
use sol_core::train::{fit, TrainConfig, TrainError};
use sol_core::verify::run_default_suite;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training aborted: {0}")]
    Numeric(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Verification(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::UnknownColumn(_) | IngestError::DegenerateWindowPlan => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NumericAbort { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Ingest(inner) => inner.into(),
            ExperimentError::Train(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "sol", about = "Score-oriented loss training and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap; runs are sequential today, values > 1 are accepted
    /// for forward compatibility.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Config overrides as dotted.path=value pairs.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a raw CSV into an all-numeric dataset.
    Prepare(CommonArgs),
    /// Fit the network once and save the weights and loss history.
    Train(CommonArgs),
    /// Maximize a score over the decision threshold of saved predictions.
    Sweep(CommonArgs),
    /// Run the statistical verification suite.
    Verify(CommonArgs),
    /// Repeated randomized runs over a loss grid.
    Experiment(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare(args) => run_prepare(args),
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Verify(args) => run_verify(args),
        Command::Experiment(args) => run_experiment_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Load the config file, apply overrides and the `--seed` flag (written
/// to `seed_path` when given), check the schema version, and
/// deserialize. Nothing is written until this succeeds.
fn load_config<T: serde::de::DeserializeOwned>(
    args: &CommonArgs,
    seed_path: Option<&str>,
) -> Result<T, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    for pair in &args.overrides {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override '{pair}' is not KEY=VALUE")))?;
        apply_override(&mut value, key, raw)?;
    }
    if let (Some(seed), Some(path)) = (args.seed, seed_path) {
        apply_override(&mut value, path, &seed.to_string())?;
    }
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let version = value.get("version").and_then(Value::as_u64).unwrap_or(0);
    if version != u64::from(CONFIG_VERSION) {
        return Err(CliError::Config(format!(
            "config version {version} is not supported (expected {CONFIG_VERSION})"
        )));
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

fn apply_override(value: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts
        .split_last()
        .ok_or_else(|| CliError::Config("empty override key".into()))?;
    for part in path {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("'{part}' in '{key}' is not an object")))?
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("'{key}' does not address an object field")))?
        .insert(last.to_string(), parsed);
    Ok(())
}

/// Collects artifacts as they are written and hashes them into
/// `manifest.json` at the end.
struct Artifacts {
    out: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn track(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    fn finish(mut self, command: &str) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct ManifestEntry {
            file: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest {
            command: String,
            files: Vec<ManifestEntry>,
        }
        self.files.sort();
        let files = self
            .files
            .iter()
            .map(|name| {
                let bytes = std::fs::read(self.out.join(name))?;
                Ok(ManifestEntry {
                    file: name.clone(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = Manifest {
            command: command.to_string(),
            files,
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(self.out.join("manifest.json"), text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------- prepare

#[derive(Deserialize)]
struct PrepareConfig {
    #[allow(dead_code)]
    version: u32,
    input: PathBuf,
    #[serde(default)]
    label_column: Option<String>,
    #[serde(default)]
    plan: PreprocessPlan,
}

fn run_prepare(args: &CommonArgs) -> Result<(), CliError> {
    let config: PrepareConfig = load_config(args, None)?;
    let raw = read_csv(&config.input, config.label_column.as_deref())?;
    let encoded = clean_and_encode(&raw, &config.plan)?;

    let mut artifacts = Artifacts::new(&args.out)?;
    let mut features = encoded.clone();
    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    if let Some(label) = &config.label_column {
        let idx = features.column_index(label)?;
        let mut labels = String::from("label\n");
        for row in &mut features.rows {
            let cell = row.remove(idx);
            match cell.as_str() {
                "1" => n_pos += 1,
                _ => n_neg += 1,
            }
            labels.push_str(&cell);
            labels.push('\n');
        }
        features.columns.remove(idx);
        features.kinds.remove(idx);
        features.label_column = None;
        artifacts.write("labels.csv", labels.as_bytes())?;
    }
    write_csv(&features, &artifacts.out.join("encoded.csv"))?;
    artifacts.track("encoded.csv");

    #[derive(Serialize)]
    struct Summary {
        rows: usize,
        feature_columns: usize,
        n_pos: usize,
        n_neg: usize,
    }
    artifacts.write_json(
        "summary.json",
        &Summary {
            rows: features.n_rows(),
            feature_columns: features.columns.len(),
            n_pos,
            n_neg,
        },
    )?;
    artifacts.finish("prepare")
}

// ------------------------------------------------------------------ train

#[derive(Deserialize)]
struct TrainCliConfig {
    #[allow(dead_code)]
    version: u32,
    data: sol_core::experiment::DataSource,
    layer_widths: Vec<usize>,
    train: TrainConfig,
    loss: LossConfig,
}

fn load_training_data(
    source: &sol_core::experiment::DataSource,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>), CliError> {
    use sol_core::experiment::DataSource;
    match source {
        DataSource::SyntheticClassification {
            n,
            pos_rate,
            separation,
            scale,
        } => {
            let (mut features, labels) =
                sol_core::ingest::synthetic_classification(*n, *pos_rate, *separation, seed);
            for row in &mut features {
                for v in row {
                    *v *= scale;
                }
            }
            Ok((features, labels))
        }
        DataSource::SyntheticSeries { n, spike_rate, level } => {
            let series = sol_core::ingest::synthetic_pollution_series(*n, *spike_rate, seed);
            let labels = sol_core::ingest::label_by_future_level(&series, *level)?;
            let features = (0..labels.len()).map(|t| vec![series[t] / 500.0]).collect();
            Ok((features, labels))
        }
        DataSource::File { path, label_column } => {
            let dataset = read_csv(Path::new(path), Some(label_column))?;
            Ok(dataset.features_and_labels()?)
        }
    }
}

fn run_train(args: &CommonArgs) -> Result<(), CliError> {
    let config: TrainCliConfig = load_config(args, Some("train.seed"))?;
    let spec = NetworkSpec::new(config.layer_widths.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    config.train.validate()?;
    let objective = ObjectiveSpec::unregularized(
        loss_from_config(&config.loss).map_err(|e| CliError::Config(e.to_string()))?,
    );
    let (inputs, labels) = load_training_data(&config.data, config.train.seed)?;

    let report = fit(&spec, &config.train, &objective, &inputs, &labels)?;

    let mut artifacts = Artifacts::new(&args.out)?;
    let mut history = String::from("epoch,train_loss,validation_loss\n");
    for (epoch, record) in report.loss_history.iter().enumerate() {
        history.push_str(&format!(
            "{epoch},{},{}\n",
            record.train_loss, record.validation_loss
        ));
    }
    artifacts.write("history.csv", history.as_bytes())?;
    artifacts.write_json("weights.json", &report.final_weights.checkpoint(&spec))?;

    #[derive(Serialize)]
    struct TrainSummary {
        loss: String,
        epochs_run: usize,
        best_epoch: usize,
        best_validation_loss: f64,
        success: bool,
    }
    artifacts.write_json(
        "report.json",
        &TrainSummary {
            loss: sol_core::experiment::loss_label(&config.loss),
            epochs_run: report.epochs_run,
            best_epoch: report.best_epoch,
            best_validation_loss: report.best_validation_loss,
            success: report.success,
        },
    )?;
    artifacts.finish("train")
}

// ------------------------------------------------------------------ sweep

#[derive(Deserialize)]
struct SweepCliConfig {
    #[allow(dead_code)]
    version: u32,
    /// CSV with `prediction,label` columns, e.g. exported predictions.
    input: PathBuf,
    score: String,
}

fn run_sweep(args: &CommonArgs) -> Result<(), CliError> {
    let config: SweepCliConfig = load_config(args, None)?;
    let score = by_name(&config.score).map_err(|e| CliError::Config(e.to_string()))?;
    let table = read_csv(&config.input, Some("label"))?;
    let mut predictions = Vec::with_capacity(table.n_rows());
    let pred_idx = table.column_index("prediction")?;
    for row in &table.rows {
        predictions.push(row[pred_idx].parse::<f64>().map_err(|_| {
            CliError::Data(format!("non-numeric prediction '{}'", row[pred_idx]))
        })?);
    }
    let (_, labels) = table.features_and_labels()?;
    let batch = LabeledBatch::new(predictions, labels)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let result = sweep(&batch, score);

    let mut artifacts = Artifacts::new(&args.out)?;
    let mut curve = String::from("tau,score\n");
    for (tau, s) in &result.score_curve {
        curve.push_str(&format!("{tau},{s}\n"));
    }
    artifacts.write("curve.csv", curve.as_bytes())?;

    #[derive(Serialize)]
    struct SweepSummary {
        score: String,
        tau_star: f64,
        best_score: f64,
    }
    artifacts.write_json(
        "summary.json",
        &SweepSummary {
            score: config.score.clone(),
            tau_star: result.tau_star,
            best_score: result.best_score,
        },
    )?;
    artifacts.finish("sweep")
}

// ----------------------------------------------------------------- verify

#[derive(Deserialize)]
struct VerifyCliConfig {
    #[allow(dead_code)]
    version: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_draws")]
    mc_draws: usize,
}

fn default_draws() -> usize {
    20_000
}

fn run_verify(args: &CommonArgs) -> Result<(), CliError> {
    let config: VerifyCliConfig = load_config(args, Some("seed"))?;
    if config.mc_draws == 0 {
        return Err(CliError::Config("mc_draws must be positive".into()));
    }
    let rows = run_default_suite(config.seed, config.mc_draws);

    let mut artifacts = Artifacts::new(&args.out)?;
    let mut csv_text = String::from("check,lhs,rhs,standard_error,passed\n");
    for row in &rows {
        csv_text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.check, row.lhs, row.rhs, row.standard_error, row.passed
        ));
    }
    artifacts.write("report.csv", csv_text.as_bytes())?;
    artifacts.write_json("report.json", &rows)?;
    artifacts.finish("verify")?;

    let failures = rows.iter().filter(|r| !r.passed).count();
    if failures > 0 {
        return Err(CliError::Verification(format!(
            "{failures} of {} checks violated their bounds",
            rows.len()
        )));
    }
    println!("verify: {} checks, 0 violations", rows.len());
    Ok(())
}

// ------------------------------------------------------------- experiment

#[derive(Deserialize)]
struct ExperimentCliConfig {
    #[allow(dead_code)]
    version: u32,
    #[serde(flatten)]
    experiment: ExperimentConfig,
    #[serde(default = "default_bins")]
    histogram_bins: usize,
}

fn default_bins() -> usize {
    20
}

fn aggregate_csv(rows: &[sol_core::experiment::AggregateRow]) -> String {
    let mut text = String::from(
        "loss,repeats,successes,out_of_support,\
         epochs_mean,epochs_std,tau_star_mean,tau_star_std,\
         score_at_tau_star_mean,score_at_tau_star_std,\
         score_at_half_mean,score_at_half_std,\
         test_score_at_tau_star_mean,test_score_at_tau_star_std,\
         test_score_at_half_mean,test_score_at_half_std\n",
    );
    let cell = |m: Option<sol_core::experiment::MeanStd>| match m {
        Some(ms) => format!("{},{}", ms.mean, ms.std),
        None => ",".to_string(),
    };
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.loss,
            row.repeats,
            row.successes,
            row.out_of_support,
            cell(row.epochs),
            cell(row.tau_star),
            cell(row.score_at_tau_star),
            cell(row.score_at_half),
            cell(row.test_score_at_tau_star),
            cell(row.test_score_at_half),
        ));
    }
    text
}

fn run_experiment_cmd(args: &CommonArgs) -> Result<(), CliError> {
    let config: ExperimentCliConfig = load_config(args, Some("train.seed"))?;
    config.experiment.validate()?;
    if config.histogram_bins == 0 {
        return Err(CliError::Config("histogram_bins must be positive".into()));
    }
    let report = run_experiment(&config.experiment)?;

    let mut artifacts = Artifacts::new(&args.out)?;
    artifacts.write("aggregate.csv", aggregate_csv(&report.rows).as_bytes())?;
    artifacts.write_json("aggregate.json", &report.rows)?;

    let mut runs_text = String::new();
    for run in &report.runs {
        runs_text
            .push_str(&serde_json::to_string(run).map_err(|e| CliError::Data(e.to_string()))?);
        runs_text.push('\n');
    }
    artifacts.write("runs.jsonl", runs_text.as_bytes())?;

    if let Ok(histograms) = threshold_distribution_report(
        &config.experiment.losses,
        &report.runs,
        config.histogram_bins,
    ) {
        for hist in &histograms {
            let mut text = String::from("bin_left,bin_right,density\n");
            for bin in &hist.histogram.bins {
                text.push_str(&format!("{},{},{}\n", bin.left, bin.right, bin.density));
            }
            let name = format!(
                "histogram_{}.csv",
                hist.loss.replace(['(', ')', ','], "_")
            );
            artifacts.write(&name, text.as_bytes())?;
        }
        artifacts.write_json("histograms.json", &histograms)?;
    }
    artifacts.finish("experiment")
}
