use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdm_core::data::Label;

#[derive(Debug, Parser)]
#[command(name = "pdm", version, about = "Bearing anomaly detection with counterfactual what-if explanations")]
pub struct Cli {
    /// Root seed; every stochastic component derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "pdm-out")]
    pub out: PathBuf,
    /// Worker threads for fold-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a directory of PRONOSTIA acc_*.csv files into a dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2560)]
        window_len: usize,
    },
    /// Generate a synthetic run-to-failure dataset.
    Synth(SynthArgs),
    /// Assign three-sigma labels with suffix smoothing. Several datasets are
    /// labeled one by one, then joined in the order given.
    Label {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        /// Also write a stratified train/test split with this test fraction.
        #[arg(long)]
        holdout: Option<f64>,
    },
    /// Oversample the minority class with SMOTE.
    Balance {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        smote: SmoteArgs,
    },
    /// Train a TCN classifier.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        tcn: TcnArgs,
    },
    /// Score a model on a labeled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Shuffled k-fold cross-validation with per-fold SMOTE.
    Kfold {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        tcn: TcnArgs,
        #[command(flatten)]
        smote: SmoteArgs,
    },
    /// Counterfactual explanation for one window.
    Explain(ExplainArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "PDM_DATA_DIR", default_value = "pdm-data")]
        data_dir: PathBuf,
        #[arg(long, env = "PDM_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "PDM_EXPLAINER_CACHE", default_value_t = 4)]
        explainer_cache: usize,
        /// Log AnomalyDetected again on every re-detection of a window.
        #[arg(long)]
        repeat_anomaly_events: bool,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub windows: usize,
    #[arg(long, default_value_t = 64)]
    pub window_len: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Fraction of the run after which amplitude grows.
    #[arg(long, default_value_t = 0.8)]
    pub onset: f64,
    /// Amplitude increase per window after onset.
    #[arg(long, default_value_t = 0.05)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Channels that degrade (default: all).
    #[arg(long, value_delimiter = ',')]
    pub degrading_channels: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SmoteArgs {
    #[arg(long, default_value_t = 5)]
    pub smote_k: usize,
    /// Minority size after oversampling relative to the majority.
    #[arg(long, default_value_t = 1.0)]
    pub smote_ratio: f64,
}

#[derive(Debug, Args)]
pub struct TcnArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f64,
    #[arg(long, default_value_t = 7)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub hidden: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset holding the window to explain.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Labeled dataset supplying distractors (default: --dataset).
    #[arg(long)]
    pub explainer_dataset: Option<PathBuf>,
    #[arg(long)]
    pub window_id: u64,
    /// healthy|anomalous|0|1 (default: the class the model does not predict).
    #[arg(long, value_parser = parse_label)]
    pub target_class: Option<Label>,
    #[arg(long, default_value_t = pdm_core::cf::DEFAULT_NUM_DISTRACTORS)]
    pub distractors: usize,
    /// Channels to keep fixed, by name or index, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub lock: Vec<String>,
    /// Also write plot-ready series.
    #[arg(long)]
    pub plot: bool,
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s.to_ascii_lowercase().as_str() {
        "0" | "healthy" => Ok(Label::Healthy),
        "1" | "anomalous" => Ok(Label::Anomalous),
        _ => Err(format!("expected healthy, anomalous, 0 or 1, got {s:?}")),
    }
}
