use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use crossmodal::experiment::{Baseline, ExperimentConfig};
use crossmodal::flowdata::{Direction, Mode};
use crossmodal::metrics::ReportLayout;
use crossmodal::transfer::Strategy;

mod commands;

#[derive(Parser)]
#[command(
    name = "crossmodal",
    version,
    about = "Cross-modal station demand forecasting with transfer learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin raw trips into a station flow matrix
    Prepare(PrepareArgs),
    /// Generate a synthetic source/target flow pair
    Synth(SynthArgs),
    /// Train a Base model on one flow matrix
    Train(TrainArgs),
    /// Train a target model with a transfer strategy
    Transfer(TransferArgs),
    /// Score a checkpoint or a baseline on the test segment
    Evaluate(EvaluateArgs),
    /// Render metric rows as tables, JSON and CSV
    Report(ReportArgs),
    /// Search layer counts and widths on the validation segment
    Gridsearch(GridArgs),
    /// Compare analytic and finite-difference gradients
    Gradcheck(GradcheckArgs),
    /// Run the full experiment described by a config file
    Run(RunArgs),
}

/// Overrides for the model and data settings of an experiment config.
#[derive(Args, Debug, Default, Clone)]
struct ModelArgs {
    /// Experiment config (JSON) providing defaults for every flag below
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden layer sizes, e.g. 100,100,100
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    ft_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Train/validation/test ratios, e.g. 0.7,0.1,0.2
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<f64>>,
    /// Limit target training to the first N days
    #[arg(long)]
    history_days: Option<f64>,
    #[arg(long)]
    filter_threshold: Option<f64>,
    /// Disable station filtering
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    trips: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    mode: Mode,
    #[arg(long, default_value_t = 15)]
    interval: u32,
    #[arg(long)]
    start: DateTime<Utc>,
    #[arg(long)]
    end: DateTime<Utc>,
    #[arg(long, value_enum, default_value = "arrivals")]
    direction: DirectionArg,
    #[arg(long, default_value_t = crossmodal::flowdata::DEFAULT_SNAP_RADIUS_M)]
    snap_radius: f64,
    #[arg(long, default_value_t = crossmodal::flowdata::DEFAULT_FILTER_THRESHOLD)]
    filter_threshold: f64,
    #[arg(long)]
    no_filter: bool,
    /// Output flow CSV; a JSON sidecar is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum DirectionArg {
    Arrivals,
    Departures,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Arrivals => Direction::Arrivals,
            DirectionArg::Departures => Direction::Departures,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config (JSON); flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    interval: Option<u32>,
    #[arg(long)]
    source_stations: Option<usize>,
    #[arg(long)]
    target_stations: Option<usize>,
    #[arg(long)]
    base_rate: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    coupling: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    strategy: Strategy,
    /// Target-mode flow CSV
    #[arg(long)]
    flow: PathBuf,
    /// Trained source checkpoint (FT, FTF)
    #[arg(long)]
    source_checkpoint: Option<PathBuf>,
    /// Source-mode flow CSV (SB)
    #[arg(long)]
    source_flow: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "checkpoint")]
    baseline: Option<Baseline>,
    /// Source-mode flows for split-brain checkpoints
    #[arg(long)]
    source_flow: Option<PathBuf>,
    /// Producer label recorded in the metrics row
    #[arg(long, default_value = "Base")]
    producer: String,
    /// Seed for randomized baselines
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    /// Write the metrics row here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON files holding metric rows
    #[arg(long = "rows", required = true, num_args = 1..)]
    rows: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    layout: LayoutArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum LayoutArg {
    Transfer,
    Baselines,
    Both,
}

impl From<LayoutArg> for ReportLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Transfer => ReportLayout::Transfer,
            LayoutArg::Baselines => ReportLayout::Baselines,
            LayoutArg::Both => ReportLayout::Both,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    units: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seq_lens: Vec<usize>,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Write the search table as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    inputs: usize,
    #[arg(long, default_value_t = 3)]
    outputs: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,5")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    seq_len: usize,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Experiment-level overrides shared by `run` and `gridsearch`.
#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Baselines to run; pass an empty string for none
    #[arg(long, value_delimiter = ',')]
    baselines: Option<Vec<String>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    no_checkpoints: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

impl ModelArgs {
    fn load(&self) -> crossmodal::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut config);
        Ok(config)
    }

    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(h) = &self.hidden {
            config.hidden_layers = h.clone();
        }
        if let Some(v) = self.seq_len {
            config.seq_len = v;
        }
        if let Some(v) = self.epochs {
            config.train.epochs = v;
        }
        if let Some(v) = self.ft_epochs {
            config.ft_epochs = Some(v);
        }
        if let Some(v) = self.batch_size {
            config.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            config.train.adam.learning_rate = v;
        }
        if let Some(s) = &self.split {
            config.split = [s[0], s[1], s[2]];
        }
        if let Some(v) = self.history_days {
            config.target_history_days = Some(v);
        }
        if let Some(v) = self.filter_threshold {
            config.filter_threshold = Some(v);
        }
        if self.no_filter {
            config.filter_threshold = None;
        }
    }
}

impl ExperimentArgs {
    fn load(&self, seed: u64) -> crossmodal::Result<ExperimentConfig> {
        let mut config = self.model.load()?;
        config.master_seed = Some(seed);
        if let Some(h) = &self.horizons {
            config.horizons = h.clone();
        }
        if let Some(s) = &self.strategies {
            config.strategies = s.clone();
        }
        if let Some(b) = &self.baselines {
            config.baselines = b
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<crossmodal::Result<_>>()?;
        }
        if let Some(dir) = &self.out_dir {
            config.output_dir = dir.clone();
        }
        if self.no_checkpoints {
            config.write_checkpoints = false;
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
        Command::Gridsearch(a) => commands::gridsearch(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Run(a) => commands::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
