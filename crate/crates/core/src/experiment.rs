//! End-to-end experiment runner: flows, source model, transfer variants,
//! baselines, metrics and reports, all seeded from one master seed.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    historical_average, one_step, rf_fit, rf_predict, var_fit, var_predict, ForestConfig,
};
use crate::error::{Error, Result};
use crate::flowdata::{
    bin_flows, filter_stations, parse_stations, parse_trips, read_flow_matrix, split_and_window,
    BinRequest, DatasetSplit, Direction, FlowMatrix, Mode, Normalizer, Scaling, TripSchema,
    WindowSet, WindowSplits, DEFAULT_FILTER_THRESHOLD, DEFAULT_SNAP_RADIUS_M, INTERVALS,
};
use crate::metrics::{
    attach_improving_rates, compute_scores, render_report, MetricsRow, Producer, ReportLayout,
};
use crate::netcore::{
    predict, train, AdamHyper, Checkpoint, ModelParams, NetSpec, TrainConfig, TrainTrace,
};
use crate::seeds::{derive_seed, sha256_hex};
use crate::synthgen::{generate_multimodal, SynthConfig};
use crate::transfer::{align_flows, build_sb_samples, train_with_strategy, Strategy, TransferPlan};

/// Where the two modes' flows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Generated flows at the synthetic interval, aggregated per horizon.
    Synth(SynthConfig),
    /// Prepared flow-matrix CSV files, aggregated per horizon.
    Flows { source: PathBuf, target: PathBuf },
    /// Raw trips binned directly at every horizon.
    Trips {
        trips: PathBuf,
        stations: PathBuf,
        #[serde(default)]
        schema: TripSchema,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        #[serde(default = "default_snap_radius")]
        snap_radius_m: f64,
        source_mode: Mode,
        target_mode: Mode,
    },
}

fn default_snap_radius() -> f64 {
    DEFAULT_SNAP_RADIUS_M
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Baseline {
    OneStep,
    HA,
    VAR,
    RF,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::OneStep, Baseline::HA, Baseline::VAR, Baseline::RF];

    pub fn producer(self) -> Producer {
        match self {
            Baseline::OneStep => Producer::OneStep,
            Baseline::HA => Producer::HA,
            Baseline::VAR => Producer::VAR,
            Baseline::RF => Producer::RF,
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.producer().label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown baseline {s:?} (expected OneStep, HA, VAR or RF)"
                ))
            })
    }
}

/// Optimizer settings shared by every network in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamHyper,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            adam: d.adam,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
            seed,
            freeze: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub direction: Direction,
    pub horizons: Vec<u32>,
    pub seq_len: usize,
    pub hidden_layers: Vec<usize>,
    pub train: TrainSettings,
    /// Epoch budget for FT and FTF; defaults to `train.epochs`.
    pub ft_epochs: Option<usize>,
    /// Restricts target-mode training bins to the first this many days.
    pub target_history_days: Option<f64>,
    pub strategies: Vec<Strategy>,
    pub baselines: Vec<Baseline>,
    pub var_order: usize,
    pub var_ridge: f64,
    pub forest: ForestConfig,
    /// Minimum mean hourly flow for a station to be kept; `None` disables filtering.
    pub filter_threshold: Option<f64>,
    pub split: [f64; 3],
    pub output_dir: PathBuf,
    pub master_seed: Option<u64>,
    pub write_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            direction: Direction::Arrivals,
            horizons: INTERVALS.to_vec(),
            seq_len: NetSpec::DEFAULT_SEQ_LEN,
            hidden_layers: NetSpec::DEFAULT_HIDDEN.to_vec(),
            train: TrainSettings::default(),
            ft_epochs: None,
            target_history_days: None,
            strategies: Strategy::ALL.to_vec(),
            baselines: Baseline::ALL.to_vec(),
            var_order: crate::baselines::VarModel::DEFAULT_ORDER,
            var_ridge: crate::baselines::VarModel::DEFAULT_RIDGE,
            forest: ForestConfig::default(),
            filter_threshold: Some(DEFAULT_FILTER_THRESHOLD),
            split: [0.7, 0.1, 0.2],
            output_dir: PathBuf::from("results"),
            master_seed: None,
            write_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.master_seed
            .ok_or_else(|| Error::config("a master seed is required"))
    }

    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    /// Interval of the stored flows that horizons aggregate from.
    fn base_interval(&self) -> Result<Option<u32>> {
        Ok(match &self.data {
            DataSource::Synth(s) => Some(s.interval_minutes),
            DataSource::Flows { source, .. } => Some(read_flow_matrix(source)?.interval_minutes),
            DataSource::Trips { .. } => None,
        })
    }

    /// Checks everything that can fail before any model trains.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.horizons.is_empty() {
            return Err(Error::config("at least one horizon is required"));
        }
        if let Some(h) = self.horizons.iter().find(|h| !INTERVALS.contains(h)) {
            return Err(Error::config(format!(
                "horizon {h} is not one of {INTERVALS:?}"
            )));
        }
        if self.strategies.is_empty() && self.baselines.is_empty() {
            return Err(Error::config(
                "at least one strategy or baseline is required",
            ));
        }
        if self.seq_len == 0 || self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::config(
                "window length and every hidden layer size must be positive",
            ));
        }
        self.train.with_seed(0).validate()?;
        DatasetSplit::chronological(100, self.ratios())?;
        if let Some(d) = self.target_history_days {
            if !(d > 0.0) {
                return Err(Error::config(
                    "target history must be a positive number of days",
                ));
            }
        }
        if self.var_order == 0 || !(self.var_ridge >= 0.0) {
            return Err(Error::config(
                "VAR order must be positive and ridge nonnegative",
            ));
        }
        if let Some(t) = self.filter_threshold {
            if !(t >= 0.0) {
                return Err(Error::config("filter threshold must be nonnegative"));
            }
        }
        let must_exist = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "input file {} does not exist",
                    p.display()
                )))
            }
        };
        match &self.data {
            DataSource::Synth(s) => s.validate()?,
            DataSource::Flows { source, target } => {
                must_exist(source)?;
                must_exist(target)?;
            }
            DataSource::Trips {
                trips,
                stations,
                start,
                end,
                ..
            } => {
                must_exist(trips)?;
                must_exist(stations)?;
                if end <= start {
                    return Err(Error::config("trip window end must follow its start"));
                }
            }
        }
        if let Some(base) = self.base_interval()? {
            if let Some(h) = self.horizons.iter().find(|&&h| h % base != 0) {
                return Err(Error::config(format!(
                    "horizon {h} is not a multiple of the {base}-minute data"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON config, ignoring the output location.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        Ok(sha256_hex(&serde_json::to_vec(&canonical)?))
    }
}

/// Loads source and target flows once for aggregation-based sources.
pub struct FlowStore {
    base: Option<(FlowMatrix, FlowMatrix)>,
}

impl FlowStore {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let base = match &config.data {
            DataSource::Synth(s) => {
                let out = generate_multimodal(s)?;
                Some((out.source, out.target))
            }
            DataSource::Flows { source, target } => {
                Some((read_flow_matrix(source)?, read_flow_matrix(target)?))
            }
            DataSource::Trips { .. } => None,
        };
        Ok(Self { base })
    }

    /// Unfiltered source and target flows at `horizon` minutes.
    pub fn at_horizon(
        &self,
        config: &ExperimentConfig,
        horizon: u32,
    ) -> Result<(FlowMatrix, FlowMatrix)> {
        if let Some((source, target)) = &self.base {
            let agg =
                |flow: &FlowMatrix| flow.aggregate((horizon / flow.interval_minutes) as usize);
            return Ok((agg(source)?, agg(target)?));
        }
        let DataSource::Trips {
            trips,
            stations,
            schema,
            start,
            end,
            snap_radius_m,
            source_mode,
            target_mode,
        } = &config.data
        else {
            return Err(Error::Internal("flow store has no data".into()));
        };
        let (records, _) = parse_trips(fs::File::open(trips)?, schema)?;
        let objects = parse_stations(fs::File::open(stations)?)?;
        let bin = |mode: &Mode| {
            let request = BinRequest {
                mode: mode.clone(),
                interval_minutes: horizon,
                start: *start,
                end: *end,
                direction: config.direction,
                snap_radius_m: *snap_radius_m,
            };
            bin_flows(&records, &objects, &request).map(|(flow, _)| flow)
        };
        Ok((bin(source_mode)?, bin(target_mode)?))
    }
}

/// A trained network with everything needed to audit or reuse it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: NetSpec,
    pub scaling: Scaling,
    pub params: ModelParams,
    pub trace: TrainTrace,
    pub plan: TransferPlan,
    pub seed: u64,
    pub trainable_params: usize,
}

impl TrainedModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            scaling: self.scaling.clone(),
            params: self.params.clone(),
        }
    }
}

/// Everything produced for one horizon.
#[derive(Debug, Clone)]
pub struct HorizonOutcome {
    pub horizon: u32,
    pub rows: Vec<MetricsRow>,
    pub source_model: Option<TrainedModel>,
    pub models: BTreeMap<Strategy, TrainedModel>,
    pub seeds: BTreeMap<String, u64>,
    /// Test-set predictions per producer on the original scale.
    pub predictions: BTreeMap<Producer, Array2<f64>>,
    pub test_targets: Array2<f64>,
}

impl HorizonOutcome {
    pub fn mae(&self, producer: Producer) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.producer == producer.label())
            .map(|r| r.mae)
    }
}

fn filtered(flow: FlowMatrix, threshold: Option<f64>) -> Result<FlowMatrix> {
    match threshold {
        Some(t) => filter_stations(&flow, t),
        None => Ok(flow),
    }
}

/// A target-mode matrix split into windows, with the training history and
/// normalization every producer shares.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub flow: FlowMatrix,
    pub split: DatasetSplit,
    pub windows: WindowSplits,
    /// Train bins available to target-mode fits.
    pub history: Range<usize>,
    /// Train windows whose targets fall inside `history`.
    pub train: WindowSet,
    pub scaling: Scaling,
}

impl TargetData {
    pub fn prepare(config: &ExperimentConfig, flow: FlowMatrix) -> Result<Self> {
        let seq_len = config.seq_len;
        let (split, windows) = split_and_window(&flow, config.ratios(), seq_len)?;
        let history_end = config.target_history_days.map_or(split.train.end, |d| {
            ((d * flow.bins_per_day() as f64).floor() as usize).min(split.train.end)
        });
        let history = split.train.start..history_end;
        if history.end <= seq_len + 1 {
            return Err(Error::data(format!(
                "target history of {} bins leaves no training windows of length {seq_len}",
                history.end
            )));
        }
        let train = windows.train.restrict(&(seq_len..history.end));
        let scaling = Scaling::shared(Normalizer::fit(&flow.to_f64(), history.clone())?);
        Ok(Self {
            flow,
            split,
            windows,
            history,
            train,
            scaling,
        })
    }

    pub fn test_bins(&self) -> Vec<usize> {
        self.windows.test.target_bins()
    }

    pub fn test_targets(&self) -> Array2<f64> {
        self.windows.test.targets()
    }

    /// Split-brain windows (source inputs, target outputs) on this split, plus
    /// the matching scaling.
    pub fn split_brain(
        &self,
        source: &FlowMatrix,
        seq_len: usize,
    ) -> Result<(WindowSplits, WindowSet, Scaling)> {
        let all = build_sb_samples(source, &self.flow, seq_len)?;
        if all.target_bins() != (seq_len..self.flow.n_bins()).collect::<Vec<_>>() {
            return Err(Error::data(
                "split-brain needs source flows covering the whole target range",
            ));
        }
        let (aligned_source, _) = align_flows(source, &self.flow)?;
        let windows = all.partition(&self.split);
        let train = windows.train.restrict(&(seq_len..self.history.end));
        let scaling = Scaling {
            input: Normalizer::fit(&aligned_source.to_f64(), self.history.clone())?,
            output: self.scaling.output.clone(),
        };
        Ok((windows, train, scaling))
    }
}

/// Trains the source-mode Base model on the source's own chronological split.
pub fn train_source(
    config: &ExperimentConfig,
    source: &FlowMatrix,
    seed: u64,
) -> Result<TrainedModel> {
    let (split, windows) = split_and_window(source, config.ratios(), config.seq_len)?;
    let scaling = Scaling::shared(Normalizer::fit(&source.to_f64(), split.train.clone())?);
    let n = source.n_stations();
    let spec = NetSpec::new(n, n, config.hidden_layers.clone(), config.seq_len)?;
    let cfg = config.train.with_seed(seed);
    let (params, trace) = train(&spec, &windows.train, &windows.val, &scaling, &cfg, None)?;
    Ok(TrainedModel {
        trainable_params: cfg.trainable_params(&params),
        spec,
        scaling,
        params,
        trace,
        plan: TransferPlan::empty(Strategy::Base),
        seed,
    })
}

/// Trains one target model and predicts the test segment on the original scale.
///
/// FT and FTF need `source_model`; SB needs `source_flow`.
pub fn train_target(
    config: &ExperimentConfig,
    strategy: Strategy,
    data: &TargetData,
    source_model: Option<&ModelParams>,
    source_flow: Option<&FlowMatrix>,
    seed: u64,
) -> Result<(TrainedModel, Array2<f64>)> {
    let mut settings = config.train.clone();
    if strategy.needs_source_model() {
        settings.epochs = config.ft_epochs.unwrap_or(settings.epochs);
    }
    let cfg = settings.with_seed(seed);
    let n_target = data.flow.n_stations();
    let hidden = config.hidden_layers.clone();
    let (spec, scaling, train_ws, val_ws, test_ws) = if strategy == Strategy::SB {
        let source =
            source_flow.ok_or_else(|| Error::config("split-brain needs source-mode flows"))?;
        let (windows, train_ws, scaling) = data.split_brain(source, config.seq_len)?;
        let spec = NetSpec::new(source.n_stations(), n_target, hidden, config.seq_len)?;
        (spec, scaling, train_ws, windows.val, windows.test)
    } else {
        let spec = NetSpec::new(n_target, n_target, hidden, config.seq_len)?;
        (
            spec,
            data.scaling.clone(),
            data.train.clone(),
            data.windows.val.clone(),
            data.windows.test.clone(),
        )
    };
    let (params, trace, plan) = train_with_strategy(
        strategy,
        source_model,
        &spec,
        &train_ws,
        &val_ws,
        &scaling,
        &cfg,
    )?;
    let pred = predict(&params, &test_ws, &scaling, true)?;
    let mut frozen_cfg = cfg;
    frozen_cfg.freeze = plan.frozen.clone();
    let model = TrainedModel {
        trainable_params: frozen_cfg.trainable_params(&params),
        spec,
        scaling,
        params,
        trace,
        plan,
        seed,
    };
    Ok((model, pred))
}

/// Test-segment predictions of a classical baseline fitted on the history.
pub fn run_baseline(
    config: &ExperimentConfig,
    baseline: Baseline,
    data: &TargetData,
    seed: u64,
) -> Result<Array2<f64>> {
    let values = data.flow.to_f64();
    let test_bins = data.test_bins();
    match baseline {
        Baseline::OneStep => one_step(&values, &test_bins),
        Baseline::HA => {
            historical_average(&data.flow, data.history.clone(), &test_bins).map(|p| p.values)
        }
        Baseline::VAR => var_fit(
            &values,
            data.history.clone(),
            config.var_order,
            config.var_ridge,
        )
        .and_then(|m| var_predict(&m, &values, &test_bins)),
        Baseline::RF => {
            let forest = ForestConfig {
                seed,
                ..config.forest.clone()
            };
            rf_fit(&data.train, &forest).and_then(|m| rf_predict(&m, &data.windows.test))
        }
    }
}

/// Test-segment predictions of a stored model; pass `source_flow` for
/// split-brain checkpoints.
pub fn predict_checkpoint(
    checkpoint: &Checkpoint,
    data: &TargetData,
    source_flow: Option<&FlowMatrix>,
) -> Result<Array2<f64>> {
    let seq_len = checkpoint.spec.seq_len;
    let test = match source_flow {
        Some(source) => data.split_brain(source, seq_len)?.0.test,
        None => data.windows.test.clone(),
    };
    if test.seq_len != seq_len {
        return Err(Error::config(format!(
            "checkpoint expects windows of length {seq_len}, data was windowed with {}",
            test.seq_len
        )));
    }
    predict(&checkpoint.params, &test, &checkpoint.scaling, true)
}

/// Runs every configured strategy and baseline at one horizon.
///
/// Source and target flows are filtered, split chronologically and
/// normalized with train-segment statistics. Target training windows and
/// baseline fits are limited to the configured history; every producer is
/// scored on the same test targets.
pub fn run_horizon(
    config: &ExperimentConfig,
    horizon: u32,
    source: FlowMatrix,
    target: FlowMatrix,
    config_hash: &str,
) -> Result<HorizonOutcome> {
    let master = config.seed()?;
    let source =
        filtered(source, config.filter_threshold).map_err(|e| e.in_stage("filter source"))?;
    let target =
        filtered(target, config.filter_threshold).map_err(|e| e.in_stage("filter target"))?;
    let target_label = target.mode.to_string();
    let h = horizon.to_string();
    let seed_for = |role: &str| derive_seed(master, &["train", role, &target_label, &h]);
    let data = TargetData::prepare(config, target).map_err(|e| e.in_stage("split"))?;

    let mut seeds = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    let mut models = BTreeMap::new();

    let source_model = if config.strategies.iter().any(|s| s.needs_source_model()) {
        let seed = seed_for("source");
        seeds.insert(format!("{h}/source"), seed);
        Some(train_source(config, &source, seed).map_err(|e| e.in_stage("train source"))?)
    } else {
        None
    };

    for &strategy in &config.strategies {
        let seed = seed_for(strategy.label());
        seeds.insert(format!("{h}/{strategy}"), seed);
        let (model, pred) = train_target(
            config,
            strategy,
            &data,
            source_model.as_ref().map(|m| &m.params),
            Some(&source),
            seed,
        )
        .map_err(|e| e.in_stage(format!("train {strategy}")))?;
        predictions.insert(producer_of(strategy), pred);
        models.insert(strategy, model);
    }

    for &baseline in &config.baselines {
        let producer = baseline.producer();
        let seed = derive_seed(master, &["baseline", producer.label(), &target_label, &h]);
        seeds.insert(format!("{h}/{}", producer.label()), seed);
        let pred = run_baseline(config, baseline, &data, seed)
            .map_err(|e| e.in_stage(format!("baseline {}", producer.label())))?;
        predictions.insert(producer, pred);
    }

    let observed = data.test_targets();
    let mut rows = Vec::with_capacity(predictions.len());
    for (&producer, pred) in &predictions {
        let scores = compute_scores(&observed, pred)?;
        rows.push(MetricsRow::new(
            target_label.clone(),
            horizon,
            producer,
            scores,
            data.flow.n_stations(),
            observed.nrows(),
            seeds[&format!("{h}/{}", producer.label())],
            config_hash,
        ));
    }
    attach_improving_rates(&mut rows)?;
    Ok(HorizonOutcome {
        horizon,
        rows,
        source_model,
        models,
        seeds,
        predictions,
        test_targets: observed,
    })
}

fn producer_of(strategy: Strategy) -> Producer {
    match strategy {
        Strategy::Base => Producer::Base,
        Strategy::FT => Producer::FT,
        Strategy::FTF => Producer::FTF,
        Strategy::SB => Producer::SB,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub horizon_minutes: u32,
    pub strategy: Strategy,
    pub transferred: Vec<String>,
    pub frozen: Vec<String>,
    pub source_checkpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: BTreeMap<String, String>,
    pub plans: Vec<PlanRecord>,
    pub error: Option<String>,
}

pub const REPORT_FILES: [&str; 3] = ["report.json", "report.csv", "report.txt"];

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub manifest: Manifest,
    pub horizons: Vec<HorizonOutcome>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn record_horizon(
    config: &ExperimentConfig,
    outcome: &HorizonOutcome,
    manifest: &mut Manifest,
) -> Result<()> {
    let h = outcome.horizon;
    manifest.seeds.extend(outcome.seeds.clone());
    let ckpt_dir = config.output_dir.join("checkpoints");
    let mut store = |name: String, model: &TrainedModel| -> Result<String> {
        let ckpt = model.checkpoint();
        let hash = if config.write_checkpoints {
            fs::create_dir_all(&ckpt_dir)?;
            crate::netcore::write_checkpoint(&ckpt, &ckpt_dir.join(format!("{name}.ckpt")))?
        } else {
            ckpt.hash()?
        };
        manifest.checkpoints.insert(name, hash.clone());
        Ok(hash)
    };
    let source_hash = match &outcome.source_model {
        Some(m) => Some(store(format!("{h}min_source"), m)?),
        None => None,
    };
    for (strategy, model) in &outcome.models {
        store(format!("{h}min_{strategy}"), model)?;
        manifest.plans.push(PlanRecord {
            horizon_minutes: h,
            strategy: *strategy,
            transferred: model
                .plan
                .transferable
                .iter()
                .map(ToString::to_string)
                .collect(),
            frozen: model.plan.frozen.iter().map(ToString::to_string).collect(),
            source_checkpoint: strategy
                .needs_source_model()
                .then(|| source_hash.clone())
                .flatten(),
        });
    }
    Ok(())
}

fn run_inner(config: &ExperimentConfig, manifest: &mut Manifest) -> Result<RunOutcome> {
    let store = FlowStore::load(config).map_err(|e| e.in_stage("load flows"))?;
    let mut rows = Vec::new();
    let mut horizons = Vec::new();
    for &h in &config.horizons {
        let stage = format!("{h}-minute horizon");
        let (source, target) = store
            .at_horizon(config, h)
            .map_err(|e| e.in_stage(&stage))?;
        let outcome = run_horizon(config, h, source, target, &manifest.config_hash)
            .map_err(|e| e.in_stage(&stage))?;
        record_horizon(config, &outcome, manifest)?;
        rows.extend(outcome.rows.iter().cloned());
        horizons.push(outcome);
    }
    let report = render_report(&rows, ReportLayout::Both)?;
    fs::write(config.output_dir.join("report.json"), &report.json)?;
    fs::write(config.output_dir.join("report.csv"), &report.csv)?;
    fs::write(config.output_dir.join("report.txt"), &report.text)?;
    Ok(RunOutcome {
        rows,
        manifest: manifest.clone(),
        horizons,
    })
}

/// Validates the config, runs every horizon and writes the reports and
/// `manifest.json` into the output directory.
///
/// On failure the report files are removed and the manifest is marked
/// incomplete with the failing stage.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let mut manifest = Manifest {
        status: "running".into(),
        config_hash: config.hash()?,
        master_seed: config.seed()?,
        ..Manifest::default()
    };
    let manifest_path = config.output_dir.join("manifest.json");
    match run_inner(config, &mut manifest) {
        Ok(mut outcome) => {
            manifest.status = "complete".into();
            write_json(&manifest_path, &manifest)?;
            outcome.manifest = manifest;
            Ok(outcome)
        }
        Err(err) => {
            for name in REPORT_FILES {
                let _ = fs::remove_file(config.output_dir.join(name));
            }
            manifest.status = "incomplete".into();
            manifest.error = Some(err.to_string());
            let _ = write_json(&manifest_path, &manifest);
            Err(err)
        }
    }
}

/// Candidate architectures for the hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub layers: Vec<usize>,
    pub units: Vec<usize>,
    #[serde(default)]
    pub seq_lens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub layers: usize,
    pub units: usize,
    pub seq_len: usize,
    pub n_params: usize,
    pub val_mae: f64,
    pub selected: bool,
}

/// Index of the row with minimal validation MAE, ties going to fewer parameters.
pub fn select_best(rows: &[GridRow]) -> Option<usize> {
    (0..rows.len()).min_by(|&a, &b| {
        rows[a]
            .val_mae
            .total_cmp(&rows[b].val_mae)
            .then(rows[a].n_params.cmp(&rows[b].n_params))
    })
}

/// Trains a target-mode Base model per grid point at the first horizon and
/// scores it on the validation segment (original scale).
pub fn grid_search(config: &ExperimentConfig, grid: &Grid) -> Result<Vec<GridRow>> {
    config.validate()?;
    let seq_lens = if grid.seq_lens.is_empty() {
        vec![config.seq_len]
    } else {
        grid.seq_lens.clone()
    };
    if grid.layers.is_empty() || grid.units.is_empty() {
        return Err(Error::config(
            "grid search needs at least one layer count and one unit count",
        ));
    }
    let master = config.seed()?;
    let horizon = config.horizons[0];
    let store = FlowStore::load(config)?;
    let (_, target) = store.at_horizon(config, horizon)?;
    let target = filtered(target, config.filter_threshold)?;
    let mut rows = Vec::new();
    for &seq_len in &seq_lens {
        let data = TargetData::prepare(
            &ExperimentConfig {
                seq_len,
                ..config.clone()
            },
            target.clone(),
        )?;
        for &layers in &grid.layers {
            for &units in &grid.units {
                let spec = NetSpec::new(
                    target.n_stations(),
                    target.n_stations(),
                    vec![units; layers],
                    seq_len,
                )?;
                let seed = derive_seed(
                    master,
                    &[
                        "grid",
                        &layers.to_string(),
                        &units.to_string(),
                        &seq_len.to_string(),
                    ],
                );
                let cfg = config.train.with_seed(seed);
                let (params, _) = train(
                    &spec,
                    &data.train,
                    &data.windows.val,
                    &data.scaling,
                    &cfg,
                    None,
                )?;
                let pred = predict(&params, &data.windows.val, &data.scaling, true)?;
                let val_mae = compute_scores(&data.windows.val.targets(), &pred)?.mae;
                rows.push(GridRow {
                    layers,
                    units,
                    seq_len,
                    n_params: spec.n_params(),
                    val_mae,
                    selected: false,
                });
            }
        }
    }
    if let Some(best) = select_best(&rows) {
        rows[best].selected = true;
    }
    Ok(rows)
}
