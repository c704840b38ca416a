use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use crossmodal::experiment::{
    grid_search, predict_checkpoint, run as run_experiment, run_baseline, train_target,
    ExperimentConfig, Grid, TargetData,
};
use crossmodal::flowdata::{
    bin_flows, filter_stations, parse_stations, parse_trips, read_flow_matrix, write_flow_matrix,
    BinRequest, FlowMatrix, TripSchema,
};
use crossmodal::metrics::{
    attach_improving_rates, compute_scores, render_report, MetricsRow, Producer,
};
use crossmodal::netcore::{gradient_check, read_checkpoint, write_checkpoint, Checkpoint, NetSpec};
use crossmodal::synthgen::{correlation_matrix, generate_multimodal, SynthConfig};
use crossmodal::transfer::Strategy;
use crossmodal::{Error, Result};
use serde_json::json;

use crate::{
    EvaluateArgs, GradcheckArgs, GridArgs, PrepareArgs, ReportArgs, RunArgs, SynthArgs, TrainArgs,
    TransferArgs,
};

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush())
    {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(&format!("{}\n", format_args!($($arg)*)))?
    };
}

macro_rules! out {
    ($($arg:tt)*) => {
        emit(&format!($($arg)*))?
    };
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn load_flow(path: &Path) -> Result<FlowMatrix> {
    if !path.is_file() {
        return Err(Error::config(format!(
            "flow file {} does not exist",
            path.display()
        )));
    }
    read_flow_matrix(path)
}

/// Loads a flow matrix and applies the configured station filter, as `run` does.
fn load_filtered(path: &Path, config: &ExperimentConfig) -> Result<FlowMatrix> {
    let flow = load_flow(path)?;
    match config.filter_threshold {
        Some(t) => filter_stations(&flow, t),
        None => Ok(flow),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::config(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    read_checkpoint(path)
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    for path in [&args.trips, &args.stations] {
        if !path.is_file() {
            return Err(Error::config(format!(
                "input file {} does not exist",
                path.display()
            )));
        }
    }
    let (trips, rejected) = parse_trips(fs::File::open(&args.trips)?, &TripSchema::default())?;
    let stations = parse_stations(fs::File::open(&args.stations)?)?;
    let request = BinRequest {
        mode: args.mode,
        interval_minutes: args.interval,
        start: args.start,
        end: args.end,
        direction: args.direction.into(),
        snap_radius_m: args.snap_radius,
    };
    let (flow, stats) = bin_flows(&trips, &stations, &request)?;
    let binned = flow.n_stations();
    let flow = if args.no_filter {
        flow
    } else {
        filter_stations(&flow, args.filter_threshold)?
    };
    write_flow_matrix(&flow, &args.out)?;
    print_json(&json!({
        "output": args.out,
        "bins": flow.n_bins(),
        "stations": flow.n_stations(),
        "stations_filtered_out": binned - flow.n_stations(),
        "rejected_rows": rejected,
        "binning": stats,
    }))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("invalid synth config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    config.seed = args.seed;
    if let Some(v) = args.days {
        config.days = v;
    }
    if let Some(v) = args.interval {
        config.interval_minutes = v;
    }
    if let Some(v) = args.source_stations {
        config.source_stations = v;
    }
    if let Some(v) = args.target_stations {
        config.target_stations = v;
    }
    if let Some(v) = args.base_rate {
        config.base_rate = v;
    }
    if let Some(v) = args.coupling {
        config.coupling = v;
    }
    let out = generate_multimodal(&config)?;
    fs::create_dir_all(&args.out_dir)?;
    write_flow_matrix(&out.source, &args.out_dir.join("source.csv"))?;
    write_flow_matrix(&out.target, &args.out_dir.join("target.csv"))?;
    write_json(&args.out_dir.join("truth.json"), &out.truth)?;
    write_json(
        &args.out_dir.join("correlation.json"),
        &correlation_matrix(&out.source, &out.target)?,
    )?;
    write_json(&args.out_dir.join("synth_config.json"), &config)?;
    print_json(&json!({
        "out_dir": args.out_dir,
        "bins": out.source.n_bins(),
        "source_stations": out.source.n_stations(),
        "target_stations": out.target.n_stations(),
        "linked_correlation": crossmodal::synthgen::linked_correlation(&out),
    }))
}

fn model_summary(
    path: &Path,
    hash: &str,
    model: &crossmodal::experiment::TrainedModel,
) -> serde_json::Value {
    json!({
        "checkpoint": path,
        "sha256": hash,
        "seed": model.seed,
        "n_params": model.params.n_params(),
        "trainable_params": model.trainable_params,
        "initial_train_loss": model.trace.initial_train_loss,
        "final_train_loss": model.trace.train_loss.last(),
        "final_val_loss": model.trace.val_loss.last().filter(|v| v.is_finite()),
        "transferred": model.plan.transferable.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "frozen": model.plan.frozen.iter().map(ToString::to_string).collect::<Vec<_>>(),
    })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = args.model.load()?;
    let flow = load_filtered(&args.flow, &config)?;
    let data = TargetData::prepare(&config, flow)?;
    let (model, _) = train_target(&config, Strategy::Base, &data, None, None, args.seed)?;
    let hash = write_checkpoint(&model.checkpoint(), &args.out)?;
    print_json(&model_summary(&args.out, &hash, &model))
}

pub fn transfer(args: TransferArgs) -> Result<()> {
    let config = args.model.load()?;
    let flow = load_filtered(&args.flow, &config)?;
    let source_ckpt = match (&args.source_checkpoint, args.strategy.needs_source_model()) {
        (Some(path), true) => Some(load_checkpoint(path)?),
        (None, true) => {
            return Err(Error::config(format!(
                "{} needs --source-checkpoint",
                args.strategy
            )))
        }
        _ => None,
    };
    let source_flow = match (&args.source_flow, args.strategy) {
        (Some(path), Strategy::SB) => Some(load_filtered(path, &config)?),
        (None, Strategy::SB) => return Err(Error::config("SB needs --source-flow")),
        _ => None,
    };
    let data = TargetData::prepare(&config, flow)?;
    let (model, _) = train_target(
        &config,
        args.strategy,
        &data,
        source_ckpt.as_ref().map(|c| &c.params),
        source_flow.as_ref(),
        args.seed,
    )?;
    let hash = write_checkpoint(&model.checkpoint(), &args.out)?;
    let mut summary = model_summary(&args.out, &hash, &model);
    summary["strategy"] = json!(args.strategy);
    if let Some(ckpt) = &source_ckpt {
        summary["source_checkpoint_sha256"] = json!(ckpt.hash()?);
    }
    print_json(&summary)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut config = args.model.load()?;
    let flow = load_filtered(&args.flow, &config)?;
    let source_flow = args
        .source_flow
        .as_deref()
        .map(|p| load_filtered(p, &config))
        .transpose()?;
    let (producer, pred, data) = if let Some(path) = &args.checkpoint {
        let ckpt = load_checkpoint(path)?;
        config.seq_len = ckpt.spec.seq_len;
        let data = TargetData::prepare(&config, flow)?;
        let producer = Producer::parse(&args.producer)
            .ok_or_else(|| Error::config(format!("unknown producer label {:?}", args.producer)))?;
        (
            producer,
            predict_checkpoint(&ckpt, &data, source_flow.as_ref())?,
            data,
        )
    } else {
        let baseline = args
            .baseline
            .ok_or_else(|| Error::config("pass --checkpoint or --baseline"))?;
        let data = TargetData::prepare(&config, flow)?;
        (
            baseline.producer(),
            run_baseline(&config, baseline, &data, args.seed)?,
            data,
        )
    };
    let observed = data.test_targets();
    let scores = compute_scores(&observed, &pred)?;
    let row = MetricsRow::new(
        data.flow.mode.to_string(),
        data.flow.interval_minutes,
        producer,
        scores,
        data.flow.n_stations(),
        observed.nrows(),
        args.seed,
        config.hash()?,
    );
    match &args.out {
        Some(path) => write_json(path, &vec![row]),
        None => {
            outln!("{}", serde_json::to_string_pretty(&vec![row])?);
            Ok(())
        }
    }
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    for path in &args.rows {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read rows {}: {e}", path.display())))?;
        let mut chunk: Vec<MetricsRow> = serde_json::from_str(&text)?;
        rows.append(&mut chunk);
    }
    attach_improving_rates(&mut rows)?;
    let rendered = render_report(&rows, args.layout.into())?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("report.json"), &rendered.json)?;
    fs::write(args.out_dir.join("report.csv"), &rendered.csv)?;
    fs::write(args.out_dir.join("report.txt"), &rendered.text)?;
    out!("{}", rendered.text);
    Ok(())
}

pub fn gridsearch(args: GridArgs) -> Result<()> {
    let config = args.experiment.load(args.seed)?;
    let grid = Grid {
        layers: args.layers,
        units: args.units,
        seq_lens: args.seq_lens,
    };
    let rows = grid_search(&config, &grid)?;
    outln!(
        "{:>7}{:>7}{:>5}{:>10}{:>12}",
        "layers",
        "units",
        "L",
        "params",
        "val MAE"
    );
    for r in &rows {
        let mark = if r.selected { "  *" } else { "" };
        outln!(
            "{:>7}{:>7}{:>5}{:>10}{:>12.4}{mark}",
            r.layers,
            r.units,
            r.seq_len,
            r.n_params,
            r.val_mae
        );
    }
    if let Some(path) = &args.out {
        write_json(path, &rows)?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let spec = NetSpec::new(args.inputs, args.outputs, args.hidden, args.seq_len)?;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in args.first_seed..args.first_seed + args.seeds {
        let report = gradient_check(&spec, seed, args.step)?;
        worst = worst.max(report.max_rel_error);
        let verdict = if report.passes(args.tolerance) {
            "ok"
        } else {
            "FAIL"
        };
        outln!(
            "seed {seed:>4}  max relative error {:.3e}  {verdict}",
            report.max_rel_error
        );
        if !report.passes(args.tolerance) {
            failures.push(format!(
                "seed {seed}: {:?}",
                report.failing_blocks(args.tolerance)
            ));
        }
    }
    outln!("worst {worst:.3e} (tolerance {:.1e})", args.tolerance);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "gradient check failed for {}",
            failures.join("; ")
        )))
    }
}

pub fn run(args: RunArgs) -> Result<()> {
    let config = args.experiment.load(args.seed)?;
    let outcome = run_experiment(&config)?;
    let text = fs::read_to_string(config.output_dir.join("report.txt"))?;
    out!("{text}");
    eprintln!(
        "wrote {} rows to {} (config {})",
        outcome.rows.len(),
        config.output_dir.display(),
        outcome.manifest.config_hash
    );
    Ok(())
}
