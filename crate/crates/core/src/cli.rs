//! The `procpredict` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failed simulation.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bundle::{Bundle, ModelVariant};
use crate::catalog::Catalog;
use crate::clustering::{RoundEntry, SelectionConfig};
use crate::error::Error;
use crate::estimator::{estimate_initial_path, select_optimizations, EstimatorConfig, OptimizationPlan};
use crate::mapping::{coefficient_matrix, write_matrix_csv, DEFAULT_ACCEPT_THRESHOLD};
use crate::par::{self, Parallelism};
use crate::sim::{run_simulation, sweep_confidence, write_results_csv, SimConfig, SimResult, Strategy};
use crate::trace::generate::{
    branchy_catalog, generate_branchy_like, generate_neworder_like, generate_tatp_like, neworder_catalog, tatp_catalog,
    BranchyConfig, ItemCounts, NewOrderConfig, TatpConfig,
};
use crate::trace::{load_trace, save_trace, Workload};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
    #[error("simulation FAILED: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "procpredict",
    version,
    about = "Predict and simulate stored-procedure transactions"
)]
pub struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace and its catalog.
    Generate(GenerateArgs),
    /// Coefficient matrix of parameter mappings, as CSV.
    InferMappings(InferArgs),
    /// Build mappings and one global model per procedure into a bundle.
    BuildModels(BuildArgs),
    /// Add clustered models to a bundle by feature selection.
    PartitionModels(PartitionArgs),
    /// Per-record initial estimates and optimization plans, as CSV.
    Estimate(EstimateArgs),
    /// Prediction accuracy of global and partitioned models.
    Evaluate(EvaluateArgs),
    /// Cluster throughput under execution strategies.
    Simulate(SimulateArgs),
    /// Throughput across confidence thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Benchmark {
    Tpcc,
    Tatp,
    Branchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Global,
    Partitioned,
}

impl From<VariantArg> for ModelVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Global => ModelVariant::Global,
            VariantArg::Partitioned => ModelVariant::Partitioned,
        }
    }
}

#[derive(Debug, Args)]
pub struct Input {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub benchmark: Benchmark,
    #[arg(long, default_value_t = 2)]
    pub partitions: u32,
    #[arg(long, default_value_t = 1000)]
    pub txns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Catalog output (JSON).
    #[arg(long)]
    pub catalog: PathBuf,
    /// tpcc: warehouse count (default one per partition).
    #[arg(long)]
    pub warehouses: Option<u32>,
    /// tpcc: items per order, `MIN-MAX` or `N:W,N:W,...`.
    #[arg(long)]
    pub items: Option<String>,
    /// tpcc: probability of one remote stock item.
    #[arg(long)]
    pub remote: Option<f64>,
    /// Abort probability (tpcc NewOrder, tatp InsertCallForwarding,
    /// branchy watch branch).
    #[arg(long)]
    pub abort: Option<f64>,
    /// tpcc: share of Payment requests.
    #[arg(long)]
    pub payment: Option<f64>,
    /// branchy: probability of the bid branch.
    #[arg(long)]
    pub bid: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: Input,
    /// Acceptance threshold for retained entries.
    #[arg(long, default_value_t = DEFAULT_ACCEPT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub input: Input,
    /// Mapping acceptance threshold.
    #[arg(long, default_value_t = DEFAULT_ACCEPT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Confidence threshold used while scoring feature sets.
    #[arg(long, default_value_t = crate::estimator::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle output; may be the input bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-round cost table.
    #[arg(long)]
    pub rounds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = crate::estimator::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Partitioned)]
    pub variant: VariantArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: Input,
    /// Evaluate the whole trace with this bundle. Without it, models are
    /// built from the first half of the trace and scored on the rest.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = crate::estimator::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Bundle for the Houdini strategies. Built from `--train` when absent
    /// or built for another partition count.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Trace to learn models from (defaults to `--trace`).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub duration: u64,
    /// Disable undo by ignoring abort probabilities. Unsafe; exercises the
    /// failure detector.
    #[arg(long, hide = true)]
    pub no_abort_cutoff: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Comma-separated strategies, or `all`.
    #[arg(long, default_value = "all")]
    pub strategies: String,
    /// Comma-separated partition counts (defaults to the catalog's).
    #[arg(long, value_delimiter = ',')]
    pub partitions: Vec<u32>,
    #[arg(long, default_value_t = crate::estimator::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Event log of the last run, as JSON lines (single strategy and P).
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value = "houdini_partitioned")]
    pub strategy: String,
    /// Comma-separated thresholds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
    )]
    pub threshold: Vec<f64>,
    #[arg(long)]
    pub partitions: Option<u32>,
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    };
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::InferMappings(a) => infer(a),
        Command::BuildModels(a) => build(a, mode),
        Command::PartitionModels(a) => partition(a, mode),
        Command::Estimate(a) => estimate(a, mode),
        Command::Evaluate(a) => evaluate(a, mode),
        Command::Simulate(a) => simulate(a, mode),
        Command::Sweep(a) => sweep(a, mode),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_input(input: &Input) -> CliResult<(Catalog, Workload)> {
    let catalog = Catalog::load(&input.catalog)?;
    let trace = load_trace(&input.trace, &catalog)?;
    Ok((catalog, trace))
}

fn check_threshold(t: f64) -> CliResult {
    if !(0.0..=1.0).contains(&t) {
        return Err(CliError::Usage(format!("threshold must be in [0, 1], got {t}")));
    }
    Ok(())
}

fn parse_items(s: &str) -> CliResult<ItemCounts> {
    let bad = || CliError::Usage(format!("bad --items `{s}`: expected MIN-MAX or N:W,N:W"));
    if let Some((a, b)) = s.split_once('-') {
        let min = a.trim().parse().map_err(|_| bad())?;
        let max = b.trim().parse().map_err(|_| bad())?;
        return Ok(ItemCounts::Uniform { min, max });
    }
    let mut w = Vec::new();
    for part in s.split(',') {
        let (n, p) = part.split_once(':').ok_or_else(bad)?;
        w.push((
            n.trim().parse().map_err(|_| bad())?,
            p.trim().parse().map_err(|_| bad())?,
        ));
    }
    Ok(ItemCounts::Weighted(w))
}

fn generate(a: GenerateArgs) -> CliResult {
    let (catalog, workload) = match a.benchmark {
        Benchmark::Tpcc => {
            let d = NewOrderConfig::new(a.partitions);
            let cfg = NewOrderConfig {
                num_txns: a.txns,
                warehouses: a.warehouses.unwrap_or(d.warehouses),
                item_counts: a
                    .items
                    .as_deref()
                    .map(parse_items)
                    .transpose()?
                    .unwrap_or(d.item_counts.clone()),
                remote_warehouse_probability: a.remote.unwrap_or(d.remote_warehouse_probability),
                abort_probability: a.abort.unwrap_or(d.abort_probability),
                payment_fraction: a.payment.unwrap_or(d.payment_fraction),
                ..d
            };
            (neworder_catalog(a.partitions), generate_neworder_like(&cfg, a.seed)?)
        }
        Benchmark::Tatp => {
            let d = TatpConfig::new(a.partitions);
            let cfg = TatpConfig {
                num_txns: a.txns,
                insert_abort_probability: a.abort.unwrap_or(d.insert_abort_probability),
                ..d
            };
            (tatp_catalog(a.partitions), generate_tatp_like(&cfg, a.seed)?)
        }
        Benchmark::Branchy => {
            let d = BranchyConfig::new(a.partitions);
            let cfg = BranchyConfig {
                num_txns: a.txns,
                bid_probability: a.bid.unwrap_or(d.bid_probability),
                abort_probability: a.abort.unwrap_or(d.abort_probability),
                ..d
            };
            (branchy_catalog(a.partitions), generate_branchy_like(&cfg, a.seed)?)
        }
    };
    catalog.save(&a.catalog)?;
    save_trace(&workload, &a.out)?;
    log::info!("wrote {} records", workload.len());
    Ok(())
}

fn infer(a: InferArgs) -> CliResult {
    check_threshold(a.threshold)?;
    let (catalog, trace) = load_input(&a.input)?;
    let matrices: BTreeMap<String, _> = catalog
        .procedures
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                coefficient_matrix(trace.records.iter().filter(|r| r.proc_name == p.name)),
            )
        })
        .collect();
    let mut out = output(a.out.as_deref())?;
    write_matrix_csv(&mut out, &matrices, &catalog, a.threshold)?;
    out.flush()?;
    Ok(())
}

fn build(a: BuildArgs, mode: Parallelism) -> CliResult {
    check_threshold(a.threshold)?;
    let (catalog, trace) = load_input(&a.input)?;
    Bundle::build(&trace.records, &catalog, a.threshold, mode)?.save(&a.out)?;
    Ok(())
}

fn selection_config(threshold: f64, mode: Parallelism) -> SelectionConfig {
    SelectionConfig {
        estimator: EstimatorConfig::with_threshold(threshold),
        mode,
        ..SelectionConfig::default()
    }
}

fn partition(a: PartitionArgs, mode: Parallelism) -> CliResult {
    check_threshold(a.threshold)?;
    let (catalog, trace) = load_input(&a.input)?;
    let mut bundle = Bundle::load(&a.bundle)?;
    bundle.check_catalog(&catalog)?;
    let rounds = bundle.partition(&trace.records, &catalog, &selection_config(a.threshold, mode), a.seed)?;
    bundle.save(&a.out)?;
    if let Some(path) = &a.rounds {
        let mut out = output(Some(path))?;
        write_rounds_csv(&mut out, &rounds, &bundle, &catalog)?;
        out.flush()?;
    }
    Ok(())
}

pub fn write_rounds_csv(
    out: &mut impl Write,
    rounds: &BTreeMap<String, Vec<RoundEntry>>,
    bundle: &Bundle,
    catalog: &Catalog,
) -> crate::Result<()> {
    writeln!(out, "#schema=rounds.v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["procedure", "round", "features", "clusters", "cost", "chosen"])?;
    for (proc, entries) in rounds {
        let def = catalog.procedure(proc)?;
        let chosen = bundle
            .partitioned
            .as_ref()
            .and_then(|p| p.get(proc))
            .map(|m| m.feature_set.clone());
        for e in entries {
            let labels: Vec<String> = e.features.iter().map(|f| f.label(def)).collect();
            w.write_record([
                proc.clone(),
                e.round.to_string(),
                labels.join("+"),
                e.clusters.to_string(),
                e.cost.to_string(),
                (chosen.as_ref() == Some(&e.features)).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn estimate(a: EstimateArgs, mode: Parallelism) -> CliResult {
    check_threshold(a.threshold)?;
    let (catalog, trace) = load_input(&a.input)?;
    let bundle = Bundle::load(&a.bundle)?;
    bundle.check_catalog(&catalog)?;
    let config = EstimatorConfig::with_threshold(a.threshold);
    let variant = ModelVariant::from(a.variant);
    let rows = par::map(
        mode,
        &trace.records,
        |r| -> crate::Result<Option<(f64, OptimizationPlan)>> {
            let (Some(model), Some(mapping)) = (
                bundle.model_for(variant, &r.proc_name, &r.proc_params),
                bundle.mapping(&r.proc_name),
            ) else {
                return Ok(None);
            };
            let proc = catalog.procedure(&r.proc_name)?;
            Ok(
                match estimate_initial_path(model, mapping, &r.proc_params, proc, &config) {
                    Ok(e) => Some((e.confidence(), select_optimizations(&e, model, &config))),
                    Err(Error::EmptyModel(_)) => None,
                    Err(e) => return Err(e),
                },
            )
        },
    );
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "#schema=estimates.v1")?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record([
        "txn_id",
        "procedure",
        "variant",
        "confidence",
        "base_partition",
        "lock_set",
        "disable_undo",
        "finish_points",
    ])
    .map_err(Error::from)?;
    for (r, row) in trace.records.iter().zip(rows) {
        let Some((confidence, plan)) = row? else { continue };
        w.write_record([
            r.txn_id.to_string(),
            r.proc_name.clone(),
            variant.name().to_string(),
            format!("{confidence:.6}"),
            plan.base_partition.to_string(),
            join(plan.lock_set.keys()),
            plan.disable_undo.to_string(),
            join(plan.finish_points.iter().map(|(p, (i, _))| format!("{p}@{i}"))),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    drop(w);
    out.flush()?;
    Ok(())
}

fn evaluate(a: EvaluateArgs, mode: Parallelism) -> CliResult {
    check_threshold(a.threshold)?;
    let (catalog, trace) = load_input(&a.input)?;
    let config = EstimatorConfig::with_threshold(a.threshold);
    let (bundle, test) = match &a.bundle {
        Some(path) => {
            let b = Bundle::load(path)?;
            b.check_catalog(&catalog)?;
            (b, trace)
        }
        None => {
            let (train, test) = trace.split_at_fraction(0.5);
            (learn(&train, &catalog, a.threshold, a.seed, mode)?, test)
        }
    };
    let mut variants = vec![ModelVariant::Global];
    if bundle.partitioned.is_some() {
        variants.push(ModelVariant::Partitioned);
    }
    let report = bundle.report(&variants, &test.records, &catalog, &config, mode)?;
    let mut out = output(a.out.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Global and partitioned models from `train`; an empty trace gives an
/// empty bundle.
fn learn(train: &Workload, catalog: &Catalog, threshold: f64, seed: u64, mode: Parallelism) -> CliResult<Bundle> {
    let mut b = Bundle::build(&train.records, catalog, DEFAULT_ACCEPT_THRESHOLD, mode)?;
    b.partition(&train.records, catalog, &selection_config(threshold, mode), seed)?;
    Ok(b)
}

fn parse_strategy(s: &str) -> CliResult<Strategy> {
    Strategy::parse(s.trim()).ok_or_else(|| {
        let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
        CliError::Usage(format!("unknown strategy `{s}`; expected one of {}", names.join(", ")))
    })
}

/// Catalog, trace and (if any strategy needs it) bundle for `p`.
struct SimInputs {
    catalog: Catalog,
    trace: Workload,
    bundle: Option<Bundle>,
}

fn sim_inputs(
    input: &Input,
    sim: &SimArgs,
    p: Option<u32>,
    needs_models: bool,
    threshold: f64,
    mode: Parallelism,
) -> CliResult<SimInputs> {
    let base = Catalog::load(&input.catalog)?;
    let catalog = match p {
        Some(p) if p != base.num_partitions => base.with_partitions(p),
        _ => base,
    };
    let trace = load_trace(&input.trace, &catalog)?;
    let mut bundle = None;
    if needs_models {
        if let Some(path) = &sim.bundle {
            let b = Bundle::load(path)?;
            if b.check_catalog(&catalog).is_ok() {
                bundle = Some(b);
            }
        }
        if bundle.is_none() {
            let train = match &sim.train {
                Some(path) => load_trace(path, &catalog)?,
                None => trace.clone(),
            };
            bundle = Some(learn(&train, &catalog, threshold, sim.seed, mode)?);
        }
    }
    Ok(SimInputs { catalog, trace, bundle })
}

fn sim_config(p: u32, sim: &SimArgs, threshold: f64, mode: Parallelism) -> SimConfig {
    SimConfig {
        duration: sim.duration,
        estimator: EstimatorConfig {
            abort_cutoff: !sim.no_abort_cutoff,
            ..EstimatorConfig::with_threshold(threshold)
        },
        mode,
        ..SimConfig::new(p, sim.seed)
    }
}

fn finish_results(results: &[SimResult], path: Option<&Path>) -> CliResult {
    let mut out = output(path)?;
    write_results_csv(&mut out, results)?;
    out.flush()?;
    if let Some(r) = results.iter().find(|r| r.failed) {
        return Err(CliError::Failed(format!(
            "{} at P={} threshold {}: a transaction with undo logging off aborted after writing",
            r.strategy.name(),
            r.num_partitions,
            r.threshold
        )));
    }
    Ok(())
}

fn simulate(a: SimulateArgs, mode: Parallelism) -> CliResult {
    check_threshold(a.threshold)?;
    let strategies: Vec<Strategy> = if a.strategies.trim() == "all" {
        Strategy::ALL.to_vec()
    } else {
        a.strategies.split(',').map(parse_strategy).collect::<CliResult<_>>()?
    };
    let needs_models = strategies.iter().any(|s| s.variant().is_some());
    let ps: Vec<Option<u32>> = if a.partitions.is_empty() {
        vec![None]
    } else {
        a.partitions.iter().map(|&p| Some(p)).collect()
    };
    if a.events.is_some() && ps.len() * strategies.len() != 1 {
        return Err(CliError::Usage(
            "--events needs exactly one strategy and partition count".into(),
        ));
    }
    let mut results = Vec::new();
    for p in ps {
        let inputs = sim_inputs(&a.input, &a.sim, p, needs_models, a.threshold, mode)?;
        let cfg = sim_config(
            inputs.catalog.num_partitions,
            &a.sim,
            a.threshold,
            Parallelism::Sequential,
        );
        cfg.validate()?;
        let runs = par::map(mode, &strategies, |&s| {
            run_simulation(
                &cfg,
                &inputs.trace.records,
                &inputs.catalog,
                s,
                inputs.bundle.as_ref(),
                a.events.is_some(),
            )
        });
        for run in runs {
            let run = run?;
            if let (Some(path), Some(events)) = (&a.events, &run.events) {
                let mut out = output(Some(path))?;
                for e in events {
                    serde_json::to_writer(&mut out, e).map_err(Error::from)?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
            }
            results.push(run.result);
        }
    }
    finish_results(&results, a.sim.out.as_deref())
}

fn sweep(a: SweepArgs, mode: Parallelism) -> CliResult {
    for &t in &a.threshold {
        check_threshold(t)?;
    }
    let strategy = parse_strategy(&a.strategy)?;
    if strategy.variant().is_none() {
        return Err(CliError::Usage(format!(
            "sweep needs a houdini strategy, got {}",
            strategy.name()
        )));
    }
    let inputs = sim_inputs(
        &a.input,
        &a.sim,
        a.partitions,
        true,
        crate::estimator::DEFAULT_THRESHOLD,
        mode,
    )?;
    let cfg = sim_config(
        inputs.catalog.num_partitions,
        &a.sim,
        crate::estimator::DEFAULT_THRESHOLD,
        mode,
    );
    let bundle = inputs.bundle.as_ref().expect("sweep always loads models");
    let results = sweep_confidence(
        &cfg,
        &inputs.trace.records,
        &inputs.catalog,
        bundle,
        strategy,
        &a.threshold,
    )?;
    finish_results(&results, a.sim.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_specs() {
        assert_eq!(parse_items("1-4").unwrap(), ItemCounts::Uniform { min: 1, max: 4 });
        assert_eq!(
            parse_items("1:0.6,2:0.4").unwrap(),
            ItemCounts::Weighted(vec![(1, 0.6), (2, 0.4)])
        );
        assert_eq!(parse_items("x").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_from(["procpredict", "nope"]), 1);
        assert_eq!(main_from(["procpredict", "--help"]), 0);
        assert_eq!(
            main_from([
                "procpredict",
                "evaluate",
                "--catalog",
                "/nonexistent",
                "--trace",
                "/nonexistent"
            ]),
            2
        );
    }
}
