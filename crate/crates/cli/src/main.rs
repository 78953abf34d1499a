use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use metalab_core::bounds::{
    corollary_check, dominant_term_ratio, meta_bound, meta_bound_conventional, wct_bound, wct_bound_conventional,
    BoundInputs,
};
use metalab_core::cluster::{dbscan, kmeans, DbscanParams};
use metalab_core::entropy::{entropy_for_noise, expected_correct, noise_probability, EntropyBudget};
use metalab_core::harness::{
    grid_points, parse_override, run_experiment, sweep, train_cell, write_results, write_rows, ExperimentConfig,
    ExperimentResults, GridAxis, Method,
};
use metalab_core::metalearn::save_checkpoint;
use metalab_core::stability::{svcca_detailed, SvccaOptions, DEFAULT_VARIANCE_THRESHOLD};
use metalab_core::{Error, Tensor};

#[derive(Parser)]
#[command(name = "metalab", version, about = "Entropy-limited meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label-correctness figures for an annotation entropy budget.
    Entropy(EntropyArgs),
    /// Generalization bounds, or a sweep over the entropy range.
    Bounds(BoundsArgs),
    /// DBSCAN or K-means over a headerless numeric CSV.
    Cluster(ClusterArgs),
    /// SVCCA similarity of two representation matrices.
    Stability(StabilityArgs),
    /// Train one method at one grid point and save a checkpoint.
    Train(TrainArgs),
    /// Run an experiment config.
    Run(RunArgs),
    /// Run an experiment over a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    classes: usize,
    /// Entropy in nats.
    #[arg(long, conflicts_with_all = ["fraction", "noise"])]
    entropy: Option<f64>,
    /// Entropy as a fraction of m·ln C.
    #[arg(long, conflicts_with = "noise")]
    fraction: Option<f64>,
    /// Label-noise rate; the matching entropy is derived.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    c1: usize,
    #[arg(long)]
    c2: usize,
    #[arg(long)]
    k: usize,
    /// Entropy in nats; defaults to m·ln c1.
    #[arg(long)]
    entropy: Option<f64>,
    /// Stability constant c in β = c/√m.
    #[arg(long, default_value_t = 0.1)]
    stability: f64,
    /// Emit a CSV sweep with this many entropy points instead.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Headerless CSV, one point per row.
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 15)]
    min_samples: usize,
    /// Use K-means with this many clusters instead of DBSCAN.
    #[arg(long)]
    kmeans: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StabilityArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VARIANCE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    max_dims: Option<usize>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Override a config field by dotted path, e.g. `--set trainer.eta=0.01`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    method: String,
    /// Defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid value; defaults to the first grid point.
    #[arg(long)]
    grid: Option<f64>,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Result CSV; defaults to the config's output path, else stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid axis `PATH=V1,V2,...`; repeatable. Defaults to the config's grid.
    #[arg(long = "axis", value_name = "PATH=VALUES")]
    axes: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct InvalidConfig(String);

impl std::fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

enum Outcome {
    Success,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InvalidConfig>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Entropy(a) => entropy(a),
        Command::Bounds(a) => bounds(a),
        Command::Cluster(a) => cluster(a),
        Command::Stability(a) => stability(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
    }
}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    InvalidConfig(e.to_string()).into()
}

/// Domain and input errors from argument values are configuration errors.
fn classify(e: Error) -> anyhow::Error {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::InvalidInput(_) => invalid(e),
        other => other.into(),
    }
}

fn print_json(v: &Value) -> anyhow::Result<Outcome> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(Outcome::Success)
}

fn entropy(a: EntropyArgs) -> anyhow::Result<Outcome> {
    let h = match (a.entropy, a.fraction, a.noise) {
        (Some(h), _, _) => h,
        (_, Some(f), _) => f * EntropyBudget::max_entropy(a.m, a.classes),
        (_, _, Some(p)) => entropy_for_noise(p, a.m, a.classes).map_err(classify)?,
        _ => EntropyBudget::max_entropy(a.m, a.classes),
    };
    let b = EntropyBudget::new(a.m, a.classes, h).map_err(classify)?;
    print_json(&json!({
        "m": b.m(),
        "classes": b.classes(),
        "entropy": b.entropy(),
        "max_entropy": EntropyBudget::max_entropy(b.m(), b.classes()),
        "p_correct": b.p_correct(),
        "noise_probability": noise_probability(&b),
        "expected_correct": expected_correct(&b),
    }))
}

fn bounds(a: BoundsArgs) -> anyhow::Result<Outcome> {
    let h = a.entropy.unwrap_or(a.m as f64 * (a.c1 as f64).ln());
    let b = BoundInputs::with_stability_constant(a.m, a.c1, a.c2, a.k, h, a.stability).map_err(classify)?;
    if let Some(points) = a.points {
        let mut cfg = ExperimentConfig {
            kind: metalab_core::harness::ExperimentKind::BoundsSweep,
            bounds: b,
            bounds_points: points,
            ..ExperimentConfig::default()
        };
        cfg.name = "bounds".into();
        let res = run_experiment(&cfg).map_err(classify)?;
        write_rows(std::io::stdout().lock(), &res.rows)?;
        return Ok(Outcome::Success);
    }
    let check = corollary_check(a.c1, a.c2, a.k);
    print_json(&json!({
        "inputs": b,
        "wct_bound": wct_bound(&b).map_err(classify)?,
        "meta_bound": meta_bound(&b).map_err(classify)?,
        "wct_bound_conventional": wct_bound_conventional(&b).map_err(classify)?,
        "meta_bound_conventional": meta_bound_conventional(&b).map_err(classify)?,
        "dominant_term_ratio": dominant_term_ratio(&b),
        "corollary": check,
    }))
}

fn read_matrix(path: &Path) -> anyhow::Result<Tensor> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), i + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!(invalid(format!("{} has no rows", path.display())));
    }
    Tensor::from_rows(&rows).map_err(classify)
}

fn cluster(a: ClusterArgs) -> anyhow::Result<Outcome> {
    let x = read_matrix(&a.input)?;
    let points: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).collect();
    let assignment = match a.kmeans {
        Some(k) => kmeans(&points, k, 100, a.seed),
        None => dbscan(&points, &DbscanParams::new(a.eps, a.min_samples).map_err(classify)?),
    }
    .map_err(classify)?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["index", "label", "core"])?;
    for (i, (l, c)) in assignment.labels.iter().zip(&assignment.core_mask).enumerate() {
        w.write_record([i.to_string(), l.to_string(), c.to_string()])?;
    }
    w.flush()?;
    eprintln!(
        "{} clusters, {} noise points",
        assignment.num_clusters,
        assignment.noise_count()
    );
    Ok(Outcome::Success)
}

fn stability(a: StabilityArgs) -> anyhow::Result<Outcome> {
    let x = read_matrix(&a.a)?;
    let y = read_matrix(&a.b)?;
    let opts = SvccaOptions {
        variance_threshold: a.threshold,
        max_dims: a.max_dims,
    };
    let s = svcca_detailed(&x, &y, &opts).map_err(classify)?;
    print_json(&serde_json::to_value(s)?)
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let overrides = args
        .overrides
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| invalid(format!("override {s:?} is not PATH=VALUE")))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    ExperimentConfig::load_with_overrides(&text, &overrides).map_err(invalid)
}

fn parse_method(name: &str) -> anyhow::Result<Method> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| invalid(format!("unknown method {name:?}")))
}

fn train(a: TrainArgs) -> anyhow::Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let method = parse_method(&a.method)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let (_, values) = grid_points(&cfg);
    let grid = match a.grid.or(values.first().copied()) {
        Some(g) => g,
        None => bail!(invalid("this experiment kind has no training grid")),
    };
    let cell = train_cell(&cfg, grid, seed, method)?;
    save_checkpoint(&cell.params, &a.checkpoint)?;
    print_json(&json!({
        "method": method.name(),
        "seed": seed,
        "grid_value": grid,
        "accuracy": cell.summary.mean,
        "ci95": cell.summary.ci95,
        "checkpoint": a.checkpoint,
        "config_hash": cfg.hash(),
    }))
}

fn finish(cfg: &ExperimentConfig, res: &ExperimentResults, output: Option<PathBuf>) -> anyhow::Result<Outcome> {
    match output.or_else(|| cfg.output.clone()) {
        Some(path) => {
            let paths = write_results(&path, cfg, res)?;
            eprintln!("wrote {}", paths.rows.display());
        }
        None => write_rows(std::io::stdout().lock(), &res.rows)?,
    }
    let failed = res.failed();
    if failed == 0 {
        return Ok(Outcome::Success);
    }
    eprintln!("{failed} of {} runs failed", res.rows.len());
    Ok(Outcome::Partial)
}

fn run(a: RunArgs) -> anyhow::Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let res = run_experiment(&cfg).map_err(classify)?;
    finish(&cfg, &res, a.output)
}

fn parse_axis(spec: &str) -> anyhow::Result<GridAxis> {
    let (path, values) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("axis {spec:?} is not PATH=V1,V2,...")))?;
    let values: Vec<Value> = values.split(',').filter(|v| !v.is_empty()).map(parse_override).collect();
    if values.is_empty() {
        bail!(invalid(format!("axis {path} has no values")));
    }
    Ok(GridAxis {
        path: path.trim().to_string(),
        values,
    })
}

fn run_sweep(a: SweepArgs) -> anyhow::Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let axes = if a.axes.is_empty() {
        cfg.grid.clone()
    } else {
        a.axes.iter().map(|s| parse_axis(s)).collect::<anyhow::Result<Vec<_>>>()?
    };
    let res = sweep(&cfg, &axes).map_err(classify)?;
    finish(&cfg, &res, a.output)
}
