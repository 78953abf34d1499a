use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClusterSpace, ExperimentConfig, ExperimentKind, Method};
use super::synthetic::{gen_synthetic, index_by_label, sample_episode, split_classes};
use crate::bounds::bounds_sweep;
use crate::cluster::{construct_kmeans_tasks, construct_pseudo_tasks, dbscan, SamplerConfig, NOISE};
use crate::diffcore::Tensor;
use crate::entropy::{corrupt_labels, entropy_for_noise, EntropyBudget};
use crate::error::{Error, Result};
use crate::metalearn::{
    evaluate_episodes, init_model, meta_train, mtl_train, wct_train, AdaptMode, EvalProtocol, EvalSummary, LabeledSet,
    ModelParams, Task, TrainConfig, WctConfig,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::stability::{stability_profile, StabilityTrace};

/// Environment variable holding the worker count for independent runs.
pub const THREADS_ENV: &str = "METALAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One CSV row: a method at one grid point and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: ExperimentKind,
    /// Sweep cell as `path=value` pairs; empty outside sweeps.
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub grid: String,
    pub grid_value: f64,
    pub metric: String,
    pub value: f64,
    pub ci95: f64,
    pub status: RunStatus,
    pub message: String,
    pub config_hash: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub grid_value: f64,
    pub layer: usize,
    pub epoch: usize,
    pub rs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceRow>,
}

impl ExperimentResults {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn extend(&mut self, other: ExperimentResults) {
        self.rows.extend(other.rows);
        self.traces.extend(other.traces);
    }

    /// Rows for one method and grid value that succeeded.
    pub fn values(&self, method: Method, grid_value: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.status == RunStatus::Ok && r.method == method.name() && r.grid_value == grid_value)
            .map(|r| r.value)
            .collect()
    }
}

/// Worker count from [`THREADS_ENV`], defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// The grid axis a kind iterates over, with its values.
pub fn grid_points(config: &ExperimentConfig) -> (&'static str, Vec<f64>) {
    match config.kind {
        ExperimentKind::EntropyCurve => ("entropy_fraction", config.entropy_fractions.clone()),
        ExperimentKind::NoiseTable | ExperimentKind::Heterogeneous => ("noise", config.noise_levels.clone()),
        ExperimentKind::Ablation | ExperimentKind::SensitivitySweep => ("pseudo_noise", config.noise_levels.clone()),
        ExperimentKind::BoundsSweep => ("entropy", Vec::new()),
    }
}

/// Runs every (grid point, seed, method) cell. Cell failures become rows with
/// `status = failed`; only an invalid config is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    run_cell_set(config, "")
}

pub(crate) fn run_cell_set(config: &ExperimentConfig, cell: &str) -> Result<ExperimentResults> {
    config.validate()?;
    let hash = config.hash();
    if config.kind == ExperimentKind::BoundsSweep {
        return run_bounds(config, cell, &hash);
    }
    let (grid, values) = grid_points(config);
    let mut jobs = Vec::new();
    for &g in &values {
        for &seed in &config.seeds {
            for &m in &config.methods {
                jobs.push((g, seed, m));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<(ResultRow, Vec<TraceRow>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, seed, method)| {
                let start = Instant::now();
                let outcome = run_cell(config, g, seed, method);
                let mut row = ResultRow {
                    kind: config.kind,
                    cell: cell.to_string(),
                    method: method.name().to_string(),
                    seed,
                    grid: grid.to_string(),
                    grid_value: g,
                    metric: "accuracy".into(),
                    value: f64::NAN,
                    ci95: f64::NAN,
                    status: RunStatus::Ok,
                    message: String::new(),
                    config_hash: hash.clone(),
                    wall_seconds: 0.0,
                };
                let mut traces = Vec::new();
                match outcome {
                    Ok((summary, tr)) => {
                        row.value = summary.mean;
                        row.ci95 = summary.ci95;
                        traces = tr
                            .into_iter()
                            .map(|t| TraceRow {
                                cell: cell.to_string(),
                                method: method.name().to_string(),
                                seed,
                                grid_value: g,
                                layer: t.layer,
                                epoch: t.epoch,
                                rs: t.rs,
                            })
                            .collect();
                    }
                    Err(e) => {
                        row.status = RunStatus::Failed;
                        row.message = e.to_string();
                    }
                }
                row.wall_seconds = start.elapsed().as_secs_f64();
                (row, traces)
            })
            .collect()
    });
    let mut out = ExperimentResults::default();
    for (row, traces) in outcomes {
        out.rows.push(row);
        out.traces.extend(traces);
    }
    Ok(out)
}

fn run_bounds(config: &ExperimentConfig, cell: &str, hash: &str) -> Result<ExperimentResults> {
    let start = Instant::now();
    let sweep = bounds_sweep(&config.bounds, config.bounds_points).map_err(|e| Error::Config(e.to_string()))?;
    let secs = start.elapsed().as_secs_f64();
    let mut out = ExperimentResults::default();
    for r in sweep {
        for (method, metric, value) in [
            ("wct", "bound", r.wct_bound),
            ("meta", "bound", r.meta_bound),
            ("meta", "dominant_ratio", r.ratio),
        ] {
            out.rows.push(ResultRow {
                kind: config.kind,
                cell: cell.to_string(),
                method: method.into(),
                seed: config.seeds[0],
                grid: "entropy".into(),
                grid_value: r.entropy,
                metric: metric.into(),
                value,
                ci95: 0.0,
                status: RunStatus::Ok,
                message: String::new(),
                config_hash: hash.to_string(),
                wall_seconds: secs,
            });
        }
    }
    Ok(out)
}

/// Data shared by every method at one grid point and seed.
pub struct Prepared {
    /// Training-class rows.
    pub x_train: Tensor,
    /// Training labels remapped to `0..train_classes`, clean and corrupted.
    pub y_train: Vec<usize>,
    pub y_noisy: Vec<usize>,
    pub train_classes: usize,
    /// Held-out episodes with clean labels.
    pub episodes: Vec<Task>,
    /// Fixed training rows for stability traces.
    pub probe: Option<Tensor>,
}

/// Generates the pool, splits classes, corrupts training labels from the
/// grid's entropy budget and draws the held-out episodes.
pub fn prepare(config: &ExperimentConfig, grid_value: f64, seed: u64) -> Result<Prepared> {
    let mut spec = config.dataset.clone();
    spec.seed = derive_seed(spec.seed, seed);
    let mut pool = gen_synthetic(&spec)?;
    let split = split_classes(spec.num_classes, 0.6, 0.2, derive_seed(seed, stream::DATA))?;
    let held_out = if config.episodes.use_val_classes { &split.val } else { &split.test };
    if held_out.iter().any(|c| split.train.contains(c)) {
        return Err(Error::invalid("held-out classes overlap training classes"));
    }

    let mut remap = vec![usize::MAX; spec.num_classes];
    for (i, &c) in split.train.iter().enumerate() {
        remap[c] = i;
    }
    let rows: Vec<usize> = (0..pool.len()).filter(|&i| remap[pool.y[i]] != usize::MAX).collect();
    standardize(&mut pool.x, &rows);
    let x_train = pool.x.select_rows(&rows)?;
    let y_train: Vec<usize> = rows.iter().map(|&i| remap[pool.y[i]]).collect();
    let c1 = split.train.len();
    let m = y_train.len();

    let budget = match config.kind {
        ExperimentKind::EntropyCurve => EntropyBudget::fraction(m, c1, grid_value)?,
        ExperimentKind::NoiseTable | ExperimentKind::Heterogeneous => {
            EntropyBudget::new(m, c1, entropy_for_noise(grid_value, m, c1)?)?
        }
        _ => EntropyBudget::full(m, c1)?,
    };
    let y_noisy = corrupt_labels(&y_train, &budget, derive_seed(seed, stream::LABEL_NOISE))?;

    let ep = &config.episodes;
    let by_class = index_by_label(&pool.y, spec.num_classes);
    let mut rng = rng_for(seed, stream::EVAL);
    let episodes = (0..ep.eval_episodes)
        .map(|_| sample_episode(&pool.x, &pool.y, &by_class, held_out, ep.way, ep.shots, ep.queries, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let probe = match &config.trace {
        Some(t) => {
            let mut rng = rng_for(seed, stream::PROBE);
            let idx = sample(&mut rng, m, t.probe_size.min(m)).into_vec();
            Some(x_train.select_rows(&idx)?)
        }
        None => None,
    };
    Ok(Prepared {
        x_train,
        y_train,
        y_noisy,
        train_classes: c1,
        episodes,
        probe,
    })
}

/// Z-scores every column with the mean and deviation of the `fit` rows.
fn standardize(x: &mut Tensor, fit: &[usize]) {
    let c = x.cols();
    let n = fit.len() as f64;
    let mut mean = vec![0.0; c];
    for &i in fit {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; c];
    for &i in fit {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    for row in x.data_mut().chunks_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&sd) {
            *v = (*v - m) / s;
        }
    }
}

/// A trained model with its held-out score.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub params: ModelParams,
    pub summary: EvalSummary,
    pub traces: Vec<StabilityTrace>,
}

/// Trains and evaluates one method at one grid point and seed.
pub fn train_cell(config: &ExperimentConfig, grid_value: f64, seed: u64, method: Method) -> Result<TrainedCell> {
    let data = prepare(config, grid_value, seed)?;
    let (params, protocol, traces) = train_method(config, &data, grid_value, seed, method)?;
    let summary = evaluate_episodes(&params, &data.episodes, &protocol)?;
    Ok(TrainedCell { params, summary, traces })
}

pub fn run_cell(
    config: &ExperimentConfig,
    grid_value: f64,
    seed: u64,
    method: Method,
) -> Result<(EvalSummary, Vec<StabilityTrace>)> {
    let cell = train_cell(config, grid_value, seed, method)?;
    Ok((cell.summary, cell.traces))
}

/// Layer widths from input through the body.
fn layer_dims(config: &ExperimentConfig) -> Vec<usize> {
    std::iter::once(config.dataset.dim).chain(config.model.hidden.iter().copied()).collect()
}

/// Records rs between consecutive snapshots taken every `every` steps.
struct Tracer<'a> {
    probe: Option<&'a Tensor>,
    every: usize,
    threshold: f64,
    prev: Option<ModelParams>,
    traces: Vec<StabilityTrace>,
}

impl<'a> Tracer<'a> {
    fn new(config: &ExperimentConfig, probe: Option<&'a Tensor>, initial: &ModelParams) -> Self {
        let t = config.trace.clone().unwrap_or_default();
        Self {
            probe,
            every: t.every,
            threshold: t.variance_threshold,
            prev: probe.map(|_| initial.clone()),
            traces: Vec::new(),
        }
    }

    fn observe(&mut self, epoch: usize, params: &ModelParams) -> Result<()> {
        let Some(probe) = self.probe else {
            return Ok(());
        };
        let step = epoch + 1;
        if step % self.every != 0 {
            return Ok(());
        }
        let prev = self.prev.replace(params.clone()).expect("snapshot present while tracing");
        self.traces.extend(stability_profile(params, &prev, probe, step, self.threshold)?);
        Ok(())
    }
}

type Trained = (ModelParams, EvalProtocol, Vec<StabilityTrace>);

fn train_method(config: &ExperimentConfig, data: &Prepared, grid_value: f64, seed: u64, method: Method) -> Result<Trained> {
    let init_seed = derive_seed(seed, stream::INIT);
    let train_seed = derive_seed(seed, stream::TRAIN);
    let dims = layer_dims(config);
    let finetune = EvalProtocol::Finetune {
        alpha: config.eval.finetune_alpha.unwrap_or(config.trainer.alpha),
        steps: config.eval.finetune_steps.unwrap_or(config.trainer.inner_steps),
    };
    let logistic = EvalProtocol::Logistic {
        lr: config.eval.logistic_lr,
        steps: config.eval.logistic_steps,
    };
    let meta_protocol = if config.eval.zero_shot { EvalProtocol::ZeroShot } else { finetune };

    match method {
        Method::Wct => {
            let mut params = init_model(&dims, 1, data.train_classes, init_seed)?;
            let traces = train_wct(config, data, &mut params, &data.x_train, &data.y_noisy, data.train_classes, train_seed)?;
            Ok((params, logistic, traces))
        }
        Method::MinoWct => {
            let (x, y, classes) = whole_pool_pseudo_labels(config, data, grid_value, seed)?;
            let mut params = init_model(&dims, 1, classes, init_seed)?;
            let traces = train_wct(config, data, &mut params, &x, &y, classes, train_seed)?;
            Ok((params, logistic, traces))
        }
        Method::Mtl => {
            let mut params = init_model(&dims, config.model.num_groups, config.model.c_max, init_seed)?;
            let mut tracer = Tracer::new(config, data.probe.as_ref(), &params);
            let mut source = labelled_source(config, data);
            mtl_train(
                &mut params,
                config.wct.lr,
                config.trainer.epochs,
                train_seed,
                |_, _, rng| source(rng),
                |e, p| tracer.observe(e, p),
            )?;
            Ok((params, logistic, tracer.traces))
        }
        Method::Maml | Method::Fomaml | Method::Anil | Method::Dhm => {
            let (groups, mode) = match method {
                Method::Maml => (1, AdaptMode::SecondOrder),
                Method::Fomaml => (1, AdaptMode::FirstOrder),
                Method::Anil => (1, AdaptMode::HeadOnly),
                _ => (config.model.num_groups, config.trainer.mode),
            };
            let tc = TrainConfig {
                mode,
                scaler_enabled: false,
                seed: train_seed,
                ..config.trainer.clone()
            };
            let mut params = init_model(&dims, groups, config.model.c_max, init_seed)?;
            let mut tracer = Tracer::new(config, data.probe.as_ref(), &params);
            let mut source = labelled_source(config, data);
            meta_train(&mut params, &tc, |_, _, rng| source(rng), |e, p| tracer.observe(e, p))?;
            Ok((params, meta_protocol, tracer.traces))
        }
        Method::Mino | Method::MinoNoScaler | Method::MinoKmeans => {
            let tc = TrainConfig {
                scaler_enabled: method != Method::MinoNoScaler,
                seed: train_seed,
                ..config.trainer.clone()
            };
            let mut params = init_model(&dims, config.model.num_groups, config.model.c_max, init_seed)?;
            let mut tracer = Tracer::new(config, data.probe.as_ref(), &params);
            let mut bank = PseudoBank::new(config, data, grid_value, seed, method == Method::MinoKmeans);
            meta_train(&mut params, &tc, |e, p, rng| bank.batch(e, p, rng), |e, p| tracer.observe(e, p))?;
            Ok((params, meta_protocol, tracer.traces))
        }
    }
}

fn train_wct(
    config: &ExperimentConfig,
    data: &Prepared,
    params: &mut ModelParams,
    x: &Tensor,
    y: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Vec<StabilityTrace>> {
    let mut tracer = Tracer::new(config, data.probe.as_ref(), params);
    let wc = WctConfig {
        seed,
        ..config.wct.clone()
    };
    wct_train(params, x, y, classes, &wc, |e, p| tracer.observe(e, p))?;
    Ok(tracer.traces)
}

/// Meta-batches of episodes drawn from the corrupted training labels.
fn labelled_source<'a>(config: &'a ExperimentConfig, data: &'a Prepared) -> impl FnMut(&mut ChaCha8Rng) -> Result<Vec<Task>> + 'a {
    let by_class = index_by_label(&data.y_noisy, data.train_classes);
    let classes: Vec<usize> = (0..data.train_classes).collect();
    let ep = &config.episodes;
    let (lo, hi) = ep.train_way_range();
    move |rng| {
        (0..config.trainer.meta_batch)
            .map(|_| {
                let way = rng.random_range(lo..=hi);
                sample_episode(
                    &data.x_train,
                    &data.y_noisy,
                    &by_class,
                    &classes,
                    way,
                    ep.train_shots(),
                    ep.train_queries(),
                    rng,
                )
            })
            .collect()
    }
}

/// Pseudo-task bank rebuilt every `refresh_every` outer steps.
struct PseudoBank<'a> {
    config: &'a ExperimentConfig,
    data: &'a Prepared,
    noise: f64,
    seed: u64,
    kmeans: bool,
    tasks: Vec<Task>,
    builds: u64,
}

impl<'a> PseudoBank<'a> {
    fn new(config: &'a ExperimentConfig, data: &'a Prepared, noise: f64, seed: u64, kmeans: bool) -> Self {
        Self {
            config,
            data,
            noise,
            seed,
            kmeans,
            tasks: Vec::new(),
            builds: 0,
        }
    }

    fn sampler(&self) -> SamplerConfig {
        let u = &self.config.unsupervised;
        let cap = self.config.model.c_max;
        SamplerConfig {
            num_tasks: u.bank_size,
            max_way: Some(u.sampler.max_way.map_or(cap, |w| w.min(cap))),
            ..u.sampler.clone()
        }
    }

    fn rebuild(&mut self, params: &ModelParams) -> Result<()> {
        let u = &self.config.unsupervised;
        let seed = derive_seed(derive_seed(self.seed, stream::TASKS), self.builds);
        self.builds += 1;
        let embed = |x: &Tensor| match u.space {
            ClusterSpace::Raw => Ok(x.clone()),
            ClusterSpace::Body => params.embed(x),
        };
        let sampler = self.sampler();
        let x = &self.data.x_train;
        let truth = Some(self.data.y_train.as_slice());
        let tasks = if self.kmeans {
            construct_kmeans_tasks(x, truth, embed, &sampler, self.config.episodes.way, seed)?
        } else {
            construct_pseudo_tasks(x, truth, embed, &sampler, &self.config.dbscan, seed)?
        };
        let mut rng = rng_for(seed, stream::LABEL_NOISE);
        self.tasks = tasks
            .into_iter()
            .map(|t| corrupt_task(t, self.noise, &mut rng))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn batch(&mut self, epoch: usize, params: &ModelParams, rng: &mut ChaCha8Rng) -> Result<Vec<Task>> {
        let every = self.config.unsupervised.refresh_every.max(1);
        if self.tasks.is_empty() || epoch % every == 0 && epoch > 0 {
            self.rebuild(params)?;
        }
        Ok((0..self.config.trainer.meta_batch)
            .map(|_| self.tasks[rng.random_range(0..self.tasks.len())].clone())
            .collect())
    }
}

/// Replaces each label with a different in-task class with probability `p`.
/// Support flips are redrawn until every class keeps a support label; after
/// 100 failed draws the support is left clean.
pub fn corrupt_task(task: Task, p: f64, rng: &mut ChaCha8Rng) -> Result<Task> {
    if p <= 0.0 {
        return Ok(task);
    }
    let way = task.way;
    let flip = |y: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
        y.iter()
            .map(|&c| {
                if rng.random::<f64>() < p {
                    (c + rng.random_range(1..way)) % way
                } else {
                    c
                }
            })
            .collect()
    };
    let sy = (0..100)
        .map(|_| flip(&task.support.y, rng))
        .find(|sy| (0..way).all(|c| sy.contains(&c)))
        .unwrap_or_else(|| task.support.y.clone());
    let qy = flip(&task.query.y, rng);
    let out = Task::new(LabeledSet::new(task.support.x, sy)?, LabeledSet::new(task.query.x, qy)?, way)?;
    match (task.support_true, task.query_true) {
        (Some(s), Some(q)) => out.with_truth(s, q),
        _ => Ok(out),
    }
}

/// DBSCAN over the whole training pool; noise points are dropped and the
/// surviving labels corrupted at rate `noise`.
fn whole_pool_pseudo_labels(
    config: &ExperimentConfig,
    data: &Prepared,
    noise: f64,
    seed: u64,
) -> Result<(Tensor, Vec<usize>, usize)> {
    let x = &data.x_train;
    let points: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).collect();
    let params = config.unsupervised.pool_dbscan.as_ref().unwrap_or(&config.dbscan);
    let assignment = dbscan(&points, params)?;
    let classes = assignment.num_clusters;
    if classes < 2 {
        return Err(Error::invalid(format!(
            "whole-pool clustering found {classes} clusters (eps={}, min_samples={})",
            params.eps, params.min_samples
        )));
    }
    let keep: Vec<usize> = (0..x.rows()).filter(|&i| assignment.labels[i] != NOISE).collect();
    let mut rng = rng_for(derive_seed(seed, stream::CLUSTER), stream::LABEL_NOISE);
    let y = keep
        .iter()
        .map(|&i| {
            let c = assignment.labels[i] as usize;
            if noise > 0.0 && rng.random::<f64>() < noise {
                (c + rng.random_range(1..classes)) % classes
            } else {
                c
            }
        })
        .collect();
    Ok((x.select_rows(&keep)?, y, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SyntheticSpec;

    fn tiny(kind: ExperimentKind, methods: Vec<Method>) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            kind,
            methods,
            seeds: vec![0, 1],
            noise_levels: vec![0.0, 0.3],
            ..ExperimentConfig::default()
        };
        c.dataset = SyntheticSpec {
            num_classes: 30,
            dim: 8,
            per_class: 20,
            separation: 6.0,
            latent_dim: None,
            seed: 3,
        };
        c.model.hidden = vec![8];
        c.trainer.epochs = 5;
        c.trainer.inner_steps = 2;
        c.wct.epochs = 3;
        c.episodes.eval_episodes = 10;
        c.eval.logistic_steps = 10;
        c
    }

    #[test]
    fn noise_table_has_one_row_per_cell() {
        let cfg = tiny(ExperimentKind::NoiseTable, vec![Method::Wct, Method::Maml]);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 2 * 2);
        assert_eq!(r.failed(), 0, "{:?}", r.rows);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.value)));
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let cfg = tiny(ExperimentKind::NoiseTable, vec![Method::Dhm, Method::Mtl]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let key = |r: &ExperimentResults| r.rows.iter().map(|x| (x.value.to_bits(), x.ci95.to_bits())).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn held_out_classes_are_disjoint() {
        let cfg = tiny(ExperimentKind::NoiseTable, vec![Method::Wct]);
        let d = prepare(&cfg, 0.0, 0).unwrap();
        for t in &d.episodes {
            // Held-out truths are pool class ids; none may appear among the training rows.
            let train = split_classes(30, 0.6, 0.2, derive_seed(0, stream::DATA)).unwrap().train;
            assert!(t.query_true.as_ref().unwrap().iter().all(|c| !train.contains(c)));
        }
        assert_eq!(d.train_classes, 18);
    }

    #[test]
    fn label_noise_matches_the_grid() {
        let mut cfg = tiny(ExperimentKind::NoiseTable, vec![Method::Wct]);
        cfg.dataset.per_class = 200;
        let d = prepare(&cfg, 0.3, 0).unwrap();
        let wrong = d.y_train.iter().zip(&d.y_noisy).filter(|(a, b)| a != b).count() as f64 / d.y_train.len() as f64;
        assert!((wrong - 0.3).abs() < 0.03, "{wrong}");
        let clean = prepare(&cfg, 0.0, 0).unwrap();
        assert_eq!(clean.y_train, clean.y_noisy);
    }

    #[test]
    fn failures_become_rows() {
        let mut cfg = tiny(ExperimentKind::Ablation, vec![Method::Mino]);
        cfg.dbscan.eps = 1e-6;
        cfg.unsupervised.sampler.max_retries = 2;
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.failed(), r.rows.len());
        assert!(r.rows[0].message.contains("eps"), "{}", r.rows[0].message);
    }

    #[test]
    fn tracing_emits_every_layer() {
        let mut cfg = tiny(ExperimentKind::NoiseTable, vec![Method::Maml]);
        cfg.seeds = vec![0];
        cfg.noise_levels = vec![0.0];
        cfg.trace = Some(crate::harness::TraceConfig {
            every: 1,
            probe_size: 30,
            variance_threshold: 0.99,
        });
        let r = run_experiment(&cfg).unwrap();
        // One hidden layer plus the head, over five steps.
        assert_eq!(r.traces.len(), 2 * 5);
        assert!(r.traces.iter().all(|t| (0.0..=1.0).contains(&t.rs)));
    }

    #[test]
    fn bounds_sweep_rows() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::BoundsSweep,
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 3 * cfg.bounds_points);
    }

    #[test]
    fn corrupt_task_flips_to_other_classes() {
        let x = Tensor::zeros(&[40, 2]);
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let t = Task::new(LabeledSet::new(x.clone(), y.clone()).unwrap(), LabeledSet::new(x, y.clone()).unwrap(), 4).unwrap();
        let mut rng = rng_for(0, 0);
        let all = corrupt_task(t.clone(), 0.999_999, &mut rng).unwrap();
        assert!(all.support.y.iter().zip(&y).all(|(a, b)| a != b));
        assert_eq!(corrupt_task(t.clone(), 0.0, &mut rng).unwrap(), t);
    }

    #[test]
    fn corrupt_task_keeps_every_support_class() {
        let sx = Tensor::zeros(&[3, 2]);
        let qx = Tensor::zeros(&[6, 2]);
        let t = Task::new(
            LabeledSet::new(sx, vec![0, 1, 2]).unwrap(),
            LabeledSet::new(qx, vec![0, 1, 2, 0, 1, 2]).unwrap(),
            3,
        )
        .unwrap();
        let mut rng = rng_for(1, 0);
        for _ in 0..200 {
            let out = corrupt_task(t.clone(), 0.5, &mut rng).unwrap();
            let mut s = out.support.y.clone();
            s.sort_unstable();
            assert_eq!(s, vec![0, 1, 2]);
        }
    }
}
