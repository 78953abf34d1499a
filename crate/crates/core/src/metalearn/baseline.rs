//! Single-level baselines: whole-class training and multi-task learning.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{dense, ModelParams};
use super::task::Task;
use super::trainer::{assign_groups, dynamic_head_view, GroupedTask};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WctConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for WctConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WctReport {
    /// Mean mini-batch loss per epoch.
    pub loss: Vec<f64>,
    pub train_accuracy: f64,
}

/// Mini-batch cross-entropy over all classes at once. The first `classes`
/// head columns act as the classifier.
pub fn wct_train<O>(
    params: &mut ModelParams,
    x: &Tensor,
    y: &[usize],
    classes: usize,
    config: &WctConfig,
    mut observe: O,
) -> Result<WctReport>
where
    O: FnMut(usize, &ModelParams) -> Result<()>,
{
    if x.rank() != 2 || x.rows() != y.len() || y.is_empty() {
        return Err(Error::invalid("inputs and labels must be non-empty and aligned"));
    }
    if classes == 0 || classes > params.head_width() {
        return Err(Error::invalid(format!(
            "{classes} classes do not fit a head of width {}",
            params.head_width()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    if !(config.lr > 0.0) || config.batch_size == 0 {
        return Err(Error::domain("lr must be positive and batch_size at least 1"));
    }
    let mut rng = rng_for(config.seed, 0);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut report = WctReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let bx = x.select_rows(chunk)?;
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            total += sgd_on_batch(params, &bx, &by, classes, config.lr)?;
            batches += 1;
        }
        report.loss.push(total / batches as f64);
        observe(epoch, params)?;
    }
    report.train_accuracy = accuracy(&params.layer_outputs(x)?.pop().unwrap(), y, classes);
    Ok(report)
}

fn sgd_on_batch(params: &mut ModelParams, x: &Tensor, y: &[usize], classes: usize, lr: f64) -> Result<f64> {
    let mut g = Graph::new();
    let nodes = params.to_graph(&mut g, true);
    let xs = g.constant(x.clone());
    let mut h = xs;
    for &(w, b) in &nodes.body {
        h = dense(&mut g, h, w, b, true)?;
    }
    let w = g.col_slice(nodes.head.0, 0, classes)?;
    let b = g.col_slice(nodes.head.1, 0, classes)?;
    let logits = dense(&mut g, h, w, b, false)?;
    let loss = g.softmax_xent(logits, y)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss is {value}")));
    }
    let grads = g.backward(loss, &nodes.flat())?;
    params.axpy(-lr, &grads)?;
    Ok(value)
}

fn accuracy(logits: &Tensor, y: &[usize], classes: usize) -> f64 {
    let hits = y
        .iter()
        .enumerate()
        .filter(|&(i, &t)| argmax(&logits.row(i)[..classes]) == t)
        .count();
    hits as f64 / y.len() as f64
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Single-level multi-task training: each task trains its own head group on
/// all of its samples, with the body shared. No inner loop.
pub fn mtl_step(params: &mut ModelParams, tasks: &[GroupedTask], lr: f64) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::invalid("task batch is empty"));
    }
    let mut g = Graph::new();
    let nodes = params.to_graph(&mut g, true);
    let mut losses = Vec::with_capacity(tasks.len());
    for item in tasks {
        let view = dynamic_head_view(&mut g, params, &nodes, item.task.way, item.group)?;
        for set in [&item.task.support, &item.task.query] {
            let x = g.constant(set.x.clone());
            let logits = view.logits(&mut g, x)?;
            losses.push(g.softmax_xent(logits, &set.y)?);
        }
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    let loss = g.scale(total, 1.0 / losses.len() as f64);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss is {value}")));
    }
    let grads = g.backward(loss, &nodes.flat())?;
    params.axpy(-lr, &grads)?;
    Ok(value)
}

/// Repeats [`mtl_step`] for `epochs` batches drawn from `source`.
pub fn mtl_train<S, O>(
    params: &mut ModelParams,
    lr: f64,
    epochs: usize,
    seed: u64,
    mut source: S,
    mut observe: O,
) -> Result<Vec<f64>>
where
    S: FnMut(usize, &ModelParams, &mut ChaCha8Rng) -> Result<Vec<Task>>,
    O: FnMut(usize, &ModelParams) -> Result<()>,
{
    let mut rng = rng_for(seed, 0);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let tasks = source(epoch, params, &mut rng)?;
        let batch = assign_groups(tasks, params, &mut rng)?;
        history.push(mtl_step(params, &batch, lr)?);
        observe(epoch, params)?;
    }
    Ok(history)
}
