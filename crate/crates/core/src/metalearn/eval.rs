use serde::{Deserialize, Serialize};

use super::baseline::argmax;
use super::model::ModelParams;
use super::task::Task;
use super::trainer::{dynamic_head_view, inner_adapt, AdaptMode};
use crate::assignment::matched_accuracy;
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};

/// How a trained model is turned into a classifier for each episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalProtocol {
    /// Inner-loop fine-tuning of head group 0 and the body on the support set.
    Finetune { alpha: f64, steps: usize },
    /// Fresh logistic regression on the support embeddings.
    Logistic { lr: f64, steps: usize },
    /// No adaptation; group-0 predictions are matched to the true labels by
    /// optimal assignment.
    ZeroShot,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol::Logistic { lr: 0.1, steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
}

impl EvalSummary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        if accuracies.is_empty() {
            return Self {
                mean: 0.0,
                ci95: 0.0,
                accuracies,
            };
        }
        let mean = accuracies.iter().sum::<f64>() / n;
        let ci95 = if accuracies.len() > 1 {
            let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95, accuracies }
    }
}

/// Query accuracy over episodes labelled with their true classes `0..way`.
pub fn evaluate_episodes(params: &ModelParams, episodes: &[Task], protocol: &EvalProtocol) -> Result<EvalSummary> {
    let accuracies = episodes
        .iter()
        .map(|t| episode_accuracy(params, t, protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_accuracies(accuracies))
}

pub fn episode_accuracy(params: &ModelParams, task: &Task, protocol: &EvalProtocol) -> Result<f64> {
    let pred = match *protocol {
        EvalProtocol::Finetune { alpha, steps } => {
            let mut g = Graph::new();
            let nodes = params.to_graph(&mut g, true);
            let view = dynamic_head_view(&mut g, params, &nodes, task.way, 0)?;
            let adapted = inner_adapt(&mut g, &view, &task.support, alpha, steps, AdaptMode::FirstOrder)?;
            let x = g.constant(task.query.x.clone());
            let logits = adapted.fast.logits(&mut g, x)?;
            predictions(g.value(logits))
        }
        EvalProtocol::Logistic { lr, steps } => {
            let support = params.embed(&task.support.x)?;
            let query = params.embed(&task.query.x)?;
            let (w, b) = fit_logistic(&support, &task.support.y, task.way, lr, steps)?;
            let mut g = Graph::new();
            let (x, w, b) = (g.constant(query), g.constant(w), g.constant(b));
            let z = g.matmul(x, w)?;
            let logits = g.add_row(z, b)?;
            predictions(g.value(logits))
        }
        EvalProtocol::ZeroShot => {
            if task.way > params.c_max {
                return Err(Error::invalid(format!("way {} exceeds c_max {}", task.way, params.c_max)));
            }
            let logits = params.layer_outputs(&task.query.x)?.pop().unwrap();
            let pred: Vec<usize> = (0..logits.rows()).map(|i| argmax(&logits.row(i)[..task.way])).collect();
            return Ok(matched_accuracy(&pred, &task.query.y));
        }
    };
    let hits = pred.iter().zip(&task.query.y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}

/// Full-batch gradient descent on softmax regression from zero weights.
pub fn fit_logistic(x: &Tensor, y: &[usize], classes: usize, lr: f64, steps: usize) -> Result<(Tensor, Tensor)> {
    let mut w = Tensor::zeros(&[x.cols(), classes]);
    let mut b = Tensor::zeros(&[1, classes]);
    for _ in 0..steps {
        let mut g = Graph::new();
        let (xs, wn, bn) = (g.constant(x.clone()), g.param(w.clone()), g.param(b.clone()));
        let z = g.matmul(xs, wn)?;
        let logits = g.add_row(z, bn)?;
        let loss = g.softmax_xent(logits, y)?;
        let grads = g.backward(loss, &[wn, bn])?;
        for (p, gr) in [(&mut w, &grads[0]), (&mut b, &grads[1])] {
            for (v, d) in p.data_mut().iter_mut().zip(gr.data()) {
                *v -= lr * d;
            }
        }
    }
    Ok((w, b))
}
