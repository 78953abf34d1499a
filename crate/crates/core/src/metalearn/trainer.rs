use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{body_forward, dense, ModelNodes, ModelParams};
use super::task::{LabeledSet, Task};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::stability::meta_scaler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    /// Inner steps stay on the graph, so the outer gradient includes them.
    #[default]
    SecondOrder,
    /// Inner gradients are treated as constants.
    FirstOrder,
    /// Only the head slice adapts in the inner loop.
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub eta: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub epochs: usize,
    pub mode: AdaptMode,
    pub scaler_enabled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            eta: 0.001,
            inner_steps: 5,
            meta_batch: 8,
            epochs: 30_000,
            mode: AdaptMode::SecondOrder,
            scaler_enabled: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.eta > 0.0) {
            return Err(Error::domain(format!(
                "learning rates must be positive (alpha={}, eta={})",
                self.alpha, self.eta
            )));
        }
        if self.inner_steps == 0 || self.meta_batch == 0 {
            return Err(Error::domain("inner_steps and meta_batch must be at least 1"));
        }
        Ok(())
    }
}

/// Parameters a task adapts: the body and its slice of the head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastWeights {
    pub body: Vec<(NodeId, NodeId)>,
    pub head: (NodeId, NodeId),
}

impl FastWeights {
    fn flat(&self) -> Vec<NodeId> {
        self.body
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    pub fn logits(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = body_forward(g, &self.body, x)?;
        dense(g, h, self.head.0, self.head.1, false)
    }

    pub fn embed(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        body_forward(g, &self.body, x)
    }
}

/// Restricts the head to columns `[group·c_max, group·c_max + c)`.
pub fn dynamic_head_view(
    g: &mut Graph,
    params: &ModelParams,
    nodes: &ModelNodes,
    c: usize,
    group: usize,
) -> Result<FastWeights> {
    if c < 2 || c > params.c_max {
        return Err(Error::invalid(format!("way {c} outside [2, {}]", params.c_max)));
    }
    if group >= params.num_groups {
        return Err(Error::invalid(format!("group {group} >= {}", params.num_groups)));
    }
    let start = group * params.c_max;
    let w = g.col_slice(nodes.head.0, start, c)?;
    let b = g.col_slice(nodes.head.1, start, c)?;
    Ok(FastWeights {
        body: nodes.body.clone(),
        head: (w, b),
    })
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub fast: FastWeights,
    /// Weights before the first step and after each step.
    pub trajectory: Vec<FastWeights>,
    pub support_losses: Vec<f64>,
}

/// Gradient steps of cross-entropy on the support set, unrolled on `g`.
pub fn inner_adapt(
    g: &mut Graph,
    start: &FastWeights,
    support: &LabeledSet,
    alpha: f64,
    steps: usize,
    mode: AdaptMode,
) -> Result<Adapted> {
    if support.is_empty() {
        return Err(Error::invalid("empty support set"));
    }
    let x = g.constant(support.x.clone());
    let mut fast = start.clone();
    let mut trajectory = vec![fast.clone()];
    let mut support_losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let logits = fast.logits(g, x)?;
        let loss = g.softmax_xent(logits, &support.y)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "inner loss is {value} at step {step} (alpha={alpha}, support size {})",
                support.len()
            )));
        }
        support_losses.push(value);
        let targets: Vec<NodeId> = match mode {
            AdaptMode::HeadOnly => vec![fast.head.0, fast.head.1],
            _ => fast.flat(),
        };
        let grads = g.grad(loss, &targets, mode == AdaptMode::SecondOrder)?;
        let updated = targets
            .iter()
            .zip(&grads)
            .map(|(&p, &gr)| g.sgd_update(p, gr, alpha))
            .collect::<Result<Vec<_>>>()?;
        fast = match mode {
            AdaptMode::HeadOnly => FastWeights {
                body: fast.body.clone(),
                head: (updated[0], updated[1]),
            },
            _ => {
                let pairs: Vec<(NodeId, NodeId)> = updated.chunks(2).map(|c| (c[0], c[1])).collect();
                let (head, body) = pairs.split_last().unwrap();
                FastWeights {
                    body: body.to_vec(),
                    head: *head,
                }
            }
        };
        trajectory.push(fast.clone());
    }
    Ok(Adapted {
        fast,
        trajectory,
        support_losses,
    })
}

/// Mean cross-entropy of the adapted weights on the query set.
pub fn query_loss(g: &mut Graph, fast: &FastWeights, query: &LabeledSet) -> Result<NodeId> {
    if query.is_empty() {
        return Err(Error::invalid("empty query set"));
    }
    let x = g.constant(query.x.clone());
    let logits = fast.logits(g, x)?;
    g.softmax_xent(logits, &query.y)
}

/// A task paired with the head group it trains.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedTask {
    pub task: Task,
    pub group: usize,
}

/// Outcome of one task's adaptation and query evaluation on a graph.
#[derive(Debug, Clone)]
pub struct TaskObjective {
    pub loss: NodeId,
    pub sigma: f64,
}

/// Adapts on the support set and returns the query loss node together with
/// the task's meta-scaler weight.
pub fn task_objective(
    g: &mut Graph,
    params: &ModelParams,
    nodes: &ModelNodes,
    item: &GroupedTask,
    config: &TrainConfig,
) -> Result<TaskObjective> {
    let view = dynamic_head_view(g, params, nodes, item.task.way, item.group)?;
    let adapted = inner_adapt(g, &view, &item.task.support, config.alpha, config.inner_steps, config.mode)?;
    let loss = query_loss(g, &adapted.fast, &item.task.query)?;
    let sigma = if config.scaler_enabled {
        scaler_for(g, &adapted, &item.task.query.x)?
    } else {
        1.0
    };
    Ok(TaskObjective {
        loss,
        sigma,
    })
}

fn scaler_for(g: &mut Graph, adapted: &Adapted, query_x: &Tensor) -> Result<f64> {
    let n = adapted.trajectory.len();
    if n < 3 {
        return meta_scaler(query_x, None);
    }
    let x = g.constant(query_x.clone());
    let last = adapted.trajectory[n - 1].embed(g, x)?;
    let prev = adapted.trajectory[n - 2].embed(g, x)?;
    let (last, prev) = (g.value(last).clone(), g.value(prev).clone());
    meta_scaler(&last, Some(&prev))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterGradient {
    /// `Σ σ_i ∇L_i`, in [`ModelParams::tensors`] order.
    pub grads: Vec<Tensor>,
    pub sigmas: Vec<f64>,
    pub query_losses: Vec<f64>,
}

/// Scaled sum of per-task outer gradients, evaluated task by task in order.
pub fn outer_gradient(params: &ModelParams, tasks: &[GroupedTask], config: &TrainConfig) -> Result<OuterGradient> {
    let mut total: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut sigmas = Vec::with_capacity(tasks.len());
    let mut query_losses = Vec::with_capacity(tasks.len());
    for item in tasks {
        let mut g = Graph::new();
        let nodes = params.to_graph(&mut g, true);
        let obj = task_objective(&mut g, params, &nodes, item, config)?;
        let value = g.value(obj.loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("query loss is {value}")));
        }
        let grads = g.backward(obj.loss, &nodes.flat())?;
        for (acc, gr) in total.iter_mut().zip(&grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(gr.data()) {
                *a += obj.sigma * v;
            }
        }
        sigmas.push(obj.sigma);
        query_losses.push(value);
    }
    Ok(OuterGradient {
        grads: total,
        sigmas,
        query_losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStepReport {
    pub sigmas: Vec<f64>,
    pub query_losses: Vec<f64>,
}

/// One outer update `φ ← φ − (η/n)·Σ σ_i ∇L_i`.
pub fn meta_step(params: &mut ModelParams, tasks: &[GroupedTask], config: &TrainConfig) -> Result<MetaStepReport> {
    if tasks.is_empty() {
        return Err(Error::invalid("meta-batch is empty"));
    }
    let outer = outer_gradient(params, tasks, config)?;
    params.axpy(-config.eta / tasks.len() as f64, &outer.grads)?;
    if !params.is_finite() {
        return Err(Error::Numeric("meta parameters became non-finite".into()));
    }
    Ok(MetaStepReport {
        sigmas: outer.sigmas,
        query_losses: outer.query_losses,
    })
}

/// Random group per task and a random map from cluster ids to head outputs.
pub fn assign_groups(tasks: Vec<Task>, params: &ModelParams, rng: &mut ChaCha8Rng) -> Result<Vec<GroupedTask>> {
    tasks
        .into_iter()
        .map(|task| {
            if task.way > params.c_max {
                return Err(Error::invalid(format!("task way {} exceeds c_max {}", task.way, params.c_max)));
            }
            let mut perm: Vec<usize> = (0..task.way).collect();
            perm.shuffle(rng);
            let group = rng.random_range(0..params.num_groups);
            Ok(GroupedTask {
                task: task.relabel(&perm)?,
                group,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean query loss per epoch.
    pub query_loss: Vec<f64>,
    /// Mean σ per epoch.
    pub mean_sigma: Vec<f64>,
}

/// Runs `config.epochs` outer steps. `source` supplies each meta-batch; `observe`
/// sees the parameters after every step.
pub fn meta_train<S, O>(params: &mut ModelParams, config: &TrainConfig, mut source: S, mut observe: O) -> Result<TrainReport>
where
    S: FnMut(usize, &ModelParams, &mut ChaCha8Rng) -> Result<Vec<Task>>,
    O: FnMut(usize, &ModelParams) -> Result<()>,
{
    config.validate()?;
    let mut rng = rng_for(config.seed, 0);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let tasks = source(epoch, params, &mut rng)?;
        let batch = assign_groups(tasks, params, &mut rng)?;
        let step = meta_step(params, &batch, config)?;
        let n = step.sigmas.len() as f64;
        report.query_loss.push(step.query_losses.iter().sum::<f64>() / n);
        report.mean_sigma.push(step.sigmas.iter().sum::<f64>() / n);
        observe(epoch, params)?;
    }
    Ok(report)
}
