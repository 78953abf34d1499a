use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dbscan, kmeans, sq_dist, ClusterAssignment, DbscanParams, NOISE};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metalearn::{LabeledSet, Task};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub samples_per_task: usize,
    pub num_tasks: usize,
    /// Share of each cluster placed in the support set.
    pub support_fraction: f64,
    /// Resampling attempts per task before giving up.
    pub max_retries: usize,
    /// Keep at most this many clusters (the largest ones).
    pub max_way: Option<usize>,
    /// Build each task from the nearest neighbours of this many random
    /// anchors in embedding space instead of a uniform draw from the pool.
    pub anchors: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            samples_per_task: 50,
            num_tasks: 1,
            support_fraction: 0.5,
            max_retries: 100,
            max_way: None,
            anchors: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.samples_per_task < 4 || self.samples_per_task > pool_size {
            return Err(Error::invalid(format!(
                "samples_per_task = {} must lie in [4, {pool_size}]",
                self.samples_per_task
            )));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(Error::domain("support_fraction must lie in (0, 1)"));
        }
        if self.max_way.is_some_and(|w| w < 2) {
            return Err(Error::domain("max_way must be at least 2"));
        }
        if let Some(a) = self.anchors {
            if a == 0 || a > self.samples_per_task {
                return Err(Error::domain("anchors must lie in [1, samples_per_task]"));
            }
        }
        Ok(())
    }
}

/// Builds pseudo-labelled tasks from an unlabelled pool.
///
/// `embed` maps pool rows to embedding rows and is called once. Task inputs are
/// the raw pool rows; targets are DBSCAN cluster indices over the embeddings.
/// `truth`, when given, is carried into each task for evaluation.
pub fn construct_pseudo_tasks<F>(
    pool: &Tensor,
    truth: Option<&[usize]>,
    embed: F,
    config: &SamplerConfig,
    params: &DbscanParams,
    seed: u64,
) -> Result<Vec<Task>>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
{
    params.validate()?;
    build_tasks(pool, truth, embed, config, params.min_samples, seed, |pts| dbscan(pts, params)).map_err(|e| match e {
        Error::RetryBudget { retries, .. } => Error::RetryBudget {
            retries,
            eps: params.eps,
            min_samples: params.min_samples,
        },
        other => other,
    })
}

/// Fixed-way variant: each task is partitioned by K-means into `k` clusters.
pub fn construct_kmeans_tasks<F>(
    pool: &Tensor,
    truth: Option<&[usize]>,
    embed: F,
    config: &SamplerConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<Task>>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
{
    let mut calls = 0u64;
    build_tasks(pool, truth, embed, config, 2, seed, |pts| {
        calls += 1;
        kmeans(pts, k, 100, derive_seed(seed, calls))
    })
}

fn build_tasks<F, C>(
    pool: &Tensor,
    truth: Option<&[usize]>,
    embed: F,
    config: &SamplerConfig,
    min_size: usize,
    seed: u64,
    mut cluster: C,
) -> Result<Vec<Task>>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
    C: FnMut(&[&[f64]]) -> Result<ClusterAssignment>,
{
    if pool.rank() != 2 {
        return Err(Error::invalid("pool must be a matrix"));
    }
    let n = pool.rows();
    config.validate(n)?;
    if truth.is_some_and(|t| t.len() != n) {
        return Err(Error::invalid("truth length must match pool rows"));
    }
    let emb = embed(pool)?;
    if emb.rank() != 2 || emb.rows() != n {
        return Err(Error::invalid(format!(
            "embedding of shape {:?} does not match {n} pool rows",
            emb.shape()
        )));
    }
    let mut rng = rng_for(seed, 0);
    let mut tasks = Vec::with_capacity(config.num_tasks);
    for _ in 0..config.num_tasks {
        let mut built = None;
        for _ in 0..config.max_retries.max(1) {
            let idx = sample_indices(&emb, config, &mut rng);
            let points: Vec<&[f64]> = idx.iter().map(|&i| emb.row(i)).collect();
            let assignment = cluster(&points)?;
            if let Some(task) = split_clusters(pool, truth, &idx, &assignment, min_size, config, &mut rng)? {
                built = Some(task);
                break;
            }
        }
        match built {
            Some(t) => tasks.push(t),
            None => {
                return Err(Error::RetryBudget {
                    retries: config.max_retries.max(1),
                    eps: f64::NAN,
                    min_samples: min_size,
                })
            }
        }
    }
    Ok(tasks)
}

fn sample_indices(emb: &Tensor, config: &SamplerConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = emb.rows();
    let want = config.samples_per_task;
    let Some(anchors) = config.anchors else {
        return rand::seq::index::sample(rng, n, want).into_vec();
    };
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(want);
    let centres = rand::seq::index::sample(rng, n, anchors).into_vec();
    for (a, &centre) in centres.iter().enumerate() {
        let quota = want / anchors + usize::from(a < want % anchors);
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| !taken[j])
            .map(|j| (sq_dist(emb.row(centre), emb.row(j)), j))
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, j) in order.iter().take(quota) {
            taken[j] = true;
            out.push(j);
        }
    }
    out.shuffle(rng);
    out
}

/// Turns one clustered sample into a task, or `None` when fewer than two
/// usable clusters survive.
fn split_clusters(
    pool: &Tensor,
    truth: Option<&[usize]>,
    idx: &[usize],
    assignment: &ClusterAssignment,
    min_size: usize,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Task>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignment.num_clusters];
    for (pos, &label) in assignment.labels.iter().enumerate() {
        if label != NOISE {
            members[label as usize].push(idx[pos]);
        }
    }
    // A cluster needs one support and one query point on top of the size floor.
    let min_size = min_size.max(2);
    let mut kept: Vec<Vec<usize>> = members.into_iter().filter(|m| m.len() >= min_size).collect();
    if let Some(max_way) = config.max_way {
        // Stable sort keeps discovery order among equal sizes.
        kept.sort_by(|a, b| b.len().cmp(&a.len()));
        kept.truncate(max_way);
    }
    if kept.len() < 2 {
        return Ok(None);
    }
    let way = kept.len();
    let (mut s_idx, mut s_y, mut q_idx, mut q_y) = (vec![], vec![], vec![], vec![]);
    for (label, mut m) in kept.into_iter().enumerate() {
        m.shuffle(rng);
        let n_sup = ((m.len() as f64 * config.support_fraction).round() as usize).clamp(1, m.len() - 1);
        for (k, &i) in m.iter().enumerate() {
            if k < n_sup {
                s_idx.push(i);
                s_y.push(label);
            } else {
                q_idx.push(i);
                q_y.push(label);
            }
        }
    }
    let support = LabeledSet::new(pool.select_rows(&s_idx)?, s_y)?;
    let query = LabeledSet::new(pool.select_rows(&q_idx)?, q_y)?;
    let mut task = Task::new(support, query, way)?;
    if let Some(t) = truth {
        task = task.with_truth(
            s_idx.iter().map(|&i| t[i]).collect(),
            q_idx.iter().map(|&i| t[i]).collect(),
        )?;
    }
    Ok(Some(task))
}
