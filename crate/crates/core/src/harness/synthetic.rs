use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metalearn::{LabeledSet, Task};
use crate::rng::{rng_for, stream};

/// Gaussian class clusters with unit within-class spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Minimum distance between class centroids.
    pub separation: f64,
    /// Centroids live in a random subspace of this dimension; the remaining
    /// directions carry only within-class noise. `None` uses all of `dim`.
    pub latent_dim: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            per_class: 50,
            separation: 6.0,
            latent_dim: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.per_class < 2 || self.dim == 0 {
            return Err(Error::domain("need num_classes >= 2, per_class >= 2 and dim >= 1"));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::domain(format!("separation must be finite and >= 0, got {}", self.separation)));
        }
        if self.latent_dim.is_some_and(|l| l == 0 || l > self.dim) {
            return Err(Error::domain("latent_dim must lie in [1, dim]"));
        }
        Ok(())
    }

    fn latent(&self) -> usize {
        self.latent_dim.unwrap_or(self.dim)
    }
}

/// Labelled samples, grouped by class in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    /// Row indices of each class.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes()];
        for (i, &c) in self.y.iter().enumerate() {
            idx[c].push(i);
        }
        idx
    }
}

const PACKING_ATTEMPTS: usize = 10_000;

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Pool> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, stream::DATA);
    let latent = spec.latent();
    let basis = orthonormal_basis(spec.dim, latent, &mut rng);

    // Random sequential packing inside a ball sized to the class count.
    let radius = spec.separation * (spec.num_classes as f64).powf(1.0 / latent as f64);
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    while coords.len() < spec.num_classes {
        let mut placed = false;
        for _ in 0..PACKING_ATTEMPTS {
            let cand = sample_ball(latent, radius, &mut rng);
            let ok = coords.iter().all(|c| {
                c.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= spec.separation.powi(2)
            });
            if ok {
                coords.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::domain(format!(
                "cannot place {} centroids {} apart in {latent} dimensions",
                spec.num_classes, spec.separation
            )));
        }
    }
    let centroids: Vec<Vec<f64>> = coords
        .iter()
        .map(|z| (0..spec.dim).map(|r| (0..latent).map(|c| basis[(r, c)] * z[c]).sum()).collect())
        .collect();

    let mut data = Vec::with_capacity(spec.num_classes * spec.per_class * spec.dim);
    let mut y = Vec::with_capacity(spec.num_classes * spec.per_class);
    for (c, mu) in centroids.iter().enumerate() {
        for _ in 0..spec.per_class {
            data.extend(mu.iter().map(|m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + e
            }));
            y.push(c);
        }
    }
    Ok(Pool {
        x: Tensor::matrix(y.len(), spec.dim, data)?,
        y,
        centroids,
    })
}

fn sample_ball(d: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    g.into_iter().map(|v| v / norm * r).collect()
}

fn orthonormal_basis(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, k, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Class-disjoint split by fractions (train, val); the rest is test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_classes(num_classes: usize, train: f64, val: f64, seed: u64) -> Result<ClassSplit> {
    if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
        return Err(Error::domain("split fractions must satisfy 0 < train, 0 <= val, train + val < 1"));
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut rng_for(seed, stream::DATA ^ 0xC1A5));
    let n_train = (num_classes as f64 * train).round() as usize;
    let n_val = (num_classes as f64 * val).round() as usize;
    if n_train < 2 || n_train + n_val >= num_classes {
        return Err(Error::domain(format!("{num_classes} classes are too few for this split")));
    }
    let mut s = ClassSplit {
        train: classes[..n_train].to_vec(),
        val: classes[n_train..n_train + n_val].to_vec(),
        test: classes[n_train + n_val..].to_vec(),
    };
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}

/// Samples an N-way episode. `by_class` decides class membership (it may be
/// built from corrupted labels); targets are positions in the drawn class
/// list and `truth` is carried along for evaluation.
#[allow(clippy::too_many_arguments)]
pub fn sample_episode(
    x: &Tensor,
    truth: &[usize],
    by_class: &[Vec<usize>],
    classes: &[usize],
    way: usize,
    shots: usize,
    queries: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    let eligible: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|&c| by_class.get(c).is_some_and(|m| m.len() >= shots + queries))
        .collect();
    if eligible.len() < way {
        return Err(Error::invalid(format!(
            "only {} classes have {} samples; need {way}",
            eligible.len(),
            shots + queries
        )));
    }
    let chosen: Vec<usize> = eligible.choose_multiple(rng, way).copied().collect();
    let (mut s_idx, mut s_y, mut q_idx, mut q_y) = (vec![], vec![], vec![], vec![]);
    for (pos, &c) in chosen.iter().enumerate() {
        let picks: Vec<usize> = by_class[c].choose_multiple(rng, shots + queries).copied().collect();
        for (k, &i) in picks.iter().enumerate() {
            if k < shots {
                s_idx.push(i);
                s_y.push(pos);
            } else {
                q_idx.push(i);
                q_y.push(pos);
            }
        }
    }
    let support = LabeledSet::new(x.select_rows(&s_idx)?, s_y)?;
    let query = LabeledSet::new(x.select_rows(&q_idx)?, q_y)?;
    Task::new(support, query, way)?.with_truth(
        s_idx.iter().map(|&i| truth[i]).collect(),
        q_idx.iter().map(|&i| truth[i]).collect(),
    )
}

/// Row indices grouped by label.
pub fn index_by_label(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut idx = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        idx[c].push(i);
    }
    idx
}
