//! Density-based (DBSCAN) and centroid-based (K-means) clustering over
//! embedding vectors, and pseudo-task construction from the clusters.
//!
//! Distances are Euclidean on the raw vectors; nothing is normalised.

mod tasks;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use tasks::{construct_kmeans_tasks, construct_pseudo_tasks, SamplerConfig};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Label for points that belong to no cluster.
pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Scan radius (inclusive).
    pub eps: f64,
    /// Points within `eps`, counting the point itself, needed to be a core point.
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            min_samples: 15,
        }
    }
}

impl DbscanParams {
    pub fn new(eps: f64, min_samples: usize) -> Result<Self> {
        let p = Self { eps, min_samples };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::domain(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_samples == 0 {
            return Err(Error::domain("min_samples must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per point, or [`NOISE`].
    pub labels: Vec<i64>,
    pub core_mask: Vec<bool>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

fn check_dims<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::Shape {
            op: "cluster",
            lhs: vec![dim],
            rhs: vec![bad.as_ref().len()],
        });
    }
    Ok(dim)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN with an exhaustive neighbourhood scan.
///
/// Clusters are grown in index order. A border point reachable from several
/// clusters joins the first one that claims it.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], params: &DbscanParams) -> Result<ClusterAssignment> {
    params.validate()?;
    check_dims(points)?;
    let n = points.len();
    let eps2 = params.eps * params.eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| sq_dist(points[i].as_ref(), points[j].as_ref()) <= eps2)
                .collect()
        })
        .collect();
    let core_mask: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_samples).collect();

    let mut labels = vec![NOISE; n];
    let mut cluster = 0i64;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !core_mask[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = cluster;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbours[p] {
                if labels[q] != NOISE {
                    continue;
                }
                labels[q] = cluster;
                if core_mask[q] {
                    stack.push(q);
                }
            }
        }
        cluster += 1;
    }
    Ok(ClusterAssignment {
        labels,
        core_mask,
        num_clusters: cluster as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmeansResult {
    pub assignment: ClusterAssignment,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KmeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    Ok(kmeans_detailed(points, k, max_iters, seed)?.assignment)
}

pub fn kmeans_detailed<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansResult> {
    let dim = check_dims(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    let mut rng = rng_for(seed, 0);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(points[first].as_ref().to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = Some(i);
                    break;
                }
                r -= w;
            }
            pick.or_else(|| d2.iter().rposition(|&w| w > 0.0))
        } else {
            None
        };
        let pick = pick.unwrap_or_else(|| chosen.iter().position(|c| !c).expect("k <= n"));
        chosen[pick] = true;
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let labels = points
            .iter()
            .map(|p| {
                let (best, d) = centroids
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, sq_dist(p.as_ref(), c)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                inertia += d;
                best
            })
            .collect();
        (labels, inertia)
    };

    let (mut labels, inertia) = assign(&centroids);
    let mut history = vec![inertia];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let (next, inertia) = assign(&centroids);
        history.push(inertia);
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }

    // Renumber so that every id in 0..num_clusters occurs.
    let mut remap = vec![None; k];
    let mut next_id = 0i64;
    let labels: Vec<i64> = labels
        .iter()
        .map(|&l| {
            *remap[l].get_or_insert_with(|| {
                next_id += 1;
                next_id - 1
            })
        })
        .collect();
    let mut kept = vec![Vec::new(); next_id as usize];
    for (old, new) in remap.iter().enumerate() {
        if let Some(id) = new {
            kept[*id as usize] = centroids[old].clone();
        }
    }
    Ok(KmeansResult {
        assignment: ClusterAssignment {
            labels,
            core_mask: vec![true; n],
            num_clusters: next_id as usize,
        },
        centroids: kept,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn blob(center: (f64, f64), n: usize, spread: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 2.399;
                let r = spread * ((i % 5) as f64 / 5.0);
                vec![center.0 + r * a.cos(), center.1 + r * a.sin()]
            })
            .collect()
    }

    #[test]
    fn two_blobs_no_noise() {
        let mut pts = blob((0.0, 0.0), 20, 0.4);
        pts.extend(blob((10.0, 0.0), 20, 0.4));
        let a = dbscan(&pts, &DbscanParams::new(1.0, 5).unwrap()).unwrap();
        assert_eq!(a.num_clusters, 2);
        assert_eq!(a.noise_count(), 0);
        assert!(a.labels[..20].iter().all(|&l| l == a.labels[0]));
        assert!(a.labels[20..].iter().all(|&l| l == a.labels[20]));
    }

    #[test]
    fn sparse_points_are_noise() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 5.0]).collect();
        let a = dbscan(&pts, &DbscanParams::new(1.0, 2).unwrap()).unwrap();
        assert_eq!(a.num_clusters, 0);
        assert_eq!(a.noise_count(), 10);
        assert!(a.core_mask.iter().all(|c| !c));
    }

    #[test]
    fn single_point_self_neighbourhood() {
        let a = dbscan(&[vec![0.5, 0.5]], &DbscanParams::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(a.num_clusters, 1);
        assert_eq!(a.labels, vec![0]);
        assert!(a.core_mask[0]);
    }

    #[test]
    fn empty_and_mismatched_input() {
        let empty: Vec<Vec<f64>> = vec![];
        let a = dbscan(&empty, &DbscanParams::default()).unwrap();
        assert!(a.is_empty());
        assert!(dbscan(&[vec![0.0], vec![0.0, 1.0]], &DbscanParams::default()).is_err());
        assert!(DbscanParams::new(0.0, 3).is_err());
        assert!(DbscanParams::new(1.0, 0).is_err());
    }

    #[test]
    fn kmeans_one_cluster_per_point() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans_detailed(&pts, 7, 50, 3).unwrap();
        assert_eq!(r.assignment.num_clusters, 7);
        assert_eq!(r.inertia(), 0.0);
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        assert!(kmeans(&[vec![0.0], vec![1.0]], 3, 10, 0).is_err());
    }

    /// Core/noise sets and core connectivity by transitive closure.
    fn oracle(pts: &[Vec<f64>], p: &DbscanParams) -> (Vec<bool>, Vec<bool>, Vec<Vec<bool>>) {
        let n = pts.len();
        let near = |i: usize, j: usize| sq_dist(&pts[i], &pts[j]) <= p.eps * p.eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= p.min_samples).collect();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = core[i] && core[j] && near(i, j);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let noise: Vec<bool> = (0..n).map(|i| !(0..n).any(|j| core[j] && near(i, j))).collect();
        (core, noise, reach)
    }

    fn random_points() -> impl Strategy<Value = (Vec<Vec<f64>>, f64, usize)> {
        (1usize..=64, 1usize..=3)
            .prop_flat_map(|(n, d)| {
                (
                    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n),
                    0.2..1.5f64,
                    1usize..=6,
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn dbscan_matches_reachability_oracle((pts, eps, min_samples) in random_points()) {
            let p = DbscanParams::new(eps, min_samples).unwrap();
            let a = dbscan(&pts, &p).unwrap();
            let (core, noise, reach) = oracle(&pts, &p);
            prop_assert_eq!(&a.core_mask, &core);
            for i in 0..pts.len() {
                prop_assert_eq!(a.labels[i] == NOISE, noise[i]);
                for j in 0..pts.len() {
                    if core[i] && core[j] {
                        prop_assert_eq!(a.labels[i] == a.labels[j], reach[i][j]);
                    }
                }
                if !core[i] && !noise[i] {
                    let l = a.labels[i];
                    prop_assert!((0..pts.len()).any(|j| core[j] && a.labels[j] == l
                        && sq_dist(&pts[i], &pts[j]) <= eps * eps));
                }
            }
            let sizes = a.cluster_sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
        }

        #[test]
        fn core_and_noise_invariant_under_permutation(
            (pts, eps, min_samples) in random_points(),
            shift in 0usize..64,
        ) {
            let p = DbscanParams::new(eps, min_samples).unwrap();
            let n = pts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let a = dbscan(&pts, &p).unwrap();
            let b = dbscan(&permuted, &p).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(a.core_mask[i], b.core_mask[k]);
                prop_assert_eq!(a.labels[i] == NOISE, b.labels[k] == NOISE);
            }
        }

        #[test]
        fn kmeans_inertia_never_increases(
            pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 3..60),
            k in 1usize..4,
            seed in any::<u64>(),
        ) {
            let r = kmeans_detailed(&pts, k, 100, seed).unwrap();
            for w in r.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
            }
            prop_assert!(r.assignment.labels.iter().all(|&l| l >= 0));
        }
    }

    #[test]
    fn kmeans_two_blobs_match_best_bipartition() {
        let mut pts = blob((0.0, 0.0), 8, 1.0);
        pts.extend(blob((6.0, 2.0), 8, 1.0));
        let n = pts.len();
        let cost = |mask: u32| -> f64 {
            (0..2)
                .map(|side| {
                    let g: Vec<&Vec<f64>> = (0..n).filter(|&i| (mask >> i & 1) == side).map(|i| &pts[i]).collect();
                    if g.is_empty() {
                        return 0.0;
                    }
                    let c: Vec<f64> = (0..2).map(|d| g.iter().map(|p| p[d]).sum::<f64>() / g.len() as f64).collect();
                    g.iter().map(|p| sq_dist(p, &c)).sum::<f64>()
                })
                .sum()
        };
        let best = (1..(1u32 << n) - 1).min_by(|&a, &b| cost(a).total_cmp(&cost(b))).unwrap();
        let a = kmeans(&pts, 2, 100, 5).unwrap();
        for i in 0..n {
            for j in 0..n {
                let same_best = (best >> i & 1) == (best >> j & 1);
                assert_eq!(a.labels[i] == a.labels[j], same_best);
            }
        }
    }

    #[test]
    fn kmeans_deterministic() {
        let mut pts = blob((0.0, 0.0), 15, 1.0);
        pts.extend(blob((3.0, 1.0), 15, 1.0));
        assert_eq!(kmeans(&pts, 3, 100, 9).unwrap(), kmeans(&pts, 3, 100, 9).unwrap());
    }
}
