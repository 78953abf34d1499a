//! Independent reference implementations shared by integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Rows of `x` with a trailing 1 for the bias.
fn augmented(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect()).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax regression with parameters `theta[(j, k)]`, `j` over input
/// features plus bias and `k` over classes, flattened row-major.
pub struct SoftmaxRegression {
    pub features: usize,
    pub classes: usize,
}

impl SoftmaxRegression {
    fn probs(&self, theta: &DVector<f64>, xa: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let z: Vec<f64> = (0..c).map(|k| xa.iter().enumerate().map(|(j, v)| v * theta[j * c + k]).sum()).collect();
        softmax(&z)
    }

    pub fn loss(&self, theta: &DVector<f64>, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let xa = augmented(x);
        xa.iter().zip(y).map(|(r, &t)| -self.probs(theta, r)[t].ln()).sum::<f64>() / y.len() as f64
    }

    /// `Xᵀ(P − Y)/n` over the augmented inputs.
    pub fn gradient(&self, theta: &DVector<f64>, x: &[Vec<f64>], y: &[usize]) -> DVector<f64> {
        let c = self.classes;
        let xa = augmented(x);
        let mut g = DVector::zeros(theta.len());
        for (r, &t) in xa.iter().zip(y) {
            let p = self.probs(theta, r);
            for (j, v) in r.iter().enumerate() {
                for k in 0..c {
                    let e = p[k] - if k == t { 1.0 } else { 0.0 };
                    g[j * c + k] += v * e;
                }
            }
        }
        g / y.len() as f64
    }

    /// `(1/n) Σ x̃x̃ᵀ ⊗ (diag p − ppᵀ)`.
    pub fn hessian(&self, theta: &DVector<f64>, x: &[Vec<f64>]) -> DMatrix<f64> {
        let c = self.classes;
        let xa = augmented(x);
        let n = theta.len();
        let mut h = DMatrix::zeros(n, n);
        for r in &xa {
            let p = self.probs(theta, r);
            for (j, a) in r.iter().enumerate() {
                for (jj, b) in r.iter().enumerate() {
                    for k in 0..c {
                        for kk in 0..c {
                            let s = if k == kk { p[k] } else { 0.0 } - p[k] * p[kk];
                            h[(j * c + k, jj * c + kk)] += a * b * s;
                        }
                    }
                }
            }
        }
        h / x.len() as f64
    }

    /// Second-order MAML gradient of the post-adaptation query loss:
    /// `Π (I − αH(θ_t)) ∇L_q(θ_T)` with the product taken from the last step back.
    pub fn maml_gradient(
        &self,
        theta: &DVector<f64>,
        support: (&[Vec<f64>], &[usize]),
        query: (&[Vec<f64>], &[usize]),
        alpha: f64,
        steps: usize,
    ) -> DVector<f64> {
        let mut path = vec![theta.clone()];
        for _ in 0..steps {
            let t = path.last().unwrap();
            path.push(t - alpha * self.gradient(t, support.0, support.1));
        }
        let mut g = self.gradient(path.last().unwrap(), query.0, query.1);
        let eye = DMatrix::<f64>::identity(theta.len(), theta.len());
        for t in path[..steps].iter().rev() {
            g = (&eye - alpha * self.hessian(t, support.0)) * g;
        }
        g
    }
}

pub struct DensityOracle {
    pub core: Vec<bool>,
    pub noise: Vec<bool>,
    /// `connected[i][j]`: core points `i` and `j` are density-connected.
    pub connected: Vec<Vec<bool>>,
}

/// Core, noise and core connectivity by transitive closure, `O(n³)`.
pub fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_samples: usize) -> DensityOracle {
    let n = points.len();
    let near = |a: usize, b: usize| -> bool {
        points[a].iter().zip(&points[b]).map(|(u, v)| (u - v).powi(2)).sum::<f64>() <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples).collect();
    let mut connected = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            connected[i][j] = core[i] && core[j] && (i == j || near(i, j));
        }
    }
    for k in 0..n {
        for i in 0..n {
            if connected[i][k] {
                for j in 0..n {
                    if connected[k][j] {
                        connected[i][j] = true;
                    }
                }
            }
        }
    }
    let noise = (0..n).map(|p| !core[p] && !(0..n).any(|q| core[q] && near(p, q))).collect();
    DensityOracle { core, noise, connected }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
