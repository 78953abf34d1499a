//! Entropy-limited supervision.
//!
//! Labelling `m` balanced samples over `C` classes removes at most `m·ln C` nats
//! of uncertainty. Spending only `H` nats leaves each label correct with
//! probability `e^{H/m}/C`, so the expected number of correct labels is
//! `(m/C)·e^{H/m}`. All logarithms here are natural (nats).
//!
//! The class-balance assumption is not enforced: [`corrupt_labels`] accepts any
//! label vector, but the expectation above only describes balanced data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SLACK: f64 = 1e-12;

/// Annotation budget: `m` samples, `classes` classes, `entropy` nats spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBudget {
    m: usize,
    classes: usize,
    entropy: f64,
}

impl EntropyBudget {
    pub fn new(m: usize, classes: usize, entropy: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("sample count m must be positive"));
        }
        if classes < 2 {
            return Err(Error::domain(format!("class count {classes} must be at least 2")));
        }
        let max = Self::max_entropy(m, classes);
        if !entropy.is_finite() || entropy < 0.0 || entropy > max * (1.0 + SLACK) {
            return Err(Error::domain(format!(
                "entropy {entropy} outside [0, m·ln C] = [0, {max}]"
            )));
        }
        Ok(Self {
            m,
            classes,
            entropy: entropy.min(max),
        })
    }

    /// Full supervision: `H = m·ln C`.
    pub fn full(m: usize, classes: usize) -> Result<Self> {
        Self::new(m, classes, Self::max_entropy(m, classes))
    }

    /// Budget at a fraction of full supervision.
    pub fn fraction(m: usize, classes: usize, frac: f64) -> Result<Self> {
        Self::new(m, classes, frac * Self::max_entropy(m, classes))
    }

    pub fn max_entropy(m: usize, classes: usize) -> f64 {
        m as f64 * (classes as f64).ln()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Probability that a single label is correct, `e^{H/m}/C`, in `[1/C, 1]`.
    pub fn p_correct(&self) -> f64 {
        let c = self.classes as f64;
        if self.entropy >= Self::max_entropy(self.m, self.classes) {
            return 1.0;
        }
        (self.entropy / self.m as f64 - c.ln()).exp().clamp(1.0 / c, 1.0)
    }

    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            p_correct: self.p_correct(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p_correct: f64,
    pub seed: u64,
}

/// Expected number of correctly labelled samples, `(m/C)·e^{H/m}`.
pub fn expected_correct(budget: &EntropyBudget) -> f64 {
    budget.m as f64 * budget.p_correct()
}

/// Probability that a label is wrong, `1 − e^{H/m}/C`.
pub fn noise_probability(budget: &EntropyBudget) -> f64 {
    1.0 - budget.p_correct()
}

/// Inverse of [`noise_probability`]: `H = m·ln(C·(1 − p_noise))`.
pub fn entropy_for_noise(p_noise: f64, m: usize, classes: usize) -> Result<f64> {
    if classes < 2 {
        return Err(Error::domain(format!("class count {classes} must be at least 2")));
    }
    if m == 0 {
        return Err(Error::domain("sample count m must be positive"));
    }
    let c = classes as f64;
    let max_noise = (c - 1.0) / c;
    if !p_noise.is_finite() || p_noise < 0.0 || p_noise > max_noise + SLACK {
        return Err(Error::domain(format!(
            "noise probability {p_noise} outside [0, (C−1)/C] = [0, {max_noise}]"
        )));
    }
    Ok((m as f64 * (c * (1.0 - p_noise)).ln()).max(0.0))
}

/// Keeps each label with probability `e^{H/m}/C`; otherwise replaces it with a
/// uniform draw over the other `C − 1` classes. Deterministic in `seed`.
pub fn corrupt_labels(labels: &[usize], budget: &EntropyBudget, seed: u64) -> Result<Vec<usize>> {
    let c = budget.classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} outside [0, {c})")));
    }
    let p = budget.p_correct();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(labels
        .iter()
        .map(|&y| {
            if p >= 1.0 || rng.random::<f64>() < p {
                y
            } else {
                let r = rng.random_range(0..c - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            }
        })
        .collect())
}

/// Probability that `c2` samples drawn without replacement from `c1` classes of
/// `k` samples each all come from different classes:
///
/// `P = c1!·k^{c2}·(c1·k − c2)! / ((c1 − c2)!·(c1·k)!)`, evaluated in log space.
pub fn distinct_class_probability(c1: usize, c2: usize, k: usize) -> Result<f64> {
    if c2 == 0 || k == 0 {
        return Err(Error::domain("c2 and k must be positive"));
    }
    if c2 > c1 {
        return Err(Error::domain(format!("c2 = {c2} exceeds c1 = {c1}")));
    }
    if c2 == 1 {
        return Ok(1.0);
    }
    let lf = |n: usize| ln_gamma(n as f64 + 1.0);
    let total = c1 * k;
    let log_p = lf(c1) + c2 as f64 * (k as f64).ln() + lf(total - c2) - lf(c1 - c2) - lf(total);
    Ok(log_p.exp().min(1.0))
}
