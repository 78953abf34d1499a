//! Uniform-stability generalization bounds for whole-class training (WCT) and
//! meta-learning when labels come from a limited entropy budget.
//!
//! Only the correctly labelled `m·e^{H/m}/C` samples are credited inside the
//! square root. The `4mβ` and `4nβ̃` factors keep the raw `m` and `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STABILITY_CONSTANT: f64 = 0.1;
pub const DEFAULT_LOSS_BOUND: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Sample count.
    pub m: usize,
    /// Classes seen by whole-class training.
    pub c1: usize,
    /// Classes per task.
    pub c2: usize,
    /// Samples per class within a task.
    pub k: usize,
    /// Number of tasks.
    pub n: f64,
    /// Annotation entropy in nats.
    pub entropy: f64,
    /// Single-task / base-learner uniform stability.
    pub beta: f64,
    /// Meta-learner uniform stability.
    pub beta_tilde: f64,
    /// Loss bound `M`.
    pub loss_bound: f64,
    pub delta: f64,
}

impl BoundInputs {
    /// Uses the worst-case task count `n = m/(k·c2)` and stabilities
    /// `β = c/√m`, `β̃ = c/√n` with the default constant, `M = 1`, `δ = 0.01`.
    pub fn with_defaults(m: usize, c1: usize, c2: usize, k: usize, entropy: f64) -> Result<Self> {
        Self::with_stability_constant(m, c1, c2, k, entropy, DEFAULT_STABILITY_CONSTANT)
    }

    pub fn with_stability_constant(
        m: usize,
        c1: usize,
        c2: usize,
        k: usize,
        entropy: f64,
        c: f64,
    ) -> Result<Self> {
        if k == 0 || c2 == 0 {
            return Err(Error::domain("k and c2 must be positive"));
        }
        let n = worst_case_tasks(m, c2, k);
        let b = Self {
            m,
            c1,
            c2,
            k,
            n,
            entropy,
            beta: c / (m as f64).sqrt(),
            beta_tilde: c / n.sqrt(),
            loss_bound: DEFAULT_LOSS_BOUND,
            delta: DEFAULT_DELTA,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::domain(what.to_string()));
        if self.m == 0 || self.c1 == 0 || self.c2 == 0 || self.k == 0 {
            return fail("m, c1, c2 and k must be positive");
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return fail("task count n must be positive");
        }
        if !(self.entropy >= 0.0 && self.entropy.is_finite()) {
            return fail("entropy must be a non-negative finite number");
        }
        if !(self.beta >= 0.0 && self.beta_tilde >= 0.0) {
            return fail("stabilities must be non-negative");
        }
        if !(self.loss_bound > 0.0) {
            return fail("loss bound M must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must lie in (0, 1)");
        }
        Ok(())
    }

    fn effective_m(&self) -> f64 {
        self.m as f64 * (self.entropy / self.m as f64).exp()
    }
}

/// Task count when no two tasks share a sample: `m / (k·c2)`.
pub fn worst_case_tasks(m: usize, c2: usize, k: usize) -> f64 {
    m as f64 / (k * c2) as f64
}

/// `2β + (4mβ + M)·√(c1·ln(1/δ) / (2m·e^{H/m}))`
pub fn wct_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let root = (b.c1 as f64 * (1.0 / b.delta).ln() / (2.0 * b.effective_m())).sqrt();
    Ok(2.0 * b.beta + (4.0 * b.m as f64 * b.beta + b.loss_bound) * root)
}

/// `2β + 2β̃ + (4nβ̃ + M)·√(k·c2²·ln(1/δ) / (2m·e^{H/m}))`
pub fn meta_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let c2 = b.c2 as f64;
    let root = (b.k as f64 * c2 * c2 * (1.0 / b.delta).ln() / (2.0 * b.effective_m())).sqrt();
    Ok(2.0 * b.beta + 2.0 * b.beta_tilde + (4.0 * b.n * b.beta_tilde + b.loss_bound) * root)
}

/// Fully supervised single-task bound `2β + (4mβ + M)·√(ln(1/δ)/(2m))`.
pub fn wct_bound_conventional(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let m = b.m as f64;
    Ok(2.0 * b.beta + (4.0 * m * b.beta + b.loss_bound) * ((1.0 / b.delta).ln() / (2.0 * m)).sqrt())
}

/// Fully supervised meta bound `2β̃ + (4nβ̃ + M)·√(ln(1/δ)/(2n)) + 2β`.
pub fn meta_bound_conventional(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    Ok(2.0 * b.beta_tilde
        + (4.0 * b.n * b.beta_tilde + b.loss_bound) * ((1.0 / b.delta).ln() / (2.0 * b.n)).sqrt()
        + 2.0 * b.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorollaryCheck {
    pub holds: bool,
    /// `c2²·k`
    pub lhs: u64,
    /// `c1`
    pub rhs: u64,
}

/// Meta-learning has the tighter dominant term iff `c2²·k < c1`.
pub fn corollary_check(c1: usize, c2: usize, k: usize) -> CorollaryCheck {
    let lhs = (c2 as u64) * (c2 as u64) * k as u64;
    CorollaryCheck {
        holds: lhs < c1 as u64,
        lhs,
        rhs: c1 as u64,
    }
}

/// Ratio of the meta dominant term to the WCT dominant term, `√(k·c2²/c1)`.
pub fn dominant_term_ratio(b: &BoundInputs) -> f64 {
    let c2 = b.c2 as f64;
    (b.k as f64 * c2 * c2 / b.c1 as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub entropy: f64,
    pub wct_bound: f64,
    pub meta_bound: f64,
    pub ratio: f64,
}

/// Evaluates both bounds on `points` evenly spaced entropies in `[0, m·ln c1]`.
pub fn bounds_sweep(template: &BoundInputs, points: usize) -> Result<Vec<BoundRow>> {
    if points < 2 {
        return Err(Error::domain("a sweep needs at least two points"));
    }
    let max = template.m as f64 * (template.c1 as f64).ln();
    (0..points)
        .map(|i| {
            let mut b = *template;
            b.entropy = max * i as f64 / (points - 1) as f64;
            Ok(BoundRow {
                entropy: b.entropy,
                wct_bound: wct_bound(&b)?,
                meta_bound: meta_bound(&b)?,
                ratio: dominant_term_ratio(&b),
            })
        })
        .collect()
}
