use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Inputs with integer targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Tensor, y: Vec<usize>) -> Result<Self> {
        if x.rank() != 2 || x.rows() != y.len() {
            return Err(Error::invalid(format!(
                "{} labels for inputs of shape {:?}",
                y.len(),
                x.shape()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// One episode: a support set to adapt on and a disjoint query set to score.
///
/// Targets are (pseudo) labels in `0..way`. `*_true` carry ground-truth class
/// ids when known, for evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub support: LabeledSet,
    pub query: LabeledSet,
    pub way: usize,
    pub support_true: Option<Vec<usize>>,
    pub query_true: Option<Vec<usize>>,
}

impl Task {
    pub fn new(support: LabeledSet, query: LabeledSet, way: usize) -> Result<Self> {
        if way < 2 {
            return Err(Error::invalid(format!("a task needs at least 2 classes, got {way}")));
        }
        if support.is_empty() || query.is_empty() {
            return Err(Error::invalid("support and query sets must be non-empty"));
        }
        if support.x.cols() != query.x.cols() {
            return Err(Error::Shape {
                op: "task",
                lhs: support.x.shape().to_vec(),
                rhs: query.x.shape().to_vec(),
            });
        }
        if let Some(&bad) = support.y.iter().chain(&query.y).find(|&&y| y >= way) {
            return Err(Error::invalid(format!("label {bad} outside [0, {way})")));
        }
        let mut present = vec![false; way];
        for &y in &support.y {
            present[y] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::invalid(format!("class {missing} has no support sample")));
        }
        Ok(Self {
            support,
            query,
            way,
            support_true: None,
            query_true: None,
        })
    }

    pub fn with_truth(mut self, support_true: Vec<usize>, query_true: Vec<usize>) -> Result<Self> {
        if support_true.len() != self.support.len() || query_true.len() != self.query.len() {
            return Err(Error::invalid("true-label vectors must match set sizes"));
        }
        self.support_true = Some(support_true);
        self.query_true = Some(query_true);
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.support.x.cols()
    }

    /// Applies `perm` (old label → new label) to every target.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.way {
            return Err(Error::invalid("permutation length must equal the task way"));
        }
        let mut t = self.clone();
        for y in t.support.y.iter_mut().chain(t.query.y.iter_mut()) {
            *y = perm[*y];
        }
        Ok(t)
    }
}
