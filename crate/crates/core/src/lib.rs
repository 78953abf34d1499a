//! Entropy-limited supervision, generalization-bound calculators, and an
//! unsupervised meta-learner built on DBSCAN pseudo-tasks, a grouped dynamic
//! head, and a representation-stability meta-scaler.
//!
//! Everything runs on [`diffcore`], a small `f64` reverse-mode engine that can
//! differentiate through unrolled gradient steps.

pub mod assignment;
pub mod bounds;
pub mod cluster;
pub mod diffcore;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod metalearn;
pub mod rng;
pub mod stability;

pub use diffcore::{Graph, NodeId, Tensor};
pub use error::{Error, Result};
