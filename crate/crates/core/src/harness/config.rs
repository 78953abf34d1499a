use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::synthetic::SyntheticSpec;
use crate::bounds::BoundInputs;
use crate::cluster::{DbscanParams, SamplerConfig};
use crate::error::{Error, Result};
use crate::metalearn::{TrainConfig, WctConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Accuracy against the annotation entropy budget.
    EntropyCurve,
    /// Accuracy at fixed label-noise rates.
    NoiseTable,
    /// Tasks of varying way.
    Heterogeneous,
    /// Unsupervised method against its single-component variants.
    Ablation,
    /// Unsupervised method over clustering hyperparameters.
    SensitivitySweep,
    /// Bound calculator over the entropy range.
    BoundsSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Whole-class training, logistic-probe evaluation.
    Wct,
    /// Single-level multi-task training over episodes.
    Mtl,
    /// Second-order bi-level training with a single head group.
    Maml,
    /// First-order bi-level training with a single head group.
    Fomaml,
    /// Head-only inner loop with a single head group.
    Anil,
    /// Bi-level training with the grouped dynamic head.
    Dhm,
    /// Unsupervised: DBSCAN pseudo-tasks, dynamic head, meta-scaler.
    Mino,
    /// Unsupervised ablation: K-means fixed-way tasks with a static head.
    MinoKmeans,
    /// Unsupervised ablation: whole-class training on pooled DBSCAN labels.
    MinoWct,
    /// Unsupervised ablation: meta-scaler disabled.
    MinoNoScaler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Wct => "wct",
            Method::Mtl => "mtl",
            Method::Maml => "maml",
            Method::Fomaml => "fomaml",
            Method::Anil => "anil",
            Method::Dhm => "dhm",
            Method::Mino => "mino",
            Method::MinoKmeans => "mino_kmeans",
            Method::MinoWct => "mino_wct",
            Method::MinoNoScaler => "mino_no_scaler",
        }
    }

    pub fn is_unsupervised(self) -> bool {
        matches!(self, Method::Mino | Method::MinoKmeans | Method::MinoWct | Method::MinoNoScaler)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub num_groups: usize,
    /// Widest task a head group serves.
    pub c_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            num_groups: 4,
            c_max: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Evaluation way, shots and queries per class.
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
    pub eval_episodes: usize,
    /// Training-task way range; both default to `way`.
    pub train_way_min: Option<usize>,
    pub train_way_max: Option<usize>,
    pub train_shots: Option<usize>,
    pub train_queries: Option<usize>,
    /// Evaluate on validation classes instead of test classes.
    pub use_val_classes: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            way: 5,
            shots: 1,
            queries: 5,
            eval_episodes: 200,
            train_way_min: None,
            train_way_max: None,
            train_shots: None,
            train_queries: None,
            use_val_classes: false,
        }
    }
}

impl EpisodeConfig {
    pub fn train_way_range(&self) -> (usize, usize) {
        let lo = self.train_way_min.unwrap_or(self.way);
        (lo, self.train_way_max.unwrap_or(lo.max(self.way)))
    }

    pub fn train_shots(&self) -> usize {
        self.train_shots.unwrap_or(self.shots)
    }

    pub fn train_queries(&self) -> usize {
        self.train_queries.unwrap_or(self.queries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Inner-loop fine-tuning for bi-level methods; `None` falls back to the
    /// trainer's values.
    pub finetune_alpha: Option<f64>,
    pub finetune_steps: Option<usize>,
    /// Logistic probe for single-level methods.
    pub logistic_lr: f64,
    pub logistic_steps: usize,
    /// Score without adaptation, matching predictions to labels optimally.
    pub zero_shot: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            finetune_alpha: None,
            finetune_steps: None,
            logistic_lr: 0.1,
            logistic_steps: 100,
            zero_shot: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSpace {
    /// Cluster raw inputs.
    #[default]
    Raw,
    /// Cluster the current body's output.
    Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnsupervisedConfig {
    pub sampler: SamplerConfig,
    pub space: ClusterSpace,
    /// Outer steps between rebuilds of the pseudo-task bank.
    pub refresh_every: usize,
    /// Tasks per bank.
    pub bank_size: usize,
    /// DBSCAN parameters for whole-pool clustering (the WCT ablation). The
    /// full pool is far denser than a sampled task; `None` reuses `dbscan`.
    pub pool_dbscan: Option<DbscanParams>,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig {
                samples_per_task: 50,
                num_tasks: 1,
                support_fraction: 0.5,
                max_retries: 100,
                max_way: None,
                anchors: Some(5),
            },
            space: ClusterSpace::Raw,
            refresh_every: 100,
            bank_size: 200,
            pool_dbscan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    /// Training steps between stability measurements.
    pub every: usize,
    /// Probe rows drawn from the training pool.
    pub probe_size: usize,
    pub variance_threshold: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            every: 10,
            probe_size: 200,
            variance_threshold: 0.99,
        }
    }
}

/// A parameter grid axis for `sweep`: a dotted config path and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub dataset: SyntheticSpec,
    pub model: ModelConfig,
    pub trainer: TrainConfig,
    pub wct: WctConfig,
    pub dbscan: DbscanParams,
    pub unsupervised: UnsupervisedConfig,
    pub episodes: EpisodeConfig,
    pub eval: EvalConfig,
    pub methods: Vec<Method>,
    /// Label-noise rates (noise table), pseudo-label noise rates (ablation
    /// and sensitivity sweep).
    pub noise_levels: Vec<f64>,
    /// Entropy budgets as fractions of `m · ln C`.
    pub entropy_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub trace: Option<TraceConfig>,
    /// Template for the bounds sweep.
    pub bounds: BoundInputs,
    pub bounds_points: usize,
    /// Grid axes used by `sweep`.
    pub grid: Vec<GridAxis>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            kind: ExperimentKind::NoiseTable,
            dataset: SyntheticSpec {
                num_classes: 60,
                dim: 16,
                per_class: 40,
                separation: 6.0,
                latent_dim: Some(4),
                seed: 0,
            },
            model: ModelConfig::default(),
            trainer: TrainConfig {
                epochs: 500,
                eta: 0.05,
                alpha: 0.1,
                inner_steps: 5,
                meta_batch: 4,
                ..TrainConfig::default()
            },
            wct: WctConfig::default(),
            dbscan: DbscanParams::default(),
            unsupervised: UnsupervisedConfig::default(),
            episodes: EpisodeConfig::default(),
            eval: EvalConfig::default(),
            methods: vec![Method::Wct, Method::Maml],
            noise_levels: vec![0.0, 0.15, 0.30],
            entropy_fractions: (0..8).map(|i| i as f64 / 7.0).collect(),
            seeds: vec![0],
            trace: None,
            bounds: BoundInputs::with_defaults(10_000, 100, 5, 2, 0.0).expect("valid defaults"),
            bounds_points: 8,
            grid: Vec::new(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config. Fields absent from `s` keep their values from
    /// [`ExperimentConfig::default`], at any nesting depth.
    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::load_with_overrides(s, &[])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Parses a config and applies `path=value` overrides before validation.
    pub fn load_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let patch: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !patch.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut v = Self::default().to_value();
        merge(&mut v, patch);
        for (path, raw) in overrides {
            set_path(&mut v, path, parse_override(raw))?;
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Returns a copy with one dotted-path field replaced.
    pub fn with_override(&self, path: &str, value: Value) -> Result<Self> {
        let mut v = self.to_value();
        set_path(&mut v, path, value)?;
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_value()).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.kind == ExperimentKind::BoundsSweep {
            self.bounds.validate().map_err(|e| Error::Config(e.to_string()))?;
            if self.bounds_points < 2 {
                return bad("bounds_points must be at least 2".into());
            }
            return Ok(());
        }
        if self.methods.is_empty() {
            return bad("methods must be non-empty".into());
        }
        self.dataset.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.dbscan.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = &self.unsupervised.pool_dbscan {
            p.validate().map_err(|e| Error::Config(format!("unsupervised.pool_dbscan: {e}")))?;
        }
        let needs_grid = match self.kind {
            ExperimentKind::EntropyCurve => &self.entropy_fractions,
            _ => &self.noise_levels,
        };
        if needs_grid.is_empty() {
            return bad("grid values must be non-empty".into());
        }
        if self.entropy_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("entropy fractions must lie in [0, 1]".into());
        }
        if self.noise_levels.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("noise levels must lie in [0, 1)".into());
        }
        let ep = &self.episodes;
        let (lo, hi) = ep.train_way_range();
        if ep.way < 2 || lo < 2 || hi < lo || ep.shots == 0 || ep.queries == 0 || ep.eval_episodes == 0 {
            return bad("episodes need way >= 2, a valid train-way range, shots, queries and eval_episodes >= 1".into());
        }
        if hi > self.model.c_max || ep.way > self.model.c_max {
            return bad(format!("task way up to {} exceeds model.c_max {}", hi.max(ep.way), self.model.c_max));
        }
        if self.model.num_groups == 0 || self.model.hidden.contains(&0) {
            return bad("model needs num_groups >= 1 and positive hidden widths".into());
        }
        let t = &self.trainer;
        if !(t.alpha > 0.0 && t.eta > 0.0) || t.inner_steps == 0 || t.meta_batch == 0 {
            return bad("trainer needs alpha, eta > 0 and inner_steps, meta_batch >= 1".into());
        }
        if !(self.wct.lr > 0.0) || self.wct.batch_size == 0 {
            return bad("wct needs lr > 0 and batch_size >= 1".into());
        }
        if let Some(tr) = &self.trace {
            if tr.every == 0 || tr.probe_size < 2 {
                return bad("trace needs every >= 1 and probe_size >= 2".into());
            }
        }
        for axis in &self.grid {
            if axis.values.is_empty() {
                return bad(format!("grid axis {} has no values", axis.path));
            }
        }
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Interprets an override as JSON when it parses, else as a string.
pub fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c` in a JSON object tree, creating objects along the way.
/// Numeric segments index into arrays.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed path {path:?}")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Value::Array(items) = cur {
            let idx: usize = part
                .parse()
                .map_err(|_| Error::Config(format!("{path}: {part:?} is not an array index")))?;
            let len = items.len();
            let slot = items
                .get_mut(idx)
                .ok_or_else(|| Error::Config(format!("{path}: index {idx} out of range ({len})")))?;
            if last {
                *slot = value;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let Value::Object(map) = cur else {
            return Err(Error::Config(format!("{path}: {part:?} is not inside an object")));
        };
        if last {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last segment")
}
