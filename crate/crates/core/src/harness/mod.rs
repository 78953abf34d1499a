//! Experiment harness: synthetic data, configs, runners and result files.

mod config;
mod output;
mod run;
mod sweep;
mod synthetic;

pub use config::{
    merge, parse_override, set_path, ClusterSpace, EpisodeConfig, EvalConfig, ExperimentConfig, ExperimentKind, GridAxis,
    Method, ModelConfig, TraceConfig, UnsupervisedConfig,
};
pub use output::{read_rows, write_results, write_rows, write_traces, OutputPaths};
pub use run::{
    corrupt_task, grid_points, prepare, run_cell, run_experiment, thread_count, train_cell, ExperimentResults, Prepared,
    ResultRow, RunStatus, TraceRow, TrainedCell, THREADS_ENV,
};
pub use sweep::{cell_label, grid_cells, sweep};
pub use synthetic::{gen_synthetic, index_by_label, sample_episode, split_classes, ClassSplit, Pool, SyntheticSpec};
