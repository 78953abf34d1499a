//! Bi-level meta-training with a grouped dynamic head, plus single-level
//! baselines and episode evaluation.

mod baseline;
mod checkpoint;
mod eval;
mod model;
mod task;
mod trainer;

pub use baseline::{argmax as argmax_row, mtl_step, mtl_train, wct_train, WctConfig, WctReport};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use eval::{episode_accuracy, evaluate_episodes, fit_logistic, EvalProtocol, EvalSummary};
pub use model::{init_model, Layer, ModelNodes, ModelParams, ModelShape};
pub use task::{LabeledSet, Task};
pub use trainer::{
    assign_groups, dynamic_head_view, inner_adapt, meta_step, meta_train, outer_gradient, query_loss,
    task_objective, AdaptMode, Adapted, FastWeights, GroupedTask, MetaStepReport, OuterGradient, TaskObjective,
    TrainConfig, TrainReport,
};
