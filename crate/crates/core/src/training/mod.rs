//! Gradients, optimization and toy tasks.

mod adam;
mod backward;
mod gradcheck;
mod params;
mod task;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{egc_backward, egc_m_backward, egc_s_backward, gcn_backward, gin_backward, r_egc_backward};
pub use gradcheck::{gradient_check, CheckLayer, GradCheckOptions, GradCheckReport, GroupError};
pub use params::{finite_diff_grad, GradBundle, Params};
pub use task::{homophily_task_from_hidden, make_toy_task, TaskKind, Targets, ToyTask};
pub use train::{train_loop, Divergence, train_model, write_metrics_csv, StepMetrics, TrainConfig, TrainOutcome};
