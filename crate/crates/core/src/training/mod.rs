//! Losses, optimiser, metrics and the training loop.

mod fit;
mod losses;
mod metrics;
mod optim;

#[cfg(test)]
mod tests;

pub use fit::{evaluate, fit, predict_logits, EpochRecord, Evaluation, FitOutcome, Monitor, TrainConfig};
pub use losses::{
    cross_entropy, cross_entropy_loss, distill_loss_var, kd_loss, kd_loss_var, total_distill_loss, DistillConfig,
};
pub use metrics::{argmax, evaluate_metrics, mean_prediction_entropy, ClassMetrics, MetricsReport};
pub use optim::{adam_step, clip_global_norm, AdamState, Plateau, ADAM_EPS, BETA1, BETA2};
