//! Optimizer, composite losses, adaptive loss weighting and the training loop.

mod adam;
mod fit;
mod loss;
mod weights;

pub use adam::{AdamConfig, AdamState, DecayMode};
pub use fit::{
    accuracy, fit, predict_indices, trace_csv, AccSource, DataSource, EpochRecord, FitReport,
    FitSchedule, LossMode, TRACE_HEADER,
};
pub use loss::{
    loss_ce, loss_focal, loss_slnll, loss_values, target_matrix, total_loss, FocalParams, LossParts,
};
pub use weights::{adapt_weights, raw_focal_weight, LossWeights};
