//! Statistics-conditioned diffusion denoiser for generating labeled windows.

mod denoiser;
mod features;
mod run;
mod schedule;

pub use denoiser::{step_embedding, Denoiser, DenoiserConfig};
pub use features::{extract_features, fused_batch, StatFeatures};
pub use run::{
    balance_plan, generate, generate_batch, pretrain, synthesize, synthesize_class, PretrainConfig,
};
pub use schedule::{l_rec, noising, noising_with, DiffusionSchedule};
