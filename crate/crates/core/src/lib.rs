//! Human-activity recognition toolkit: a small differentiable substrate, the
//! split-attention MSTI classifier, a statistics-conditioned diffusion
//! augmenter, composite-loss training, metrics and a latency harness.

pub mod bench;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod msti;
pub mod par;
pub mod pipeline;
pub mod substrate;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
