//! Dense arrays, 1-D convolution and friends, and reverse-mode gradients.

pub mod checkpoint;
pub mod graph;
pub(crate) mod kernels;
pub mod layers;
pub mod params;
pub mod tensor;

pub use graph::{BnMode, Gradients, Graph, Var, LOG_FLOOR};
pub use kernels::{ConvSpec, PoolKind};
pub use layers::{BatchNorm, Conv1d, Dense};
pub use params::{BnUpdate, Init, Mode, ParamId, ParamKind, ParamStore, Session};
pub use tensor::{Real, Tensor};
