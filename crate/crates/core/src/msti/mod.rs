//! Multi-scale split-attention classifier and a plain CNN reference.

mod baseline;
mod block;
mod config;
mod model;

pub use baseline::{PlainCnn, PlainCnnConfig};
pub use block::{
    cardinal_sum, channel_stats, radix_attention, spatial_attention, BlockTrace,
    SplitAttentionBlock,
};
pub use config::{MstiConfig, Stage, Variant};
pub use model::{analytic_param_count, Msti};

use crate::error::{Error, Result};
use crate::substrate::{Graph, Mode, ParamStore, Real, Session, Tensor, Var};

/// A model mapping `[B, C, W]` windows to `[B, classes]` logits.
pub trait Classifier<T: Real>: Send + Sync {
    fn name(&self) -> String;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    /// `(channels, window)`.
    fn input_shape(&self) -> (usize, usize);
    fn num_classes(&self) -> usize;
    fn config_hash(&self) -> String;
    fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var>;

    /// Eval-mode logits for a batch.
    fn logits(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(self.store(), Mode::Eval);
        let xv = s.graph.constant(x);
        let y = self.forward(&mut s, xv)?;
        Ok(s.graph.value(y).clone())
    }

    /// Eval-mode arg-max class per row.
    fn predict(&self, x: Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let n = t.dim(t.rank() - 1);
    t.data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn check_input<T: Real>(g: &Graph<T>, x: Var, (c, w): (usize, usize)) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 3 {
        return Err(Error::shape(
            "model input",
            "rank",
            "[B, C, W]",
            format!("{s:?}"),
        ));
    }
    if s[1] != c {
        return Err(Error::shape("model input", "channels (dim 1)", c, s[1]));
    }
    if s[2] != w {
        return Err(Error::shape("model input", "window (dim 2)", w, s[2]));
    }
    Ok(())
}
