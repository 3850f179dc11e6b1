use crate::error::{Error, Result};
use crate::ingest::STD_FLOOR;
use crate::substrate::{Real, Tensor};

/// Per-channel conditioning statistics of one `[C, W]` window.
#[derive(Clone, Debug, PartialEq)]
pub struct StatFeatures {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
    /// `[C, W]`.
    pub zscore: Tensor<f64>,
    pub skewness: Vec<f64>,
    /// `[4C, W]`: mean, std, z-score and skewness rows, each block `C` rows,
    /// scalars broadcast along time.
    pub fused: Tensor<f64>,
}

impl StatFeatures {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn window(&self) -> usize {
        self.zscore.dim(1)
    }
}

pub fn extract_features<T: Real>(x: &Tensor<T>) -> Result<StatFeatures> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "extract_features",
            "rank",
            "[C, W]",
            format!("{:?}", x.shape()),
        ));
    }
    let (c, w) = (x.dim(0), x.dim(1));
    if w < 2 {
        return Err(Error::shape(
            "extract_features",
            "window (dim 1)",
            ">= 2",
            w,
        ));
    }
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    let mut skewness = Vec::with_capacity(c);
    let mut z = Vec::with_capacity(c * w);
    for row in x.data().chunks(w) {
        let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        let m = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / w as f64;
        let raw_sd = var.sqrt();
        let sd = raw_sd.max(STD_FLOOR);
        let zs: Vec<f64> = if raw_sd < STD_FLOOR {
            vec![0.0; w]
        } else {
            row.iter().map(|v| (v - m) / sd).collect()
        };
        skewness.push(zs.iter().map(|v| v.powi(3)).sum::<f64>() / w as f64);
        mean.push(m);
        std.push(sd);
        z.extend(zs);
    }
    let mut fused = Vec::with_capacity(4 * c * w);
    for &m in &mean {
        fused.extend(std::iter::repeat_n(m, w));
    }
    for &s in &std {
        fused.extend(std::iter::repeat_n(s, w));
    }
    fused.extend_from_slice(&z);
    for &g in &skewness {
        fused.extend(std::iter::repeat_n(g, w));
    }
    Ok(StatFeatures {
        mean,
        std,
        zscore: Tensor::new(vec![c, w], z)?,
        skewness,
        fused: Tensor::new(vec![4 * c, w], fused)?,
    })
}

/// Stacks fused features into a `[B, 4C, W]` batch.
pub fn fused_batch<T: Real>(features: &[&StatFeatures]) -> Result<Tensor<T>> {
    let items: Vec<Tensor<T>> = features.iter().map(|f| f.fused.cast()).collect();
    Tensor::stack(&items)
}
