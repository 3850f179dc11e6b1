use serde::{Deserialize, Serialize};

/// Weights `(ω0, ω1, ω2)` on the smoothed-NLL, focal and CE losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w: [f64; 3],
    /// Accuracy fed to the most recent update.
    pub last_acc: Option<f64>,
}

impl LossWeights {
    pub fn fixed(w: [f64; 3]) -> Self {
        Self { w, last_acc: None }
    }

    pub fn ce_only() -> Self {
        Self::fixed([0.0, 0.0, 1.0])
    }

    pub fn uniform() -> Self {
        Self::fixed([1.0 / 3.0; 3])
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Raw (unclamped) focal weight `2 - τ - 1/(acc + 1e-8)`.
pub fn raw_focal_weight(acc: f64, tau: f64) -> f64 {
    2.0 - tau - 1.0 / (acc + 1e-8)
}

/// Epoch-end feedback update: focal weight from accuracy, clamped to
/// `[0, 1]`, the remainder split evenly between the other two terms.
pub fn adapt_weights(_w: &LossWeights, acc: f64, tau: f64) -> LossWeights {
    let w1 = raw_focal_weight(acc, tau).clamp(0.0, 1.0);
    let rest = 0.5 * (1.0 - w1);
    LossWeights {
        w: [rest, w1, rest],
        last_acc: Some(acc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let w0 = LossWeights::uniform();
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-7);
        assert!(close(adapt_weights(&w0, 0.5, 0.0).w, [0.5, 0.0, 0.5]));
        assert_eq!(adapt_weights(&w0, 0.4, 0.0).w, [0.5, 0.0, 0.5]);
        assert!((raw_focal_weight(0.4, 0.0) + 0.5).abs() < 1e-7);
        let w = adapt_weights(&w0, 1.0, 1.0);
        assert!(w.w[1].abs() < 1e-7 && (w.w[0] - 0.5).abs() < 1e-7);
        let w = adapt_weights(&w0, 1.0, 0.5);
        assert!((w.w[1] - 0.5).abs() < 1e-7);
    }
}
