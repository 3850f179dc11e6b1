//! Confusion matrices and the derived classification metrics, including both
//! the additive G-mean variant `sqrt(TPR + TNR)` and the usual `sqrt(TPR * TNR)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn confusion(
    preds: &[usize],
    targets: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if preds.len() != targets.len() {
        return Err(Error::shape(
            "confusion",
            "prediction count",
            targets.len(),
            preds.len(),
        ));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(targets) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(
                "confusion",
                format!("class id {} outside 0..{num_classes}", p.max(t)),
            ));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..num_classes).map(|k| k.to_string()).collect(),
    })
}

impl ConfusionMatrix {
    pub fn with_names(mut self, names: &[String]) -> Self {
        if names.len() == self.counts.len() {
            self.class_names = names.to_vec();
        }
        self
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for class `k`.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[k][k];
        let row: u64 = self.counts[k].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[k]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(n);
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }

    /// Row-normalized percentages.
    pub fn to_percent_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            let total: u64 = row.iter().sum();
            s.push_str(n);
            for &c in row {
                let pct = if total == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / total as f64
                };
                s.push_str(&format!(",{pct:.2}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub gmean_paper: f64,
    pub gmean_standard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    pub accuracy_pct: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    /// Macro average of per-class `sqrt(TPR + TNR)`.
    pub gmean_paper: f64,
    /// Macro average of per-class `sqrt(TPR * TNR)`.
    pub gmean_standard: f64,
    pub per_class: Vec<ClassMetrics>,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix".into()));
    }
    let k = cm.num_classes();
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
        let name = cm.class_names[c].clone();
        let mut undefined = |what: &str| {
            warnings.push(format!("class {name}: {what} undefined, reported as 0"));
            0.0
        };
        let precision = ratio(tp, tp + fp).unwrap_or_else(|| undefined("precision"));
        let recall = ratio(tp, tp + fn_).unwrap_or_else(|| undefined("recall (zero support)"));
        let specificity = ratio(tn, tn + fp).unwrap_or_else(|| undefined("specificity"));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            name,
            support: tp + fn_,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            specificity,
            f1,
            gmean_paper: (recall + specificity).sqrt(),
            gmean_standard: (recall * specificity).sqrt(),
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let correct: u64 = (0..k).map(|c| cm.counts[c][c]).sum();
    let accuracy = correct as f64 / total as f64;
    Ok(MetricsReport {
        samples: total,
        accuracy,
        accuracy_pct: 100.0 * accuracy,
        precision_macro: mean(|c| c.precision),
        recall_macro: mean(|c| c.recall),
        f1_macro: mean(|c| c.f1),
        f1_weighted: per_class
            .iter()
            .map(|c| c.f1 * c.support as f64)
            .sum::<f64>()
            / total as f64,
        gmean_paper: mean(|c| c.gmean_paper),
        gmean_standard: mean(|c| c.gmean_standard),
        per_class,
        warnings,
    })
}
