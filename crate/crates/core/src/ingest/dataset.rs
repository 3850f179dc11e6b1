use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Real, Tensor};

use super::SensorWindow;

/// Lower bound applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Per-class random split of windows.
    Stratified,
    /// Whole subjects assigned to one split.
    Subject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-channel z-normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct WindowedDataset {
    pub windows: Vec<SensorWindow>,
    pub splits: Splits,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub normalization: Normalization,
}

impl WindowedDataset {
    /// Splits `windows` and computes normalization from the real windows of
    /// the train split.
    pub fn new(
        windows: Vec<SensorWindow>,
        num_classes: usize,
        class_names: Vec<String>,
        policy: SplitPolicy,
        fractions: SplitFractions,
        seed: u64,
    ) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Empty("window list".into()))?;
        let shape = first.values.shape().to_vec();
        for w in &windows {
            if w.values.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "dataset",
                    "window shape",
                    format!("{shape:?}"),
                    format!("{:?}", w.values.shape()),
                ));
            }
            if w.label >= num_classes {
                return Err(Error::invalid(
                    "dataset",
                    format!("label {} outside 0..{num_classes}", w.label),
                ));
            }
        }
        let splits = match policy {
            SplitPolicy::Stratified => stratified_split(&windows, num_classes, fractions, seed),
            SplitPolicy::Subject => subject_split(&windows, fractions, seed),
        };
        let normalization = compute_normalization(&windows, &splits.train)?;
        Ok(Self {
            windows,
            splits,
            num_classes,
            class_names,
            normalization,
        })
    }

    pub fn channels(&self) -> usize {
        self.windows[0].values.dim(0)
    }

    pub fn window_len(&self) -> usize {
        self.windows[0].values.dim(1)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window count per class over the whole dataset.
    pub fn class_counts(&self) -> Vec<usize> {
        counts(self.windows.iter().map(|w| w.label), self.num_classes)
    }

    /// Window count per class within `indices`.
    pub fn class_counts_in(&self, indices: &[usize]) -> Vec<usize> {
        counts(
            indices.iter().map(|&i| self.windows[i].label),
            self.num_classes,
        )
    }

    /// Normalized `[B, C, W]` batch and its labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let (c, w) = (self.channels(), self.window_len());
        let mut data = Vec::with_capacity(indices.len() * c * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let win = &self.windows[i];
            for ch in 0..c {
                let (m, s) = (self.normalization.mean[ch], self.normalization.std[ch]);
                data.extend(
                    win.values.data()[ch * w..(ch + 1) * w]
                        .iter()
                        .map(|&v| T::of((v as f64 - m) / s)),
                );
            }
            labels.push(win.label);
        }
        (
            Tensor::new(vec![indices.len(), c, w], data).expect("batch shape"),
            labels,
        )
    }

    /// Appends windows to the train split. Normalization is left unchanged.
    pub fn add_train_windows(&mut self, windows: Vec<SensorWindow>) -> Result<()> {
        let shape = self.windows[0].values.shape().to_vec();
        for w in windows {
            if w.values.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "dataset",
                    "window shape",
                    format!("{shape:?}"),
                    format!("{:?}", w.values.shape()),
                ));
            }
            self.splits.train.push(self.windows.len());
            self.windows.push(w);
        }
        Ok(())
    }

    /// Real train windows of one class.
    pub fn train_windows_of(&self, class: usize) -> Vec<&SensorWindow> {
        self.splits
            .train
            .iter()
            .map(|&i| &self.windows[i])
            .filter(|w| w.label == class && !w.synthetic)
            .collect()
    }

    /// Human-readable class distribution.
    pub fn distribution_report(&self) -> String {
        let mut out = String::from("class,name,total,train,val,test\n");
        let tr = self.class_counts_in(&self.splits.train);
        let va = self.class_counts_in(&self.splits.val);
        let te = self.class_counts_in(&self.splits.test);
        for (k, total) in self.class_counts().into_iter().enumerate() {
            let name = self.class_names.get(k).map(String::as_str).unwrap_or("");
            out.push_str(&format!(
                "{k},{name},{total},{},{},{}\n",
                tr[k], va[k], te[k]
            ));
        }
        out
    }
}

fn counts(labels: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for l in labels {
        c[l] += 1;
    }
    c
}

fn split_sizes(n: usize, f: SplitFractions) -> (usize, usize) {
    let train = ((n as f64 * f.train).round() as usize).min(n);
    let val = ((n as f64 * f.val).round() as usize).min(n - train);
    (train, val)
}

fn stratified_split(windows: &[SensorWindow], k: usize, f: SplitFractions, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Splits::default();
    for class in 0..k {
        let mut idx: Vec<usize> = (0..windows.len())
            .filter(|&i| windows[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        let (ntr, nva) = split_sizes(idx.len(), f);
        s.train.extend_from_slice(&idx[..ntr]);
        s.val.extend_from_slice(&idx[ntr..ntr + nva]);
        s.test.extend_from_slice(&idx[ntr + nva..]);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

fn subject_split(windows: &[SensorWindow], f: SplitFractions, seed: u64) -> Splits {
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_subject.entry(w.subject).or_default().push(i);
    }
    let mut subjects: Vec<u32> = by_subject.keys().copied().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = windows.len() as f64;
    let mut s = Splits::default();
    for subj in subjects {
        let idx = &by_subject[&subj];
        let target = if (s.train.len() as f64) < f.train * n {
            &mut s.train
        } else if ((s.train.len() + s.val.len()) as f64) < (f.train + f.val) * n {
            &mut s.val
        } else {
            &mut s.test
        };
        target.extend_from_slice(idx);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

fn compute_normalization(windows: &[SensorWindow], train: &[usize]) -> Result<Normalization> {
    let real: Vec<&SensorWindow> = train
        .iter()
        .map(|&i| &windows[i])
        .filter(|w| !w.synthetic)
        .collect();
    if real.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let (c, w) = (real[0].values.dim(0), real[0].values.dim(1));
    let n = (real.len() * w) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for win in &real {
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += win.values.data()[ch * w..(ch + 1) * w]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for win in &real {
        for (ch, s) in std.iter_mut().enumerate() {
            *s += win.values.data()[ch * w..(ch + 1) * w]
                .iter()
                .map(|&v| (v as f64 - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    std.iter_mut()
        .for_each(|s| *s = (*s / n).sqrt().max(STD_FLOOR));
    Ok(Normalization { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(label: usize, subject: u32, v: f32) -> SensorWindow {
        SensorWindow {
            values: Tensor::new(vec![2, 3], vec![v, v + 1.0, v + 2.0, 5.0, 5.0, 5.0]).unwrap(),
            label,
            subject,
            t_start: 0,
            synthetic: false,
        }
    }

    #[test]
    fn dead_channel_std_is_floored() {
        let ws: Vec<_> = (0..20).map(|i| win(i % 2, i as u32, i as f32)).collect();
        let d = WindowedDataset::new(
            ws,
            2,
            vec![],
            SplitPolicy::Stratified,
            SplitFractions::default(),
            1,
        )
        .unwrap();
        assert_eq!(d.normalization.std[1], STD_FLOOR);
        let (b, _) = d.batch::<f64>(&d.splits.train);
        assert!(b.is_finite());
    }

    #[test]
    fn subject_split_keeps_subjects_together() {
        let ws: Vec<_> = (0..60)
            .map(|i| win(i % 3, (i / 6) as u32, i as f32))
            .collect();
        let d = WindowedDataset::new(
            ws,
            3,
            vec![],
            SplitPolicy::Subject,
            SplitFractions::default(),
            4,
        )
        .unwrap();
        let subj = |ids: &[usize]| {
            ids.iter()
                .map(|&i| d.windows[i].subject)
                .collect::<std::collections::BTreeSet<_>>()
        };
        let (a, b, c) = (
            subj(&d.splits.train),
            subj(&d.splits.val),
            subj(&d.splits.test),
        );
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(
            d.splits.train.len() + d.splits.val.len() + d.splits.test.len(),
            60
        );
    }

    #[test]
    fn rejects_out_of_range_label_and_empty() {
        assert!(WindowedDataset::new(
            vec![win(3, 0, 0.0)],
            3,
            vec![],
            SplitPolicy::Stratified,
            SplitFractions::default(),
            0
        )
        .is_err());
        assert!(WindowedDataset::new(
            vec![],
            3,
            vec![],
            SplitPolicy::Stratified,
            SplitFractions::default(),
            0
        )
        .is_err());
    }
}
