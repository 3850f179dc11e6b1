use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{BnBatchStats, Gradients, Graph, Var};
use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Param,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Arc<Tensor<T>>,
}

/// Named, ordered collection of a model's tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, kind: ParamKind, t: Tensor<T>) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            kind,
            tensor: Arc::new(t),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.push(name.into(), ParamKind::Param, t)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.push(name.into(), ParamKind::Buffer, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].tensor)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self, kind: ParamKind) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.kind == kind)
            .map(|(i, _)| ParamId(i))
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Param)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: Arc::new(e.tensor.cast()),
                })
                .collect(),
        }
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "entry count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry mismatch: {} {:?} vs {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
            a.tensor = b.tensor.clone();
        }
        Ok(())
    }

    /// Folds batch statistics into running buffers: `r <- (1-m) r + m s`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: f64) {
        let m = T::of(momentum);
        for u in updates {
            for (buf, vals) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                let t = self.get_mut(buf);
                for (r, &s) in t.data_mut().iter_mut().zip(vals) {
                    *r = (T::one() - m) * *r + m * s;
                }
            }
        }
    }
}

/// Seeded initializer: uniform in `±sqrt(1/fan_in)`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Real>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::new(shape, data).expect("init shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Gradients tracked, batch norm uses batch statistics.
    Train,
    /// No gradients, batch norm uses running statistics.
    Eval,
}

/// Pending running-statistics update from one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BnBatchStats<T>,
}

/// One forward (and optionally backward) pass over a parameter store.
pub struct Session<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'s, T: Real> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            store,
            vars: vec![None; store.len()],
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph node for a parameter, registered on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.entries[id.0].tensor.clone();
        let v = match self.mode {
            Mode::Train => self.graph.param(t),
            Mode::Eval => self.graph.frozen(t),
        };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &'s Tensor<T> {
        &self.store.entries[id.0].tensor
    }

    pub(crate) fn record_bn(&mut self, u: BnUpdate<T>) {
        self.bn_updates.push(u);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Backward from `loss`; gradients indexed by [`ParamId`]. Parameters not
    /// used in the forward pass get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads: Gradients<T> = self.graph.backward(loss)?;
        Ok(self
            .store
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.kind != ParamKind::Param {
                    return None;
                }
                Some(match self.vars[i] {
                    Some(v) => grads
                        .take(v)
                        .unwrap_or_else(|| Tensor::zeros(e.tensor.shape().to_vec())),
                    None => Tensor::zeros(e.tensor.shape().to_vec()),
                })
            })
            .collect())
    }
}
