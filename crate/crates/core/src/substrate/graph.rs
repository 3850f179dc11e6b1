//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] is append-only: every op pushes a node whose inputs already
//! exist, so node order is a topological order and [`Graph::backward`] is a
//! single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom, ConvSpec, DenseGeom, PoolKind};
use super::tensor::{strides, Real, Tensor};

/// Lower clamp applied to `log` arguments.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm behaviour for one call.
pub enum BnMode<'a, T> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Batch mean and unbiased variance observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: DenseGeom,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, T),
    Softmax(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var),
    MeanAxis(Var, usize),
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Upsample(Var, usize),
}

struct Node<T> {
    op: Op<T>,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
}

/// Gradients of the leaves that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total bytes held by node outputs.
    pub fn activation_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.numel() * std::mem::size_of::<T>())
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Trainable leaf sharing storage with a parameter store.
    pub fn param(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Same as [`Graph::param`] but without gradient tracking.
    pub fn frozen(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), spec)?;
        let out = kernels::conv1d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Op::Conv1d { x, w, b, geom }, out, rg))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var> {
        let geom = DenseGeom::new(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            groups,
        )?;
        let out = kernels::dense_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Op::Dense { x, w, b, geom }, out, rg))
    }

    pub fn pool1d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::pool1d_forward(self.value(x), kind, window, stride)?;
        let rg = self.rg(x);
        Ok(self.push(
            Op::Pool {
                x,
                kind,
                window,
                stride,
                argmax,
            },
            out,
            rg,
        ))
    }

    /// Per-channel normalization of `[B, C, L]` or `[B, C]` input followed by
    /// a per-channel affine map. In training mode also returns the batch
    /// statistics (unbiased variance) for running-average updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BnBatchStats<T>>)> {
        const OP: &str = "batch_norm";
        let xs = self.value(x);
        if xs.rank() != 2 && xs.rank() != 3 {
            return Err(Error::shape(OP, "input rank", "2 or 3", xs.rank()));
        }
        let c = xs.dim(1);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(OP, name, c, format!("{:?}", self.shape(v))));
            }
        }
        let l = if xs.rank() == 3 { xs.dim(2) } else { 1 };
        let count = xs.dim(0) * l;
        let (mean, var, stats, train) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::invalid(
                        OP,
                        "training mode needs at least two values per channel",
                    ));
                }
                let (m, v) = kernels::channel_moments(xs);
                let corr = T::of(count as f64 / (count - 1) as f64);
                let unbiased = v.iter().map(|&x| x * corr).collect();
                let stats = BnBatchStats {
                    mean: m.clone(),
                    var: unbiased,
                };
                (m, v, Some(stats), true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(OP, "running statistics length", c, mean.len()));
                }
                (mean.to_vec(), var.to_vec(), None, false)
            }
        };
        let eps = T::of(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let xd = xs.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (i, (&xv, (h, o))) in xd
            .iter()
            .zip(xhat.iter_mut().zip(out.iter_mut()))
            .enumerate()
        {
            let ch = (i / l) % c;
            *h = (xv - mean[ch]) * inv_std[ch];
            *o = gd[ch] * *h + bd[ch];
        }
        let shape = xs.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::new(shape.clone(), xhat)?,
                inv_std,
                train,
            },
            Tensor::new(shape, out)?,
            rg,
        );
        Ok((v, stats))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(op, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            Op::Relu(x),
            |v| if v > T::zero() { v } else { T::zero() },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    /// Natural log with the argument clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        self.unary(x, Op::Log(x), |v| v.max(floor).ln())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let pt = T::of(p);
        self.unary(x, Op::Powf(x, pt), |v| v.powf(pt))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(x, Op::Scale(x, ct), |v| v * ct)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(x, Op::AddScalar(x), |v| v + ct)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= self.value(x).rank() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for rank {}", self.value(x).rank()),
            ));
        }
        let out = kernels::softmax_forward(self.value(x), axis);
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax(x, axis), out, rg))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = kernels::broadcast_shape(op_name, ta.shape(), tb.shape())?;
        let data = if ta.shape() == tb.shape() {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let ia = kernels::broadcast_indices(&out_shape, ta.shape());
            let ib = kernels::broadcast_indices(&out_shape, tb.shape());
            ia.iter()
                .zip(&ib)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, Tensor::new(out_shape, data)?, rg))
    }

    /// Elementwise sum with size-1 broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with size-1 broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / T::of(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(m), rg)
    }

    fn reduce_axis(
        &mut self,
        x: Var,
        axis: usize,
        op_name: &'static str,
    ) -> Result<(Vec<usize>, Vec<T>, Vec<usize>)> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::invalid(
                op_name,
                format!("axis {axis} out of range for rank {}", t.rank()),
            ));
        }
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let d = t.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                match op_name {
                    "max_axis" => {
                        let mut best = 0;
                        for k in 1..n {
                            if d[at(k)] > d[at(best)] {
                                best = k;
                            }
                        }
                        out.push(d[at(best)]);
                        arg.push(at(best));
                    }
                    _ => out.push((0..n).map(|k| d[at(k)]).sum()),
                }
            }
        }
        Ok((shape, out, arg))
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out, _) = self.reduce_axis(x, axis, "sum_axis")?;
        let rg = self.rg(x);
        Ok(self.push(Op::SumAxis(x), Tensor::new(shape, out)?, rg))
    }

    /// Mean along `axis`, keeping it with length 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out, _) = self.reduce_axis(x, axis, "mean_axis")?;
        let n = T::of(self.value(x).dim(axis) as f64);
        let out = out.into_iter().map(|v| v / n).collect();
        let rg = self.rg(x);
        Ok(self.push(Op::MeanAxis(x, axis), Tensor::new(shape, out)?, rg))
    }

    /// Max along `axis`, keeping it with length 1. Gradient goes to the first maximal index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out, argmax) = self.reduce_axis(x, axis, "max_axis")?;
        let rg = self.rg(x);
        Ok(self.push(Op::MaxAxis { x, argmax }, Tensor::new(shape, out)?, rg))
    }

    /// `[B, C, L] -> [B, C]` mean over the sequence axis.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("global_avg_pool", "input rank", 3, s.len()));
        }
        let m = self.mean_axis(x, 2)?;
        self.reshape(m, vec![s[0], s[1]])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = (*self.nodes[x.0].value).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), out, rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.rank()];
        if perm.len() != t.rank()
            || perm
                .iter()
                .any(|&p| p >= t.rank() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of rank {}", t.rank()),
            ));
        }
        let out = permute_tensor(t, &perm);
        let rg = self.rg(x);
        Ok(self.push(Op::Permute(x, perm), out, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = xs.first().ok_or_else(|| Error::invalid(OP, "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(OP, format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(
                    OP,
                    "non-concatenated axes",
                    format!("{base:?}"),
                    format!("{s:?}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let blk = t.dim(axis) * inner;
                out.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Op::Concat(xs.to_vec(), axis), Tensor::new(shape, out)?, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start + len > t.dim(axis) || len == 0 {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "range {start}..{} invalid for axis {axis} of shape {:?}",
                    start + len,
                    t.shape()
                ),
            ));
        }
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(
                &t.data()[(o * n + start) * inner..(o * n + start + len) * inner],
            );
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Op::Narrow { x, axis, start }, Tensor::new(shape, out)?, rg))
    }

    /// Nearest-neighbour upsampling of the last axis by `factor`.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::invalid("upsample", "factor must be >= 1"));
        }
        let t = self.value(x);
        let mut shape = t.shape().to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::invalid("upsample", "rank 0 input"))?;
        *shape.last_mut().unwrap() = last * factor;
        let out: Vec<T> = t
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Op::Upsample(x, factor), Tensor::new(shape, out)?, rg))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every leaf
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
        }

        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let elementwise = |x: &Tensor<T>, f: &dyn Fn(T, T, T) -> T| -> Tensor<T> {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("elementwise grad shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let cg =
                    kernels::conv1d_backward(self.value(*x), self.value(*w), g, geom, self.rg(*x));
                if let Some(gx) = cg.input {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, cg.kernel);
                if let Some(b) = b {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::Dense { x, w, b, geom } => {
                let (gx, gw, gb) =
                    kernels::dense_backward(self.value(*x), self.value(*w), g, geom, self.rg(*x));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Pool {
                x,
                kind,
                window,
                stride,
                argmax,
            } => {
                let gx =
                    kernels::pool1d_backward(self.shape(*x), g, *kind, *window, *stride, argmax);
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = xhat.shape();
                let c = shape[1];
                let l = if shape.len() == 3 { shape[2] } else { 1 };
                let n = T::of((shape[0] * l) as f64);
                let (gd, hd) = (g.data(), xhat.data());
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gh = vec![T::zero(); c];
                for (i, (&gv, &hv)) in gd.iter().zip(hd).enumerate() {
                    let ch = (i / l) % c;
                    sum_g[ch] = sum_g[ch] + gv;
                    sum_gh[ch] = sum_gh[ch] + gv * hv;
                }
                let gam = self.value(*gamma).data();
                let gx: Vec<T> = gd
                    .iter()
                    .zip(hd)
                    .enumerate()
                    .map(|(i, (&gv, &hv))| {
                        let ch = (i / l) % c;
                        if *train {
                            gam[ch] * inv_std[ch] / n * (n * gv - sum_g[ch] - hv * sum_gh[ch])
                        } else {
                            gam[ch] * inv_std[ch] * gv
                        }
                    })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(shape.to_vec(), gx).expect("bn grad shape"),
                );
                self.accumulate(
                    grads,
                    *gamma,
                    Tensor::new(vec![c], sum_gh).expect("bn gamma shape"),
                );
                self.accumulate(
                    grads,
                    *beta,
                    Tensor::new(vec![c], sum_g).expect("bn beta shape"),
                );
            }
            Op::Relu(x) => {
                let gx = elementwise(self.value(*x), &|xv, _, gv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = elementwise(self.value(*x), &|_, yv, gv| gv * yv * (T::one() - yv));
                self.accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let floor = T::of(LOG_FLOOR);
                let gx = elementwise(self.value(*x), &|xv, _, gv| {
                    if xv > floor {
                        gv / xv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = elementwise(self.value(*x), &|xv, _, gv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Powf(x, p) => {
                let p = *p;
                let gx = elementwise(self.value(*x), &|xv, _, gv| {
                    if xv == T::zero() {
                        if p == T::one() {
                            gv
                        } else {
                            T::zero()
                        }
                    } else {
                        gv * p * xv.powf(p - T::one())
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x, axis) => {
                let gx = kernels::softmax_backward(y, g, *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, kernels::reduce_to(g, self.shape(*a)));
                self.accumulate(grads, *b, kernels::reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, kernels::reduce_to(g, self.shape(*a)));
                let gb = kernels::reduce_to(g, self.shape(*b)).map(|v| -v);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let out_shape = y.shape();
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.rg(this) {
                        continue;
                    }
                    let ot = self.value(other);
                    let oi = kernels::broadcast_indices(out_shape, ot.shape());
                    let prod: Vec<T> = g
                        .data()
                        .iter()
                        .zip(&oi)
                        .map(|(&gv, &j)| gv * ot.data()[j])
                        .collect();
                    let prod = Tensor::new(out_shape.to_vec(), prod).expect("mul grad shape");
                    self.accumulate(grads, this, kernels::reduce_to(&prod, self.shape(this)));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv));
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel() as f64);
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv));
            }
            Op::SumAxis(x) => {
                self.accumulate(grads, *x, broadcast_to(g, self.shape(*x)));
            }
            Op::MeanAxis(x, axis) => {
                let n = T::of(self.shape(*x)[*axis] as f64);
                let gx = broadcast_to(g, self.shape(*x)).map(|v| v / n);
                self.accumulate(grads, *x, gx);
            }
            Op::MaxAxis { x, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*x).to_vec());
                let gxd = gx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    gxd[src] = gxd[src] + gv;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g
                    .clone()
                    .reshape(self.shape(*x).to_vec())
                    .expect("reshape grad");
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *x, permute_tensor(g, &inv));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = kernels::axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let s = self.shape(v).to_vec();
                    let n = s[*axis];
                    if self.rg(v) {
                        let mut part = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            part.extend_from_slice(
                                &g.data()[(o * total + offset) * inner
                                    ..(o * total + offset + n) * inner],
                            );
                        }
                        self.accumulate(grads, v, Tensor::new(s, part).expect("concat grad shape"));
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let (outer, n, inner) = kernels::axis_split(&s, *axis);
                let len = g.dim(*axis);
                let mut gx = Tensor::zeros(s);
                let gxd = gx.data_mut();
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    gxd[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(src);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Upsample(x, factor) => {
                let data = g
                    .data()
                    .chunks(*factor)
                    .map(|c| c.iter().copied().sum())
                    .collect();
                let gx = Tensor::new(self.shape(*x).to_vec(), data).expect("upsample grad shape");
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

fn broadcast_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let idx = kernels::broadcast_indices(shape, g.shape());
    let data = idx.iter().map(|&i| g.data()[i]).collect();
    Tensor::new(shape.to_vec(), data).expect("broadcast shape")
}

pub(crate) fn permute_tensor<T: Real>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let src_strides = strides(t.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.dim(p)).collect();
    let walk: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = t.numel();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(t.data()[cur]);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            cur += walk[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            cur -= walk[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute shape")
}
