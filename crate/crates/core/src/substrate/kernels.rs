//! Forward and backward kernels behind the graph ops. Batch-level loops go
//! through [`crate::par`]; reductions across the batch are always performed
//! in index order.

use crate::error::{Error, Result};
use crate::par;

use super::tensor::{strides, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub len: usize,
    pub cout: usize,
    pub taps: usize,
    pub out_len: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], bias: Option<&[usize]>, spec: ConvSpec) -> Result<Self> {
        const OP: &str = "conv1d";
        if x.len() != 3 {
            return Err(Error::shape(OP, "input rank", 3, x.len()));
        }
        if w.len() != 3 {
            return Err(Error::shape(OP, "kernel rank", 3, w.len()));
        }
        if spec.groups == 0 || spec.stride == 0 {
            return Err(Error::invalid(OP, "groups and stride must be >= 1"));
        }
        let (batch, cin, len) = (x[0], x[1], x[2]);
        let (cout, cin_g, taps) = (w[0], w[1], w[2]);
        if cin % spec.groups != 0 {
            return Err(Error::invalid(
                OP,
                format!(
                    "input channels {cin} not divisible by groups {}",
                    spec.groups
                ),
            ));
        }
        if cout % spec.groups != 0 {
            return Err(Error::invalid(
                OP,
                format!(
                    "output channels {cout} not divisible by groups {}",
                    spec.groups
                ),
            ));
        }
        if cin_g != cin / spec.groups {
            return Err(Error::shape(
                OP,
                "kernel dim 1 (Cin/groups)",
                cin / spec.groups,
                cin_g,
            ));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(Error::shape(
                    OP,
                    "bias length (Cout)",
                    cout,
                    format!("{b:?}"),
                ));
            }
        }
        let padded = len + 2 * spec.padding;
        if taps == 0 || padded < taps {
            return Err(Error::shape(
                OP,
                "padded input length (L + 2*padding) vs kernel taps",
                format!(">= {taps}"),
                padded,
            ));
        }
        let out_len = (padded - taps) / spec.stride + 1;
        Ok(Self {
            batch,
            cin,
            len,
            cout,
            taps,
            out_len,
            cin_g,
            cout_g: cout / spec.groups,
            spec,
        })
    }

    /// Output positions `o` with `0 <= o*stride + tap - padding < len`.
    #[inline]
    fn valid(&self, tap: usize) -> (usize, usize) {
        let (s, p) = (self.spec.stride, self.spec.padding);
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        let hi = if self.len + p > tap {
            ((self.len + p - tap - 1) / s + 1).min(self.out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Tensor<T> {
    let ConvGeom {
        batch,
        cin,
        len,
        cout,
        taps,
        out_len,
        cin_g,
        cout_g,
        spec,
    } = *geom;
    let mut out = vec![T::zero(); batch * cout * out_len];
    let (xd, wd) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    par::for_each_chunk(&mut out, cout * out_len, |b, sample| {
        let xs = &xd[b * cin * len..(b + 1) * cin * len];
        for oc in 0..cout {
            let g = oc / cout_g;
            let row = &mut sample[oc * out_len..(oc + 1) * out_len];
            if let Some(bd) = bd {
                row.fill(bd[oc]);
            }
            for icl in 0..cin_g {
                let xr = &xs[(g * cin_g + icl) * len..(g * cin_g + icl + 1) * len];
                for k in 0..taps {
                    let wv = wd[(oc * cin_g + icl) * taps + k];
                    let (lo, hi) = geom.valid(k);
                    for (o, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                        *r = *r + wv * xr[o * spec.stride + k - spec.padding];
                    }
                }
            }
        }
    });
    Tensor::new(vec![batch, cout, out_len], out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    geom: &ConvGeom,
    need_input: bool,
) -> ConvGrads<T> {
    let ConvGeom {
        batch,
        cin,
        len,
        cout,
        taps,
        out_len,
        cin_g,
        cout_g,
        spec,
    } = *geom;
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());

    let input = need_input.then(|| {
        let mut gx = vec![T::zero(); batch * cin * len];
        par::for_each_chunk(&mut gx, cin * len, |b, gxs| {
            let gs = &gd[b * cout * out_len..(b + 1) * cout * out_len];
            for oc in 0..cout {
                let g = oc / cout_g;
                let gr = &gs[oc * out_len..(oc + 1) * out_len];
                for icl in 0..cin_g {
                    let ic = g * cin_g + icl;
                    let gxr = &mut gxs[ic * len..(ic + 1) * len];
                    for k in 0..taps {
                        let wv = wd[(oc * cin_g + icl) * taps + k];
                        let (lo, hi) = geom.valid(k);
                        for (o, &go) in gr.iter().enumerate().take(hi).skip(lo) {
                            let p = o * spec.stride + k - spec.padding;
                            gxr[p] = gxr[p] + wv * go;
                        }
                    }
                }
            }
        });
        Tensor::new(vec![batch, cin, len], gx).expect("conv grad input shape")
    });

    let mut gw = vec![T::zero(); cout * cin_g * taps];
    par::for_each_chunk(&mut gw, cin_g * taps, |oc, gwr| {
        let g = oc / cout_g;
        for b in 0..batch {
            let gr = &gd[(b * cout + oc) * out_len..(b * cout + oc + 1) * out_len];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let xr = &xd[(b * cin + ic) * len..(b * cin + ic + 1) * len];
                for k in 0..taps {
                    let (lo, hi) = geom.valid(k);
                    let mut acc = T::zero();
                    for o in lo..hi {
                        acc = acc + xr[o * spec.stride + k - spec.padding] * gr[o];
                    }
                    gwr[icl * taps + k] = gwr[icl * taps + k] + acc;
                }
            }
        }
    });

    let mut gb = vec![T::zero(); cout];
    for b in 0..batch {
        for (oc, gbv) in gb.iter_mut().enumerate() {
            let gr = &gd[(b * cout + oc) * out_len..(b * cout + oc + 1) * out_len];
            *gbv = *gbv + gr.iter().copied().sum::<T>();
        }
    }

    ConvGrads {
        input,
        kernel: Tensor::new(vec![cout, cin_g, taps], gw).expect("conv grad kernel shape"),
        bias: Tensor::new(vec![cout], gb).expect("conv grad bias shape"),
    }
}

/// Grouped dense layer geometry. The weight is either compact `[M, N/groups]`
/// or full `[M, N]`; in the full form entries outside the diagonal blocks are
/// ignored.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseGeom {
    pub batch: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub in_g: usize,
    pub out_g: usize,
    /// Row stride of the weight and column offset of group `g` (`g * in_g` when full).
    pub w_cols: usize,
    pub full: bool,
}

impl DenseGeom {
    pub fn new(x: &[usize], w: &[usize], bias: Option<&[usize]>, groups: usize) -> Result<Self> {
        const OP: &str = "dense";
        if x.len() != 2 {
            return Err(Error::shape(OP, "input rank", 2, x.len()));
        }
        if w.len() != 2 {
            return Err(Error::shape(OP, "weight rank", 2, w.len()));
        }
        if groups == 0 {
            return Err(Error::invalid(OP, "groups must be >= 1"));
        }
        let (batch, n_in) = (x[0], x[1]);
        let n_out = w[0];
        if n_in % groups != 0 || !n_out.is_multiple_of(groups) {
            return Err(Error::invalid(
                OP,
                format!("groups {groups} must divide N={n_in} and M={n_out}"),
            ));
        }
        let in_g = n_in / groups;
        let full = w[1] == n_in && groups > 1;
        if w[1] != in_g && !full {
            return Err(Error::shape(OP, "weight dim 1 (N/groups or N)", in_g, w[1]));
        }
        if let Some(b) = bias {
            if b != [n_out] {
                return Err(Error::shape(OP, "bias length (M)", n_out, format!("{b:?}")));
            }
        }
        Ok(Self {
            batch,
            n_in,
            n_out,
            in_g,
            out_g: n_out / groups,
            w_cols: w[1],
            full,
        })
    }

    #[inline]
    fn w_index(&self, m: usize, j: usize) -> usize {
        let g = m / self.out_g;
        if self.full {
            m * self.w_cols + g * self.in_g + j
        } else {
            m * self.w_cols + j
        }
    }
}

pub(crate) fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &DenseGeom,
) -> Tensor<T> {
    let (xd, wd) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    let mut out = vec![T::zero(); geom.batch * geom.n_out];
    par::for_each_chunk(&mut out, geom.n_out, |b, row| {
        let xr = &xd[b * geom.n_in..(b + 1) * geom.n_in];
        for (m, r) in row.iter_mut().enumerate() {
            let g = m / geom.out_g;
            let mut acc = bd.map_or(T::zero(), |bd| bd[m]);
            for j in 0..geom.in_g {
                acc = acc + wd[geom.w_index(m, j)] * xr[g * geom.in_g + j];
            }
            *r = acc;
        }
    });
    Tensor::new(vec![geom.batch, geom.n_out], out).expect("dense output shape")
}

pub(crate) fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    geom: &DenseGeom,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());
    let gx = need_input.then(|| {
        let mut gx = vec![T::zero(); geom.batch * geom.n_in];
        par::for_each_chunk(&mut gx, geom.n_in, |b, gxr| {
            let gr = &gd[b * geom.n_out..(b + 1) * geom.n_out];
            for (m, &gv) in gr.iter().enumerate() {
                let g = m / geom.out_g;
                for j in 0..geom.in_g {
                    let i = g * geom.in_g + j;
                    gxr[i] = gxr[i] + wd[geom.w_index(m, j)] * gv;
                }
            }
        });
        Tensor::new(vec![geom.batch, geom.n_in], gx).expect("dense grad input shape")
    });
    let mut gw = vec![T::zero(); w.numel()];
    par::for_each_chunk(&mut gw, geom.w_cols, |m, gwr| {
        let g = m / geom.out_g;
        let off = if geom.full { g * geom.in_g } else { 0 };
        for b in 0..geom.batch {
            let gv = gd[b * geom.n_out + m];
            let xr = &xd[b * geom.n_in + g * geom.in_g..b * geom.n_in + (g + 1) * geom.in_g];
            for (j, &xv) in xr.iter().enumerate() {
                gwr[off + j] = gwr[off + j] + xv * gv;
            }
        }
    });
    let mut gb = vec![T::zero(); geom.n_out];
    for b in 0..geom.batch {
        for (m, gbv) in gb.iter_mut().enumerate() {
            *gbv = *gbv + gd[b * geom.n_out + m];
        }
    }
    (
        gx,
        Tensor::new(w.shape().to_vec(), gw).expect("dense grad weight shape"),
        Tensor::new(vec![geom.n_out], gb).expect("dense grad bias shape"),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Returns the pooled tensor and, for max pooling, the flat source index of
/// every output element (first maximal index on ties).
pub(crate) fn pool1d_forward<T: Real>(
    x: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "pool1d";
    if x.rank() != 3 {
        return Err(Error::shape(OP, "input rank", 3, x.rank()));
    }
    if window == 0 || stride == 0 {
        return Err(Error::invalid(OP, "window and stride must be >= 1"));
    }
    let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
    if window > l {
        return Err(Error::shape(
            OP,
            "window vs length L",
            format!("<= {l}"),
            window,
        ));
    }
    let out_len = (l - window) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * out_len);
    let mut arg = Vec::new();
    let inv = T::one() / T::of(window as f64);
    for row in 0..b * c {
        let xr = &xd[row * l..(row + 1) * l];
        for o in 0..out_len {
            let win = &xr[o * stride..o * stride + window];
            match kind {
                PoolKind::Avg => out.push(win.iter().copied().sum::<T>() * inv),
                PoolKind::Max => {
                    let mut best = 0;
                    for (i, &v) in win.iter().enumerate() {
                        if v > win[best] {
                            best = i;
                        }
                    }
                    out.push(win[best]);
                    arg.push(row * l + o * stride + best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, c, out_len], out)?, arg))
}

pub(crate) fn pool1d_backward<T: Real>(
    input_shape: &[usize],
    gout: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
    argmax: &[usize],
) -> Tensor<T> {
    let l = input_shape[2];
    let out_len = gout.dim(2);
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gd = gout.data();
    let gxd = gx.data_mut();
    match kind {
        PoolKind::Avg => {
            let inv = T::one() / T::of(window as f64);
            for row in 0..input_shape[0] * input_shape[1] {
                for o in 0..out_len {
                    let gv = gd[row * out_len + o] * inv;
                    for i in 0..window {
                        let p = row * l + o * stride + i;
                        gxd[p] = gxd[p] + gv;
                    }
                }
            }
        }
        PoolKind::Max => {
            for (&src, &gv) in argmax.iter().zip(gd) {
                gxd[src] = gxd[src] + gv;
            }
        }
    }
    gx
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let mut mx = T::neg_infinity();
            for k in 0..n {
                mx = mx.max(xd[idx(k)]);
            }
            let mut total = T::zero();
            for k in 0..n {
                let e = (xd[idx(k)] - mx).exp();
                out[idx(k)] = e;
                total = total + e;
            }
            for k in 0..n {
                out[idx(k)] = out[idx(k)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, gout: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), gout.data());
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: T = (0..n).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..n {
                gx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), gx).expect("softmax grad shape")
}

/// Output shape of broadcasting `a` with `b` (equal rank, each dim equal or 1).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, "rank", a.len(), b.len()));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("axis {i}"), x, y)),
        })
        .collect()
}

/// For every flat index into `out`, the flat index into a broadcast operand of shape `shape`.
pub(crate) fn broadcast_indices(out: &[usize], shape: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    if out == shape {
        return (0..n).collect();
    }
    let src = strides(shape);
    let eff: Vec<usize> = shape
        .iter()
        .zip(&src)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; out.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for ax in (0..out.len()).rev() {
            counter[ax] += 1;
            cur += eff[ax];
            if counter[ax] < out[ax] {
                break;
            }
            cur -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

/// Sums `g` (shaped like the broadcast output) back down to `shape`.
pub(crate) fn reduce_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let idx = broadcast_indices(g.shape(), shape);
    let mut out = Tensor::zeros(shape.to_vec());
    let od = out.data_mut();
    for (&i, &v) in idx.iter().zip(g.data()) {
        od[i] = od[i] + v;
    }
    out
}

/// Per-channel statistics over axes (0, 2) of a `[B, C, L]` tensor
/// (or axis 0 of `[B, C]`). Variance is the biased batch variance.
pub(crate) fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (b, c) = (x.dim(0), x.dim(1));
    let l = if x.rank() == 3 { x.dim(2) } else { 1 };
    let n = T::of((b * l) as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for (ch, m) in mean.iter_mut().enumerate() {
        let mut s = T::zero();
        for bi in 0..b {
            s = s + xd[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                .iter()
                .copied()
                .sum::<T>();
        }
        *m = s / n;
    }
    for (ch, v) in var.iter_mut().enumerate() {
        let mut s = T::zero();
        for bi in 0..b {
            for &xv in &xd[(bi * c + ch) * l..(bi * c + ch + 1) * l] {
                let d = xv - mean[ch];
                s = s + d * d;
            }
        }
        *v = s / n;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for len in 1..8 {
            for taps in 1..=len + 2 {
                for pad in 0..3 {
                    for stride in 1..4 {
                        let spec = ConvSpec {
                            stride,
                            padding: pad,
                            groups: 1,
                        };
                        let Ok(g) = ConvGeom::new(&[1, 1, len], &[1, 1, taps], None, spec) else {
                            continue;
                        };
                        for k in 0..taps {
                            let (lo, hi) = g.valid(k);
                            for o in 0..g.out_len {
                                let p = (o * stride + k) as isize - pad as isize;
                                let inside = p >= 0 && (p as usize) < len;
                                assert_eq!(
                                    inside,
                                    o >= lo && o < hi,
                                    "len {len} taps {taps} pad {pad} stride {stride} k {k} o {o}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn broadcast_indices_expand_middle_axis() {
        let idx = broadcast_indices(&[2, 3, 2], &[2, 1, 2]);
        assert_eq!(idx, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn broadcast_shape_rejects_incompatible() {
        assert!(broadcast_shape("t", &[2, 3], &[2, 4]).is_err());
        assert_eq!(broadcast_shape("t", &[2, 1], &[1, 4]).unwrap(), vec![2, 4]);
    }
}
