//! Dense row-major `f64` arrays and the raw kernels shared by the forward
//! and backward passes of the graph.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::invalid("tensor", format!("zero extent in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose size is known to match; panics otherwise.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "shape {shape:?}");
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len(), "index rank");
        let st = strides(&self.shape);
        let off: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                op: "narrow",
                axis,
                rank: self.rank(),
            });
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} out of extent {}", start + len, self.shape[axis]),
            ));
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let ext = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let (shape, data) = permute_kernel(&self.shape, &self.data, axes)?;
        Ok(Self { shape, data })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = vec![0.0; numel(&plan.out_shape)];
        plan.forward(&self.data, &other.data, &mut out);
        Ok(Self::from_parts(plan.out_shape, out))
    }
}

/// Computes the permuted shape and data.
pub(crate) fn permute_kernel(
    shape: &[usize],
    data: &[f64],
    axes: &[usize],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let r = shape.len();
    let mut seen = vec![false; r];
    if axes.len() != r {
        return Err(Error::invalid("permute", format!("{axes:?} for rank {r}")));
    }
    for &a in axes {
        if a >= r || seen[a] {
            return Err(Error::invalid("permute", format!("{axes:?} is not a permutation")));
        }
        seen[a] = true;
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if r == 0 {
        out.extend_from_slice(data);
        return Ok((out_shape, out));
    }
    // Innermost loop peeled for speed.
    let last = r - 1;
    let inner_ext = out_shape[last];
    let inner_stride = src_strides[last];
    let mut idx = vec![0usize; r];
    let mut base = 0usize;
    let outer = n / inner_ext;
    for _ in 0..outer {
        let mut off = base;
        for _ in 0..inner_ext {
            out.push(data[off]);
            off += inner_stride;
        }
        // advance odometer over axes [0, last)
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok((out_shape, out))
}

/// Inverse permutation of `axes`.
pub(crate) fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Right-aligned (numpy) broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::shape(op, a, b));
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on
/// broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

/// Visits every output element of a broadcast binary op with the matching
/// source offsets.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; r];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        let mut ax = r;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

/// Batched matmul with broadcast batch dimensions: `[..., m, k] x [..., k, n]`.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// (a batch offset, b batch offset) per output batch, in matrices.
    pub pairs: Vec<(usize, usize)>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let ba = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch = broadcast_shape("matmul", ba, bb).map_err(|_| Error::shape("matmul", a, b))?;
        let sa = broadcast_strides(ba, &batch);
        let sb = broadcast_strides(bb, &batch);
        let mut pairs = Vec::with_capacity(numel(&batch));
        for_each_broadcast(&batch, &sa, &sb, |_, oa, ob| pairs.push((oa, ob)));
        let mut out_shape = batch;
        out_shape.push(m);
        out_shape.push(n);
        Ok(Self {
            m,
            k,
            n,
            out_shape,
            pairs,
        })
    }

    pub fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        for (bi, &(pa, pb)) in self.pairs.iter().enumerate() {
            let a = &a[pa * m * k..(pa + 1) * m * k];
            let b = &b[pb * k * n..(pb + 1) * k * n];
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            gemm_nn(m, k, n, a, b, c);
        }
    }

    /// Accumulates gradients of both operands.
    pub fn backward(
        &self,
        a: &[f64],
        b: &[f64],
        g: &[f64],
        ga: Option<&mut [f64]>,
        gb: Option<&mut [f64]>,
    ) {
        let (m, k, n) = (self.m, self.k, self.n);
        if let Some(ga) = ga {
            for (bi, &(pa, pb)) in self.pairs.iter().enumerate() {
                let b = &b[pb * k * n..(pb + 1) * k * n];
                let g = &g[bi * m * n..(bi + 1) * m * n];
                let ga = &mut ga[pa * m * k..(pa + 1) * m * k];
                // ga += g b^T
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        ga[i * k + p] += dot(grow, brow);
                    }
                }
            }
        }
        if let Some(gb) = gb {
            for (bi, &(pa, pb)) in self.pairs.iter().enumerate() {
                let a = &a[pa * m * k..(pa + 1) * m * k];
                let g = &g[bi * m * n..(bi + 1) * m * n];
                let gb = &mut gb[pb * k * n..(pb + 1) * k * n];
                // gb += a^T g
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        axpy(aip, grow, &mut gb[p * n..(p + 1) * n]);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// c = a b for row-major `a: m x k`, `b: k x n` (c overwritten).
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    c.fill(0.0);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            axpy(aip, &b[p * n..(p + 1) * n], crow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.at(&[c, a, b]), t.at(&[a, b, c]));
                }
            }
        }
        let back = p.permute(&invert_axes(&[2, 0, 1])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn narrow_middle_axis() {
        let t = Tensor::from_fn(&[2, 4, 2], |i| i as f64);
        let n = t.narrow(1, 1, 2).unwrap();
        assert_eq!(n.data(), &[2.0, 3.0, 4.0, 5.0, 10.0, 11.0, 12.0, 13.0]);
        assert!(t.narrow(1, 3, 2).is_err());
    }
}
