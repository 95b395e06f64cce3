//! Elementwise arithmetic, reductions and shape manipulation.

use crate::error::{Error, Result};
use crate::tensor::{
    broadcast_shape, broadcast_strides, for_each_broadcast, invert_axes, numel, permute_kernel,
    Tensor,
};

use super::Var;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

impl<'a> Var<'a> {
    fn binary(self, rhs: Var<'a>, op: BinOp) -> Result<Var<'a>> {
        debug_assert!(self.same_graph(&rhs));
        let a = self.value();
        let b = rhs.value();
        let out_shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut out = vec![0.0; numel(&out_shape)];
        let (ad, bd) = (a.data(), b.data());
        if a.shape() == b.shape() {
            for ((o, &x), &y) in out.iter_mut().zip(ad).zip(bd) {
                *o = op.apply(x, y);
            }
        } else {
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                out[o] = op.apply(ad[ia], bd[ib]);
            });
        }
        let value = Tensor::from_parts(out_shape.clone(), out);
        Ok(self.g.push(value, &[self, rhs], op.name(), move |g, mask| {
            let (ad, bd) = (a.data(), b.data());
            let mut ga = mask[0].then(|| vec![0.0; ad.len()]);
            let mut gb = mask[1].then(|| vec![0.0; bd.len()]);
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                let go = g[o];
                let (da, db) = match op {
                    BinOp::Add => (go, go),
                    BinOp::Sub => (go, -go),
                    BinOp::Mul => (go * bd[ib], go * ad[ia]),
                    BinOp::Div => (go / bd[ib], -go * ad[ia] / (bd[ib] * bd[ib])),
                };
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += db;
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(self, rhs: Var<'a>) -> Result<Var<'a>> {
        self.binary(rhs, BinOp::Add)
    }

    pub fn sub(self, rhs: Var<'a>) -> Result<Var<'a>> {
        self.binary(rhs, BinOp::Sub)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(self, rhs: Var<'a>) -> Result<Var<'a>> {
        self.binary(rhs, BinOp::Mul)
    }

    pub fn div(self, rhs: Var<'a>) -> Result<Var<'a>> {
        self.binary(rhs, BinOp::Div)
    }

    /// Unary map given `f` and its derivative expressed through input and
    /// output.
    pub(crate) fn unary(
        self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'a> {
        let x = self.value();
        let y = x.map(f);
        let yv = std::rc::Rc::new(y.clone());
        self.g.push(y, &[self], name, move |g, _| {
            let gx = x
                .data()
                .iter()
                .zip(yv.data())
                .zip(g)
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn neg(self) -> Var<'a> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'a> {
        self.unary("scale", move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'a> {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn square(self) -> Var<'a> {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(self) -> Var<'a> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(self) -> Var<'a> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'a> {
        self.unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'a> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        self.unary(
            "gelu",
            |x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()),
            |x, _| {
                let u = C * (x + A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    /// Sum of every element, as a scalar.
    pub fn sum(self) -> Var<'a> {
        let x = self.value();
        let n = x.len();
        let s = Tensor::scalar(x.sum());
        self.g.push(s, &[self], "sum", move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(self) -> Var<'a> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'a>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "sum_axis",
                axis,
                rank: shape.len(),
            });
        }
        let outer = numel(&shape[..axis]);
        let ext = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = vec![0.0; outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for e in 0..ext {
                let src = &xd[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.g.push(value, &[self], "sum_axis", move |g, _| {
            let mut gx = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                for e in 0..ext {
                    gx[(o * ext + e) * inner..(o * ext + e + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'a>> {
        let ext = *self.shape().get(axis).ok_or(Error::InvalidAxis {
            op: "mean_axis",
            axis,
            rank: self.shape().len(),
        })?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / ext as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'a>> {
        let x = self.value();
        let value = x.reshape(shape)?;
        Ok(self.g.push(value, &[self], "reshape", move |g, _| vec![Some(g.to_vec())]))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'a>> {
        let x = self.value();
        let (shape, data) = permute_kernel(x.shape(), x.data(), axes)?;
        let inv = invert_axes(axes);
        let out_shape = shape.clone();
        let value = Tensor::from_parts(shape, data);
        Ok(self.g.push(value, &[self], "permute", move |g, _| {
            let (_, gx) = permute_kernel(&out_shape, g, &inv).expect("valid inverse permutation");
            vec![Some(gx)]
        }))
    }

    /// Broadcasts `self` to `shape` (numpy rules); gradients are summed back.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'a>> {
        let out = self.g.constant(Tensor::zeros(shape)).add(self)?;
        if out.shape() != shape {
            return Err(Error::shape("expand", &self.shape(), shape));
        }
        Ok(out)
    }

    /// Swaps the last two axes.
    pub fn t(self) -> Result<Var<'a>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::invalid("transpose", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'a>> {
        let x = self.value();
        let value = x.narrow(axis, start, len)?;
        let shape = x.shape().to_vec();
        let outer = numel(&shape[..axis]);
        let ext = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        Ok(self.g.push(value, &[self], "narrow", move |g, _| {
            let mut gx = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                let dst = (o * ext + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenation along `axis`; every other extent must agree.
    pub fn concat(parts: &[Var<'a>], axis: usize) -> Result<Var<'a>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut exts = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            exts.push(s[axis]);
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let total: usize = exts.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&exts) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        Ok(first.g.push(value, parts, "concat", move |g, mask| {
            let mut grads: Vec<Option<Vec<f64>>> = exts
                .iter()
                .zip(mask)
                .map(|(&e, &m)| m.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gp, &e) in grads.iter_mut().zip(&exts) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + e * inner]);
                    }
                    off += e * inner;
                }
            }
            grads
        }))
    }
}
