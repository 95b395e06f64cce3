//! Softmax, layer normalisation, bilinear sampling and patch unfolding.

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::Var;

/// Integer neighbours and fractional weight of a border-clamped coordinate.
/// `live` is false when the coordinate was clamped (zero derivative).
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisSample {
    pub i0: usize,
    pub i1: usize,
    pub w: f64,
    pub live: bool,
}

pub(crate) fn axis_sample(v: f64, ext: usize) -> AxisSample {
    if ext == 1 {
        return AxisSample {
            i0: 0,
            i1: 0,
            w: 0.0,
            live: false,
        };
    }
    let hi = (ext - 1) as f64;
    let live = (0.0..=hi).contains(&v);
    let c = v.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(ext - 2);
    AxisSample {
        i0,
        i1: i0 + 1,
        w: c - i0 as f64,
        live,
    }
}

impl<'a> Var<'a> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'a>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let outer = numel(&shape[..axis]);
        let ext = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * ext + e) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for e in 0..ext {
                    m = m.max(xd[at(e)]);
                }
                let mut s = 0.0;
                for e in 0..ext {
                    let v = (xd[at(e)] - m).exp();
                    y[at(e)] = v;
                    s += v;
                }
                for e in 0..ext {
                    y[at(e)] /= s;
                }
            }
        }
        let value = Tensor::from_parts(shape, y);
        let yv = std::rc::Rc::new(value.clone());
        Ok(self.g.push(value, &[self], "softmax", move |g, _| {
            let y = yv.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |e: usize| (o * ext + e) * inner + i;
                    let mut dotp = 0.0;
                    for e in 0..ext {
                        dotp += g[at(e)] * y[at(e)];
                    }
                    for e in 0..ext {
                        gx[at(e)] = y[at(e)] * (g[at(e)] - dotp);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Normalises the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self, eps: f64) -> Result<Var<'a>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "scalar input"))?;
        let rows = x.len() / d;
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, v) in y[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
        }
        let value = Tensor::from_parts(shape, y);
        let yv = std::rc::Rc::new(value.clone());
        Ok(self.g.push(value, &[self], "layer_norm", move |g, _| {
            let y = yv.data();
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let yr = &y[r * d..(r + 1) * d];
                let mg = gr.iter().sum::<f64>() / d as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for k in 0..d {
                    gx[r * d + k] = inv_std[r] * (gr[k] - mg - yr[k] * mgy);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear interpolation of `self: [H, W, D]` at `points: [P, 2]`
    /// given as `(x, y)` pixel coordinates; returns `[P, D]`. Points are
    /// clamped to the grid border.
    pub fn bilinear_sample(self, points: Var<'a>) -> Result<Var<'a>> {
        let grid = self.value();
        let pts = points.value();
        let gs = grid.shape().to_vec();
        if gs.len() != 3 || pts.rank() != 2 || pts.shape()[1] != 2 {
            return Err(Error::shape("bilinear_sample", &gs, pts.shape()));
        }
        let (h, w, d) = (gs[0], gs[1], gs[2]);
        let p = pts.shape()[0];
        let samples: Vec<(AxisSample, AxisSample)> = pts
            .data()
            .chunks_exact(2)
            .map(|xy| (axis_sample(xy[0], w), axis_sample(xy[1], h)))
            .collect();
        let gd = grid.data();
        let mut out = vec![0.0; p * d];
        for (k, &(sx, sy)) in samples.iter().enumerate() {
            let o = &mut out[k * d..(k + 1) * d];
            let corners = [
                ((1.0 - sy.w) * (1.0 - sx.w), sy.i0, sx.i0),
                ((1.0 - sy.w) * sx.w, sy.i0, sx.i1),
                (sy.w * (1.0 - sx.w), sy.i1, sx.i0),
                (sy.w * sx.w, sy.i1, sx.i1),
            ];
            for (wt, yi, xi) in corners {
                let v = &gd[(yi * w + xi) * d..(yi * w + xi + 1) * d];
                for (oi, vi) in o.iter_mut().zip(v) {
                    *oi += wt * vi;
                }
            }
        }
        let value = Tensor::from_parts(vec![p, d], out);
        Ok(self.g.push(value, &[self, points], "bilinear_sample", move |g, mask| {
            let gd = grid.data();
            let mut ggrid = mask[0].then(|| vec![0.0; gd.len()]);
            let mut gpts = mask[1].then(|| vec![0.0; p * 2]);
            for (k, &(sx, sy)) in samples.iter().enumerate() {
                let gk = &g[k * d..(k + 1) * d];
                let row = |yi: usize, xi: usize| (yi * w + xi) * d;
                if let Some(gg) = ggrid.as_mut() {
                    let corners = [
                        ((1.0 - sy.w) * (1.0 - sx.w), sy.i0, sx.i0),
                        ((1.0 - sy.w) * sx.w, sy.i0, sx.i1),
                        (sy.w * (1.0 - sx.w), sy.i1, sx.i0),
                        (sy.w * sx.w, sy.i1, sx.i1),
                    ];
                    for (wt, yi, xi) in corners {
                        let r = row(yi, xi);
                        for (dst, gv) in gg[r..r + d].iter_mut().zip(gk) {
                            *dst += wt * gv;
                        }
                    }
                }
                if let Some(gp) = gpts.as_mut() {
                    let v00 = &gd[row(sy.i0, sx.i0)..row(sy.i0, sx.i0) + d];
                    let v01 = &gd[row(sy.i0, sx.i1)..row(sy.i0, sx.i1) + d];
                    let v10 = &gd[row(sy.i1, sx.i0)..row(sy.i1, sx.i0) + d];
                    let v11 = &gd[row(sy.i1, sx.i1)..row(sy.i1, sx.i1) + d];
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for c in 0..d {
                        dx += gk[c] * ((1.0 - sy.w) * (v01[c] - v00[c]) + sy.w * (v11[c] - v10[c]));
                        dy += gk[c] * ((1.0 - sx.w) * (v10[c] - v00[c]) + sx.w * (v11[c] - v01[c]));
                    }
                    if sx.live {
                        gp[k * 2] += dx;
                    }
                    if sy.live {
                        gp[k * 2 + 1] += dy;
                    }
                }
            }
            vec![ggrid, gpts]
        }))
    }

    /// Zero-padded `k x k` neighbourhoods of `self: [H, W, C]`, returned as
    /// `[H*W, k*k*C]` (row-major kernel taps, channels innermost).
    pub fn unfold(self, k: usize) -> Result<Var<'a>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 3 || k.is_multiple_of(2) {
            return Err(Error::invalid("unfold", format!("shape {s:?}, kernel {k}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let pad = (k / 2) as isize;
        let cols = k * k * c;
        // (output offset, input offset) pairs of each copied channel run.
        let mut runs = Vec::new();
        for i in 0..h {
            for j in 0..w {
                for di in 0..k {
                    for dj in 0..k {
                        let yi = i as isize + di as isize - pad;
                        let xj = j as isize + dj as isize - pad;
                        if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                            continue;
                        }
                        let dst = (i * w + j) * cols + (di * k + dj) * c;
                        let src = (yi as usize * w + xj as usize) * c;
                        runs.push((dst, src));
                    }
                }
            }
        }
        let xd = x.data();
        let mut out = vec![0.0; h * w * cols];
        for &(dst, src) in &runs {
            out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
        }
        let n_in = xd.len();
        let value = Tensor::from_parts(vec![h * w, cols], out);
        Ok(self.g.push(value, &[self], "unfold", move |g, _| {
            let mut gx = vec![0.0; n_in];
            for &(dst, src) in &runs {
                for (a, b) in gx[src..src + c].iter_mut().zip(&g[dst..dst + c]) {
                    *a += b;
                }
            }
            vec![Some(gx)]
        }))
    }
}
