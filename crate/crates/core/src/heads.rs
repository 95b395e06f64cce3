//! Heatmap heads, their equal-weight combination, and the heatmap loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Init, LayerNorm, Linear, Mlp};
use crate::tensor::Tensor;

/// Per-token MLP to a flattened heatmap: `[J, D]` -> `[J, H, W]`, with the
/// tokens layer-normed first as in TokenPose.
#[derive(Clone, Debug)]
pub struct TokenHead {
    pub norm: LayerNorm,
    pub mlp: Mlp,
    pub size: (usize, usize),
}

impl TokenHead {
    pub fn new(init: &mut Init<'_>, dim: usize, hidden: usize, size: (usize, usize), eps: f64) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut init.scoped("norm"), dim, eps)?,
            mlp: Mlp::new(init, dim, hidden, size.0 * size.1)?,
            size,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, tokens: Var<'g>) -> Result<Var<'g>> {
        let j = tokens.shape()[0];
        let x = self.norm.forward(g, tokens)?;
        self.mlp.forward(g, x)?.reshape(&[j, self.size.0, self.size.1])
    }
}

/// Grid features `[N, C]` -> `[J, H, W]` through 2x transposed-convolution
/// stages (kernel 2, stride 2) with GELU, then a 1x1 projection.
#[derive(Clone, Debug)]
pub struct UpsampleHead {
    pub stages: Vec<Linear>,
    pub proj: Linear,
    pub grid: (usize, usize),
    pub dim: usize,
}

impl UpsampleHead {
    pub fn new(
        init: &mut Init<'_>,
        in_dim: usize,
        dim: usize,
        joints: usize,
        grid: (usize, usize),
        stages: usize,
    ) -> Result<Self> {
        let layers = (0..stages)
            .map(|i| {
                let c_in = if i == 0 { in_dim } else { dim };
                Linear::new(&mut init.scoped(&format!("up.{i}")), c_in, 4 * dim, true)
            })
            .collect::<Result<_>>()?;
        let proj_in = if stages == 0 { in_dim } else { dim };
        Ok(Self {
            stages: layers,
            proj: Linear::new(&mut init.scoped("proj"), proj_in, joints, true)?,
            grid,
            dim,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let s = x.shape();
        let (gh, gw) = self.grid;
        if s.len() != 2 || s[0] != gh * gw {
            return Err(Error::invalid(
                "upsample head",
                format!("features {s:?} do not tile the {gh}x{gw} grid"),
            ));
        }
        let (mut h, mut w) = (gh, gw);
        let mut x = x.reshape(&[h, w, s[1]])?;
        for stage in &self.stages {
            let c = self.dim;
            x = stage
                .forward(g, x)?
                .reshape(&[h, w, 2, 2, c])?
                .permute(&[0, 2, 1, 3, 4])?
                .reshape(&[2 * h, 2 * w, c])?
                .gelu();
            h *= 2;
            w *= 2;
        }
        self.proj.forward(g, x)?.permute(&[2, 0, 1])
    }
}

/// `0.5·a + 0.5·b`.
pub fn combine<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("combine", &a.shape(), &b.shape()));
    }
    a.scale(0.5).add(b.scale(0.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossReduction {
    /// Mean over visible joints and pixels.
    #[default]
    Mean,
    /// Sum over visible joints and pixels.
    Sum,
}

/// Squared error between `pred: [J, H, W]` and the target, restricted to
/// visible joints. A window with no visible joint contributes zero.
pub fn heatmap_loss<'g>(
    g: &'g Graph<'g>,
    pred: Var<'g>,
    target: &Tensor,
    visible: &[bool],
    reduction: LossReduction,
) -> Result<Var<'g>> {
    let s = pred.shape();
    if s.as_slice() != target.shape() || s.len() != 3 || visible.len() != s[0] {
        return Err(Error::shape("heatmap_loss", &s, target.shape()));
    }
    let weights = Tensor::from_fn(&[s[0], 1, 1], |j| if visible[j] { 1.0 } else { 0.0 });
    let count = visible.iter().filter(|&&v| v).count();
    let sq = pred
        .sub(g.constant(target.clone()))?
        .mul(g.constant(weights))?
        .square()
        .sum();
    Ok(match reduction {
        LossReduction::Sum => sq,
        LossReduction::Mean if count == 0 => sq.scale(0.0),
        LossReduction::Mean => sq.scale(1.0 / (count * s[1] * s[2]) as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{trunc_normal, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_and_rng(seed: u64) -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn token_head_shapes_and_zero_input() {
        let (mut store, mut rng) = store_and_rng(0);
        let head = TokenHead::new(&mut Init::new(&mut store, &mut rng, 0.1), 8, 16, (4, 3), 1e-6).unwrap();
        let g = Graph::new(&store);
        let zero = head.forward(&g, g.constant(Tensor::zeros(&[5, 8]))).unwrap();
        assert_eq!(zero.shape(), vec![5, 4, 3]);
        assert!(zero.value().data().iter().all(|&v| v == 0.0));
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let row = trunc_normal(&[1, 8], 1.0, &mut rng2);
        let both = Tensor::new(vec![2, 8], [row.data(), row.data()].concat()).unwrap();
        let out = head.forward(&g, g.constant(both)).unwrap().value();
        assert_eq!(&out.data()[..12], &out.data()[12..]);
    }

    #[test]
    fn upsample_head_geometry() {
        let (mut store, mut rng) = store_and_rng(2);
        let head = UpsampleHead::new(&mut Init::new(&mut store, &mut rng, 0.1), 6, 4, 3, (2, 3), 2).unwrap();
        let g = Graph::new(&store);
        let out = head.forward(&g, g.constant(Tensor::zeros(&[6, 6]))).unwrap();
        assert_eq!(out.shape(), vec![3, 8, 12]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(head.forward(&g, g.constant(Tensor::zeros(&[5, 6]))).is_err());
    }

    #[test]
    fn pixel_shuffle_places_children() {
        let (mut store, mut rng) = store_and_rng(3);
        let head = UpsampleHead::new(&mut Init::new(&mut store, &mut rng, 0.1), 1, 1, 1, (1, 1), 1).unwrap();
        store.set("up.0.weight", Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        store.set("proj.weight", Tensor::ones(&[1, 1])).unwrap();
        let g = Graph::new(&store);
        let out = head.forward(&g, g.constant(Tensor::ones(&[1, 1]))).unwrap().value();
        let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let want: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| gelu(v)).collect();
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_is_equal_weight_average() {
        let g = Graph::detached();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = trunc_normal(&[2, 3, 3], 1.0, &mut rng);
        let b = trunc_normal(&[2, 3, 3], 1.0, &mut rng);
        let same = combine(g.constant(a.clone()), g.constant(a.clone())).unwrap().value();
        assert_eq!(same.data(), a.data());
        let half = combine(g.constant(a.clone()), g.constant(Tensor::zeros(&[2, 3, 3]))).unwrap().value();
        assert!(half.data().iter().zip(a.data()).all(|(h, x)| *h == 0.5 * x));
        let alpha = 1.7;
        let lhs = combine(g.constant(a.map(|v| alpha * v)), g.constant(b.map(|v| alpha * v))).unwrap().value();
        let rhs = combine(g.constant(a.clone()), g.constant(b.clone())).unwrap().value();
        assert!(lhs.data().iter().zip(rhs.data()).all(|(l, r)| (l - alpha * r).abs() < 1e-12));
        assert!(combine(g.constant(a), g.constant(Tensor::zeros(&[2, 3, 2]))).is_err());
    }

    #[test]
    fn loss_examples() {
        let g = Graph::detached();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = trunc_normal(&[3, 4, 5], 1.0, &mut rng);
        let vis = [true; 3];
        let l = |p: &Tensor, vis: &[bool]| {
            heatmap_loss(&g, g.constant(p.clone()), &gt, vis, LossReduction::Mean)
                .unwrap()
                .value()
                .item()
        };
        assert_eq!(l(&gt, &vis), 0.0);
        assert!((l(&gt.map(|v| v + 1.0), &vis) - 1.0).abs() < 1e-12);

        let pred = trunc_normal(&[3, 4, 5], 1.0, &mut rng);
        let mut oracle = 0.0;
        for (p, t) in pred.data().iter().zip(gt.data()) {
            oracle += (p - t) * (p - t);
        }
        assert!((l(&pred, &vis) - oracle / 60.0).abs() < 1e-12);

        let partial = [true, false, true];
        let mut kept = 0.0;
        for j in [0, 2] {
            for k in 0..20 {
                let d = pred.data()[j * 20 + k] - gt.data()[j * 20 + k];
                kept += d * d;
            }
        }
        assert!((l(&pred, &partial) - kept / 40.0).abs() < 1e-12);
        assert_eq!(l(&pred, &[false; 3]), 0.0);
        let sum = heatmap_loss(&g, g.constant(pred.clone()), &gt, &vis, LossReduction::Sum)
            .unwrap()
            .value()
            .item();
        assert!((sum - oracle).abs() < 1e-10);
    }

    #[test]
    fn linear_head_loss_gradient_matches_least_squares() {
        // Two-parameter head h = a·u + b·v; dL/da = 2/M Σ (h − t)·u.
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(0.3).reshape(&[1, 1, 1]).unwrap()).unwrap();
        let b = store.add("b", Tensor::scalar(-0.7).reshape(&[1, 1, 1]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = trunc_normal(&[1, 3, 4], 1.0, &mut rng);
        let v = trunc_normal(&[1, 3, 4], 1.0, &mut rng);
        let t = trunc_normal(&[1, 3, 4], 1.0, &mut rng);
        let g = Graph::new(&store);
        let h = g
            .param(a)
            .mul(g.constant(u.clone()))
            .unwrap()
            .add(g.param(b).mul(g.constant(v.clone())).unwrap())
            .unwrap();
        let loss = heatmap_loss(&g, h, &t, &[true], LossReduction::Mean).unwrap();
        let grads = g.backward(loss).unwrap();
        let (mut ga, mut gb) = (0.0, 0.0);
        for k in 0..12 {
            let r = 0.3 * u.data()[k] - 0.7 * v.data()[k] - t.data()[k];
            ga += 2.0 * r * u.data()[k] / 12.0;
            gb += 2.0 * r * v.data()[k] / 12.0;
        }
        assert!((grads.param(a).unwrap().item() - ga).abs() < 1e-6);
        assert!((grads.param(b).unwrap().item() - gb).abs() < 1e-6);
        drop(g);
        let fd = crate::gradcheck::finite_diff_grad(
            |s| {
                let (a, b) = (s.value(a).item(), s.value(b).item());
                (0..12)
                    .map(|k| (a * u.data()[k] + b * v.data()[k] - t.data()[k]).powi(2))
                    .sum::<f64>()
                    / 12.0
            },
            &store,
            &[a, b],
            1e-5,
        );
        assert!((fd[0].item() - ga).abs() < 1e-6 && (fd[1].item() - gb).abs() < 1e-6);
    }
}
