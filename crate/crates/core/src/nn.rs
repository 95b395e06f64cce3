//! Parameterised layers shared by every stage of the model.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Registers parameters under a dotted name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    std: f64,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, std: f64) -> Self {
        Self {
            store,
            rng,
            std,
            prefix: String::new(),
        }
    }

    pub fn scoped(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Init {
            store: self.store,
            rng: self.rng,
            std: self.std,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = trunc_normal(shape, self.std, self.rng);
        self.store.add(self.full_name(name), t)
    }

    pub fn normal_with_std(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = trunc_normal(shape, std, self.rng);
        self.store.add(self.full_name(name), t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.add(self.full_name(name), Tensor::full(shape, v))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = init.normal("weight", &[in_dim, out_dim])?;
        let bias = if bias {
            Some(init.constant("bias", &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Zero-initialised projection.
    pub fn zeros(init: &mut Init<'_>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = init.constant("weight", &[in_dim, out_dim], 0.0)?;
        let bias = if bias {
            Some(init.constant("bias", &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let y = x.matmul(g.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(g.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[dim], 1.0)?,
            beta: init.constant("beta", &[dim], 0.0)?,
            eps,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(self.eps)?
            .mul(g.param(self.gamma))?
            .add(g.param(self.beta))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&mut init.scoped("fc1"), in_dim, hidden, true)?,
            fc2: Linear::new(&mut init.scoped("fc2"), hidden, out_dim, true)?,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.fc1.forward(g, x)?.gelu();
        self.fc2.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention. Queries come from one token
/// set and keys/values from another (the same set for self-attention).
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(init: &mut Init<'_>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&mut init.scoped("q"), dim, dim, true)?,
            k: Linear::new(&mut init.scoped("k"), dim, dim, true)?,
            v: Linear::new(&mut init.scoped("v"), dim, dim, true)?,
            out: Linear::new(&mut init.scoped("out"), dim, dim, true)?,
            heads,
            dim,
        })
    }

    fn split_heads<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        let s = x.shape();
        let (b, l) = (s[0], s[1]);
        x.reshape(&[b, l, self.heads, self.dim / self.heads])?
            .permute(&[0, 2, 1, 3])
    }

    /// `query: [B, Lq, D]`, `context: [B, Lk, D]` -> (`[B, Lq, D]`,
    /// attention weights `[B, H, Lq, Lk]`).
    pub fn forward_with_weights<'g>(
        &self,
        g: &'g Graph<'g>,
        query: Var<'g>,
        context: Var<'g>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let qs = query.shape();
        if qs.len() != 3 || context.shape().len() != 3 {
            return Err(Error::shape("attention", &qs, &context.shape()));
        }
        let (b, lq) = (qs[0], qs[1]);
        let q = self.split_heads(self.q.forward(g, query)?)?;
        let k = self.split_heads(self.k.forward(g, context)?)?;
        let v = self.split_heads(self.v.forward(g, context)?)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let weights = q.matmul(k.t()?)?.scale(scale).softmax(3)?;
        let mixed = weights
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, lq, self.dim])?;
        Ok((self.out.forward(g, mixed)?, weights))
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, query: Var<'g>, context: Var<'g>) -> Result<Var<'g>> {
        Ok(self.forward_with_weights(g, query, context)?.0)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(init: &mut Init<'_>, dim: usize, heads: usize, mlp_hidden: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&mut init.scoped("norm1"), dim, eps)?,
            attn: Attention::new(&mut init.scoped("attn"), dim, heads)?,
            norm2: LayerNorm::new(&mut init.scoped("norm2"), dim, eps)?,
            mlp: Mlp::new(&mut init.scoped("mlp"), dim, mlp_hidden, dim)?,
        })
    }

    /// `x: [B, L, D]`; returns the block output and the attention weights.
    pub fn forward_with_weights<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let h = self.norm1.forward(g, x)?;
        let (a, w) = self.attn.forward_with_weights(g, h, h)?;
        let x = x.add(a)?;
        let h = self.norm2.forward(g, x)?;
        Ok((x.add(self.mlp.forward(g, h)?)?, w))
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(self.forward_with_weights(g, x)?.0)
    }
}

/// A stack of transformer blocks built under `name.{i}`.
pub fn block_stack(
    init: &mut Init<'_>,
    name: &str,
    count: usize,
    dim: usize,
    heads: usize,
    mlp_hidden: usize,
    eps: f64,
) -> Result<Vec<TransformerBlock>> {
    (0..count)
        .map(|i| TransformerBlock::new(&mut init.scoped(&format!("{name}.{i}")), dim, heads, mlp_hidden, eps))
        .collect()
}

pub fn run_blocks<'g>(g: &'g Graph<'g>, blocks: &[TransformerBlock], mut x: Var<'g>) -> Result<Var<'g>> {
    for b in blocks {
        x = b.forward(g, x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, graph_fn, GradCheckConfig};
    use rand::SeedableRng;

    #[test]
    fn attention_weights_are_row_stochastic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = Attention::new(&mut Init::new(&mut store, &mut rng, 0.3), 8, 2).unwrap();
        let x = trunc_normal(&[2, 5, 8], 1.0, &mut rng);
        let c = trunc_normal(&[2, 3, 8], 1.0, &mut rng);
        let g = Graph::new(&store);
        let (y, w) = attn
            .forward_with_weights(&g, g.constant(x), g.constant(c))
            .unwrap();
        assert_eq!(y.shape(), vec![2, 5, 8]);
        assert_eq!(w.shape(), vec![2, 2, 5, 3]);
        for row in w.value().data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transformer_block_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = TransformerBlock::new(&mut Init::new(&mut store, &mut rng, 0.3), 8, 2, 16, 1e-6).unwrap();
        let x = trunc_normal(&[2, 4, 8], 1.0, &mut rng);
        let probe = trunc_normal(&[2, 4, 8], 1.0, &mut rng);
        let build = graph_fn(|g| {
            let y = block.forward(g, g.constant(x.clone()))?;
            Ok(y.mul(g.constant(probe.clone()))?.sum())
        });
        let r = check_gradients(build, &store, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
    }
}
