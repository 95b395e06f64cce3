//! Patch embedding plus a stack of transformer blocks applied to each of
//! the three frames with shared weights.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{block_stack, run_blocks, Init, Linear, TransformerBlock};
use crate::tensor::Tensor;

/// Splits `image: [C, H, W]` into non-overlapping `patch x patch` tiles,
/// returned as `[N, C*patch*patch]` with tiles in row-major grid order and
/// features ordered (channel, row, column).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::invalid("patchify", format!("expected [C, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    for (what, extent) in [("image height", h), ("image width", w)] {
        if extent % patch != 0 {
            return Err(Error::NotDivisible { what, extent, patch });
        }
    }
    let (gh, gw) = (h / patch, w / patch);
    let feat = c * patch * patch;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * feat);
    for gi in 0..gh {
        for gj in 0..gw {
            for ch in 0..c {
                for dy in 0..patch {
                    let row = (ch * h + gi * patch + dy) * w + gj * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, feat], out)
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub embed: Linear,
    pub pos: crate::params::ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub patch: usize,
    pub channels: usize,
    pub image_size: (usize, usize),
}

impl Backbone {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let feat = cfg.channels * cfg.patch * cfg.patch;
        Ok(Self {
            embed: Linear::new(&mut init.scoped("embed"), feat, cfg.dim, true)?,
            pos: init.normal("pos", &[cfg.tokens(), cfg.dim])?,
            blocks: block_stack(
                init,
                "blocks",
                cfg.backbone_blocks,
                cfg.dim,
                cfg.heads,
                cfg.mlp_hidden(),
                cfg.ln_eps,
            )?,
            patch: cfg.patch,
            channels: cfg.channels,
            image_size: (cfg.image_height, cfg.image_width),
        })
    }

    /// Token embedding of one or more frames, `frames: [T, C, H, W]` ->
    /// `[T, N, D]` (projection plus positional embedding, no blocks).
    pub fn patch_embed<'g>(&self, g: &'g Graph<'g>, frames: &Tensor) -> Result<Var<'g>> {
        let s = frames.shape();
        if s.len() != 4 {
            return Err(Error::invalid("patch_embed", format!("expected [T, C, H, W], got {s:?}")));
        }
        let expected = [self.channels, self.image_size.0, self.image_size.1];
        if s[1..] != expected {
            return Err(Error::shape("patch_embed", &s[1..], &expected));
        }
        let t = s[0];
        let per = s[1] * s[2] * s[3];
        let mut rows = Vec::new();
        let mut n = 0;
        for f in 0..t {
            let img = Tensor::new(s[1..].to_vec(), frames.data()[f * per..(f + 1) * per].to_vec())?;
            let p = patchify(&img, self.patch)?;
            n = p.shape()[0];
            rows.extend_from_slice(p.data());
        }
        let feat = rows.len() / (t * n);
        let patches = g.constant(Tensor::new(vec![t, n, feat], rows)?);
        self.embed.forward(g, patches)?.add(g.param(self.pos))
    }

    /// `frames: [T, C, H, W]` -> features `[T, N, D]`, every frame encoded
    /// independently by the same weights.
    pub fn encode<'g>(&self, g: &'g Graph<'g>, frames: &Tensor) -> Result<Var<'g>> {
        let _s = g.scope("backbone");
        let x = self.patch_embed(g, frames)?;
        run_blocks(g, &self.blocks, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{trunc_normal, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore, Backbone, ModelConfig) {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Backbone::new(&mut Init::new(&mut store, &mut rng, 0.02).scoped("backbone"), &cfg).unwrap();
        (store, b, cfg)
    }

    #[test]
    fn patchify_order() {
        let img = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        let err = patchify(&Tensor::zeros(&[1, 6, 5]), 2).unwrap_err().to_string();
        assert!(err.contains("image width") && err.contains('5'), "{err}");
    }

    #[test]
    fn token_count_and_shape() {
        let (store, b, cfg) = setup(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = trunc_normal(&[3, 1, 64, 48], 1.0, &mut rng);
        let g = Graph::new(&store);
        let f = b.encode(&g, &frames).unwrap();
        assert_eq!(f.shape(), vec![3, 48, cfg.dim]);
    }

    #[test]
    fn zero_image_gives_positional_embedding() {
        let (store, b, _) = setup(1);
        let g = Graph::new(&store);
        let tokens = b.patch_embed(&g, &Tensor::zeros(&[1, 1, 64, 48])).unwrap();
        let pos = store.value(b.pos);
        assert_eq!(tokens.value().data(), pos.data());
    }

    #[test]
    fn frames_are_encoded_independently() {
        let (store, b, _) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = trunc_normal(&[1, 64, 48], 1.0, &mut rng);
        let c = trunc_normal(&[1, 64, 48], 1.0, &mut rng);
        let stack = |fs: &[&Tensor]| {
            let data: Vec<f64> = fs.iter().flat_map(|t| t.data().to_vec()).collect();
            Tensor::new(vec![fs.len(), 1, 64, 48], data).unwrap()
        };
        let g = Graph::new(&store);
        let f = b.encode(&g, &stack(&[&a, &c, &a])).unwrap().value();
        let n = 48 * 32;
        assert_eq!(&f.data()[..n], &f.data()[2 * n..]);
        let swapped = b.encode(&g, &stack(&[&c, &a, &a])).unwrap().value();
        assert_eq!(&swapped.data()[..n], &f.data()[n..2 * n]);
        assert_eq!(&swapped.data()[n..2 * n], &f.data()[..n]);

        let mut poisoned = stack(&[&a, &c, &a]);
        poisoned.data_mut()[5] = f64::NAN;
        let p = b.encode(&g, &poisoned).unwrap().value();
        assert!(p.data()[..n].iter().any(|v| v.is_nan()));
        assert!(p.data()[n..].iter().all(|v| v.is_finite()));
    }
}
