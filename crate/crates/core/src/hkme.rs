//! Coarse-to-fine token refinement: a human mask gates tokens by their
//! similarity to a learned human token, a keypoint mask reweights them by
//! how much keypoint attention they receive, and a factorised
//! spatial/temporal stage aggregates the three frames into one grid.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{block_stack, run_blocks, Init, Mlp, TransformerBlock};
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Masks exposed for inspection.
pub struct MaskSet<'g> {
    /// `[3, N, 1]`
    pub human: Var<'g>,
    /// `[3J, 3N]`, rows softmax-normalised over tokens.
    pub confidence: Var<'g>,
    /// `[3N, 1]`
    pub keypoint: Var<'g>,
}

pub struct HkmeOutput<'g> {
    /// Enhanced feature `[N, D]`.
    pub enhanced: Var<'g>,
    /// Key-frame keypoint tokens `[J, D]`.
    pub key_tokens: Var<'g>,
    pub masks: MaskSet<'g>,
    /// Last temporal block's attention weights `[N, H, 3, 3]`, if any.
    pub temporal_attention: Option<Var<'g>>,
}

/// `fbar: [T, N, D]`, `token: [T, 1, D]` -> `fbar ⊗ tokenᵀ: [T, N, 1]`.
pub fn human_mask<'g>(fbar: Var<'g>, token: Var<'g>) -> Result<Var<'g>> {
    fbar.matmul(token.t()?)
}

/// `F̄ ⊙ mask`, broadcasting the per-token mask over features.
pub fn apply_mask<'g>(feats: Var<'g>, mask: Var<'g>) -> Result<Var<'g>> {
    feats.mul(mask)
}

/// Confidence map `softmax_tokens(T̂ ⊗ F̂ᵀ)` `[K, M]` and its column sums
/// `[M, 1]` for `tokens: [K, D]`, `feats: [M, D]`.
pub fn keypoint_mask<'g>(tokens: Var<'g>, feats: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
    let map = tokens.matmul(feats.t()?)?.softmax(1)?;
    let m = feats.shape()[0];
    let mask = map.sum_axis(0, false)?.reshape(&[m, 1])?;
    Ok((map, mask))
}

#[derive(Clone, Debug)]
pub struct Hkme {
    pub human_token: ParamId,
    pub keypoint_tokens: ParamId,
    pub frame_embed: ParamId,
    pub human_blocks: Vec<TransformerBlock>,
    pub keypoint_blocks: Vec<TransformerBlock>,
    pub spatial_blocks: Vec<TransformerBlock>,
    pub temporal_blocks: Vec<TransformerBlock>,
    pub reduce: Mlp,
    pub joints: usize,
    pub dim: usize,
    pub use_human_mask: bool,
    pub use_keypoint_mask: bool,
    pub sigmoid_human_mask: bool,
}

impl Hkme {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let (d, h, hid, eps) = (cfg.dim, cfg.heads, cfg.mlp_hidden(), cfg.ln_eps);
        Ok(Self {
            human_token: init.normal_with_std("human_token", &[1, d], 0.02)?,
            keypoint_tokens: init.normal_with_std("keypoint_tokens", &[cfg.joints, d], 0.02)?,
            frame_embed: init.normal("frame_embed", &[3, 1, d])?,
            human_blocks: block_stack(init, "human_blocks", cfg.human_blocks, d, h, hid, eps)?,
            keypoint_blocks: block_stack(init, "keypoint_blocks", cfg.keypoint_blocks, d, h, hid, eps)?,
            spatial_blocks: block_stack(init, "spatial_blocks", cfg.spatial_blocks, d, h, hid, eps)?,
            temporal_blocks: block_stack(init, "temporal_blocks", cfg.temporal_blocks, d, h, hid, eps)?,
            reduce: Mlp::new(&mut init.scoped("reduce"), 3 * d, d, d)?,
            joints: cfg.joints,
            dim: d,
            use_human_mask: cfg.ablation.human_mask,
            use_keypoint_mask: cfg.ablation.keypoint_mask,
            sigmoid_human_mask: cfg.human_mask_sigmoid,
        })
    }

    /// `feats: [3, N, D]` -> (`F_c: [3, N, D]`, `Mask_h: [3, N, 1]`, `F̄`).
    pub fn human_mask_select<'g>(
        &self,
        g: &'g Graph<'g>,
        feats: Var<'g>,
    ) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let s = feats.shape();
        let (t, n, d) = (s[0], s[1], s[2]);
        let token = g.param(self.human_token).reshape(&[1, 1, d])?.expand(&[t, 1, d])?;
        let x = Var::concat(&[token, feats], 1)?;
        let x = run_blocks(g, &self.human_blocks, x)?;
        let th = x.narrow(1, 0, 1)?;
        let fbar = x.narrow(1, 1, n)?;
        let mask = if self.use_human_mask {
            let m = human_mask(fbar, th)?;
            if self.sigmoid_human_mask {
                m.sigmoid()
            } else {
                m
            }
        } else {
            g.constant(Tensor::ones(&[t, n, 1]))
        };
        Ok((apply_mask(fbar, mask)?, mask, fbar))
    }

    /// `F_c: [3, N, D]` -> (`F_f: [3N, D]`, `T̂_k: [3J, D]`, map, `Mask_k`).
    pub fn keypoint_mask_refine<'g>(
        &self,
        g: &'g Graph<'g>,
        fc: Var<'g>,
    ) -> Result<(Var<'g>, Var<'g>, Var<'g>, Var<'g>)> {
        let s = fc.shape();
        let (t, n, d) = (s[0], s[1], s[2]);
        let j = self.joints;
        let frame = g.param(self.frame_embed);
        let fc = fc.add(frame)?.reshape(&[1, t * n, d])?;
        let tk = g
            .param(self.keypoint_tokens)
            .reshape(&[1, j, d])?
            .expand(&[t, j, d])?
            .add(frame)?
            .reshape(&[1, t * j, d])?;
        let x = Var::concat(&[fc, tk], 1)?;
        let x = run_blocks(g, &self.keypoint_blocks, x)?;
        let fhat = x.narrow(1, 0, t * n)?.reshape(&[t * n, d])?;
        let that = x.narrow(1, t * n, t * j)?.reshape(&[t * j, d])?;
        let (map, mut mask) = keypoint_mask(that, fhat)?;
        if !self.use_keypoint_mask {
            mask = g.constant(Tensor::ones(&[t * n, 1]));
        }
        Ok((apply_mask(fhat, mask)?, that, map, mask))
    }

    /// `F_f: [3N, D]` -> (`F: [N, D]`, last temporal attention weights).
    pub fn spatiotemporal_aggregate<'g>(
        &self,
        g: &'g Graph<'g>,
        ff: Var<'g>,
        frames: usize,
    ) -> Result<(Var<'g>, Option<Var<'g>>)> {
        let s = ff.shape();
        let (tn, d) = (s[0], s[1]);
        if tn % frames != 0 {
            return Err(Error::invalid("spatiotemporal_aggregate", format!("{tn} tokens over {frames} frames")));
        }
        let n = tn / frames;
        let x = run_blocks(g, &self.spatial_blocks, ff.reshape(&[frames, n, d])?)?;
        let mut x = x.permute(&[1, 0, 2])?;
        let mut weights = None;
        for b in &self.temporal_blocks {
            let (y, w) = b.forward_with_weights(g, x)?;
            x = y;
            weights = Some(w);
        }
        let merged = x.reshape(&[n, frames * d])?;
        Ok((self.reduce.forward(g, merged)?, weights))
    }

    /// `feats: [3, N, D]` -> enhanced feature, key-frame tokens and masks.
    pub fn forward<'g>(&self, g: &'g Graph<'g>, feats: Var<'g>) -> Result<HkmeOutput<'g>> {
        let _s = g.scope("hkme");
        let t = feats.shape()[0];
        let (fc, human, _) = self.human_mask_select(g, feats)?;
        let (ff, tokens, confidence, keypoint) = self.keypoint_mask_refine(g, fc)?;
        let (enhanced, temporal_attention) = self.spatiotemporal_aggregate(g, ff, t)?;
        let key_tokens = tokens.narrow(0, (t / 2) * self.joints, self.joints)?;
        Ok(HkmeOutput {
            enhanced,
            key_tokens,
            masks: MaskSet {
                human,
                confidence,
                keypoint,
            },
            temporal_attention,
        })
    }
}
