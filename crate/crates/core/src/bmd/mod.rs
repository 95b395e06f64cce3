//! Motion stream: forward/backward feature residuals refined by dual-branch
//! blocks (deformable sampling + cross attention) and fused into a single
//! motion representation.

mod dca;

pub use dca::{reference_points, Dca, DeformBranch, DeformableAttention, DeformableConv, OffsetField};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Attention, Init, LayerNorm, Linear, Mlp};

/// `feats: [3, N, D]` -> (`F_{t+1} − F_t`, `F_{t−1} − F_t`), each `[N, D]`.
pub fn motion_residuals<'g>(feats: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
    let s = feats.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid("motion_residuals", format!("expected [3, N, D], got {s:?}")));
    }
    let (n, d) = (s[1], s[2]);
    let frame = |i| feats.narrow(0, i, 1)?.reshape(&[n, d]);
    let (prev, key, next) = (frame(0)?, frame(1)?, frame(2)?);
    Ok((next.sub(key)?, prev.sub(key)?))
}

/// Dual-branch motion block: `LN(m + MLP(deform(m) ⊕ cross(m)))`.
#[derive(Clone, Debug)]
pub struct AdcBlock {
    pub deform: DeformBranch,
    pub cross: Attention,
    pub mlp: Mlp,
    pub norm: LayerNorm,
}

impl AdcBlock {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            deform: DeformBranch::new(init, cfg)?,
            cross: Attention::new(&mut init.scoped("cross"), d, cfg.heads)?,
            mlp: Mlp::new(&mut init.scoped("mlp"), 2 * d, d, d)?,
            norm: LayerNorm::new(&mut init.scoped("norm"), d, cfg.ln_eps)?,
        })
    }

    /// Returns the block output and the two branch outputs.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        m: Var<'g>,
        constraint: Var<'g>,
    ) -> Result<AdcOutput<'g>> {
        let s = m.shape();
        let (n, d) = (s[0], s[1]);
        let (deform, offsets) = self.deform.forward(g, m, constraint)?;
        let cross = self
            .cross
            .forward(g, constraint.reshape(&[1, n, d])?, m.reshape(&[1, n, d])?)?
            .reshape(&[n, d])?;
        let h = self.mlp.forward(g, Var::concat(&[deform, cross], 1)?)?;
        Ok(AdcOutput {
            out: self.norm.forward(g, m.add(h)?)?,
            deform,
            cross,
            offsets,
        })
    }
}

pub struct AdcOutput<'g> {
    pub out: Var<'g>,
    pub deform: Var<'g>,
    pub cross: Var<'g>,
    pub offsets: OffsetField<'g>,
}

pub struct BmdOutput<'g> {
    /// Fused motion representation `[N, D]`.
    pub motion: Var<'g>,
    pub forward_residual: Var<'g>,
    pub backward_residual: Var<'g>,
    /// Pre-fusion stream outputs; a single stream when directions are merged.
    pub streams: Vec<Var<'g>>,
    /// Offset fields of every block, stream-major.
    pub offsets: Vec<OffsetField<'g>>,
}

#[derive(Clone, Debug)]
pub struct Bmd {
    pub blocks: Vec<AdcBlock>,
    /// `2D -> D` fusion of the two directions (bidirectional mode).
    pub fuse: Option<Linear>,
    /// `2D -> D` merge of both residuals into one stream (unidirectional mode).
    pub merge: Option<Linear>,
}

impl Bmd {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        let blocks = (0..cfg.adc_blocks)
            .map(|i| AdcBlock::new(&mut init.scoped(&format!("blocks.{i}")), cfg))
            .collect::<Result<_>>()?;
        let (fuse, merge) = if cfg.ablation.bidirectional {
            (Some(Linear::new(&mut init.scoped("fuse"), 2 * d, d, true)?), None)
        } else {
            (None, Some(Linear::new(&mut init.scoped("merge"), 2 * d, d, true)?))
        };
        Ok(Self { blocks, fuse, merge })
    }

    /// Runs one stream through every block.
    pub fn stream<'g>(
        &self,
        g: &'g Graph<'g>,
        mut m: Var<'g>,
        constraint: Var<'g>,
        offsets: &mut Vec<OffsetField<'g>>,
    ) -> Result<Var<'g>> {
        for b in &self.blocks {
            let o = b.forward(g, m, constraint)?;
            m = o.out;
            offsets.push(o.offsets);
        }
        Ok(m)
    }

    pub fn fuse<'g>(&self, g: &'g Graph<'g>, forward: Var<'g>, backward: Var<'g>) -> Result<Var<'g>> {
        let fuse = self
            .fuse
            .as_ref()
            .ok_or_else(|| Error::Config("fusion layer absent in unidirectional mode".into()))?;
        fuse.forward(g, Var::concat(&[forward, backward], 1)?)
    }

    /// `feats: [3, N, D]`, `constraint: [N, D]` -> motion `[N, D]`.
    pub fn forward<'g>(&self, g: &'g Graph<'g>, feats: Var<'g>, constraint: Var<'g>) -> Result<BmdOutput<'g>> {
        let _s = g.scope("bmd");
        let (mf, mb) = motion_residuals(feats)?;
        let mut offsets = Vec::new();
        let (motion, streams) = match &self.merge {
            None => {
                let f = self.stream(g, mf, constraint, &mut offsets)?;
                let b = self.stream(g, mb, constraint, &mut offsets)?;
                (self.fuse(g, f, b)?, vec![f, b])
            }
            Some(merge) => {
                let joint = merge.forward(g, Var::concat(&[mf, mb], 1)?)?;
                let m = self.stream(g, joint, constraint, &mut offsets)?;
                (m, vec![m])
            }
        };
        Ok(BmdOutput {
            motion,
            forward_residual: mf,
            backward_residual: mb,
            streams,
            offsets,
        })
    }
}
