//! The assembled two-stream pose model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::bmd::{Bmd, BmdOutput};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::heads::{combine, TokenHead, UpsampleHead};
use crate::hkme::{Hkme, HkmeOutput};
use crate::nn::Init;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Vremd {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub hkme: Option<Hkme>,
    pub bmd: Option<Bmd>,
    /// Keypoint-token head (with the refinement stream).
    pub token_head: Option<TokenHead>,
    /// Key-frame visual head (without the refinement stream).
    pub visual_head: Option<UpsampleHead>,
    pub motion_head: Option<UpsampleHead>,
}

pub struct ForwardOutput<'g> {
    /// Backbone features `[3, N, D]`.
    pub features: Var<'g>,
    pub hkme: Option<HkmeOutput<'g>>,
    pub bmd: Option<BmdOutput<'g>>,
    /// Pose heatmaps from the key frame (`H_k`, or the visual head).
    pub pose: Var<'g>,
    /// Motion heatmaps `H_m`.
    pub motion: Option<Var<'g>>,
    /// Final heatmaps `[J, H, W]`.
    pub heatmaps: Var<'g>,
}

impl Vremd {
    /// Builds the model and registers its freshly initialised parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::build(cfg, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn build(cfg: ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(store, rng, cfg.init_std);
        let ab = cfg.ablation;
        let d = cfg.dim;
        let hm = cfg.heatmap_size();
        let backbone = Backbone::new(&mut init.scoped("backbone"), &cfg)?;
        let (hkme, token_head, visual_head) = if ab.hkme {
            (
                Some(Hkme::new(&mut init.scoped("hkme"), &cfg)?),
                Some(TokenHead::new(&mut init.scoped("heads.token"), d, cfg.mlp_hidden(), hm, cfg.ln_eps)?),
                None,
            )
        } else {
            let head = UpsampleHead::new(
                &mut init.scoped("heads.visual"),
                d,
                d,
                cfg.joints,
                cfg.grid(),
                cfg.upsample_stages(),
            )?;
            (None, None, Some(head))
        };
        let (bmd, motion_head) = if ab.bmd {
            let head = UpsampleHead::new(
                &mut init.scoped("heads.motion"),
                2 * d,
                d,
                cfg.joints,
                cfg.grid(),
                cfg.upsample_stages(),
            )?;
            (Some(Bmd::new(&mut init.scoped("bmd"), &cfg)?), Some(head))
        } else {
            (None, None)
        };
        Ok(Self {
            cfg,
            backbone,
            hkme,
            bmd,
            token_head,
            visual_head,
            motion_head,
        })
    }

    /// `frames: [3, C, H, W]` (t−1, t, t+1) -> heatmaps and intermediates.
    pub fn forward<'g>(&self, g: &'g Graph<'g>, frames: &Tensor) -> Result<ForwardOutput<'g>> {
        let s = frames.shape();
        if s.len() != 4 || s[0] != 3 {
            return Err(Error::invalid("forward", format!("expected [3, C, H, W] frames, got {s:?}")));
        }
        let features = self.backbone.encode(g, frames)?;
        let (n, d) = (self.cfg.tokens(), self.cfg.dim);
        let key = features.narrow(0, 1, 1)?.reshape(&[n, d])?;

        let (hkme, pose, constraint) = match (&self.hkme, &self.token_head, &self.visual_head) {
            (Some(m), Some(head), _) => {
                let out = m.forward(g, features)?;
                let pose = head.forward(g, out.key_tokens)?;
                let constraint = out.enhanced;
                (Some(out), pose, constraint)
            }
            (None, _, Some(head)) => (None, head.forward(g, key)?, key),
            _ => unreachable!("model built with exactly one pose head"),
        };

        let (bmd, motion, heatmaps) = match (&self.bmd, &self.motion_head) {
            (Some(b), Some(head)) => {
                let out = b.forward(g, features, constraint)?;
                let agg = Var::concat(&[out.motion, out.motion.mul(key)?], 1)?;
                let hm = head.forward(g, agg)?;
                let ht = combine(pose, hm)?;
                (Some(out), Some(hm), ht)
            }
            _ => (None, None, pose),
        };
        Ok(ForwardOutput {
            features,
            hkme,
            bmd,
            pose,
            motion,
            heatmaps,
        })
    }

    /// Heatmaps only, evaluated without gradient bookkeeping.
    pub fn predict(&self, store: &ParamStore, frames: &Tensor) -> Result<Tensor> {
        let g = Graph::new(store);
        let out = self.forward(&g, frames)?;
        Ok(out.heatmaps.value().as_ref().clone())
    }
}
