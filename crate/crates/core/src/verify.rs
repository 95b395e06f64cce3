//! Whole-model gradient verification against central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, graph_fn, GradCheckConfig, GradCheckReport};
use crate::graph::Graph;
use crate::heads::{heatmap_loss, LossReduction};
use crate::model::Vremd;
use crate::params::{trunc_normal, uniform, ParamStore};
use crate::tensor::Tensor;

/// Minimum distance of any sampling coordinate from a bilinear kink (an
/// integer grid line or the clamping border) for a finite-difference
/// probe to stay on one linear piece.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScale {
    /// The tiny preset with every component enabled.
    Tiny,
    /// A model with no parameters (vacuous pass).
    Zero,
}

pub struct ModelCheck {
    pub seed: u64,
    pub params: usize,
    /// Offset-net redraws needed to keep samples away from kinks.
    pub redraws: usize,
    pub report: GradCheckReport,
}

impl ModelCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Distance of `v` from the nearest kink of a border-clamped bilinear axis
/// with `ext` nodes; clamped coordinates are away from kinks by their
/// distance to the border.
fn kink_distance(v: f64, ext: usize) -> f64 {
    let hi = (ext - 1) as f64;
    if v <= 0.0 {
        return -v;
    }
    if v >= hi {
        return v - hi;
    }
    let f = v - v.floor();
    f.min(1.0 - f)
}

/// Smallest kink distance over every sampling location of the forward pass.
pub fn sampling_margin(model: &Vremd, store: &ParamStore, frames: &Tensor) -> Result<f64> {
    let g = Graph::new(store);
    let out = model.forward(&g, frames)?;
    let (h, w) = model.cfg.grid();
    let mut margin = f64::INFINITY;
    if let Some(b) = &out.bmd {
        for field in &b.offsets {
            for p in field.locations.value().data().chunks_exact(2) {
                margin = margin.min(kink_distance(p[0], w)).min(kink_distance(p[1], h));
            }
        }
    }
    Ok(margin)
}

/// Draws offset-generating weights so the deformable branch samples off
/// the reference nodes, as a trained model would.
fn randomise_offsets(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    let names: Vec<String> = store
        .names()
        .iter()
        .filter(|n| n.contains(".theta.") || n.contains(".offset_conv."))
        .map(|s| s.to_string())
        .collect();
    for n in names {
        let shape = store.value(store.id(&n).expect("listed name")).shape().to_vec();
        store.set(&n, trunc_normal(&shape, 0.5, rng))?;
    }
    Ok(())
}

/// Gradient check of the heatmap loss of a freshly initialised model.
pub fn check_model(cfg: &ModelConfig, seed: u64, check: &GradCheckConfig) -> Result<ModelCheck> {
    let (model, mut store) = Vremd::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let frames = uniform(&[3, cfg.channels, cfg.image_height, cfg.image_width], 0.0, 1.0, &mut rng);
    let (hh, hw) = cfg.heatmap_size();
    let target = uniform(&[cfg.joints, hh, hw], 0.0, 1.0, &mut rng);
    let visible: Vec<bool> = (0..cfg.joints).map(|j| j % 4 != 3).collect();

    let mut redraws = 0;
    if cfg.ablation.bmd {
        loop {
            randomise_offsets(&mut store, &mut rng)?;
            if sampling_margin(&model, &store, &frames)? >= KINK_MARGIN {
                break;
            }
            redraws += 1;
            if redraws > 1000 {
                return Err(Error::Config("could not place samples away from bilinear kinks".into()));
            }
        }
    }

    let build = graph_fn(|g| {
        let out = model.forward(g, &frames)?;
        heatmap_loss(g, out.heatmaps, &target, &visible, LossReduction::Mean)
    });
    let report = check_gradients(build, &store, check)?;
    Ok(ModelCheck {
        seed,
        params: store.numel(),
        redraws,
        report,
    })
}

/// Runs the check for `scale` over `seeds`.
pub fn gradient_suite(scale: GradScale, seeds: &[u64], check: &GradCheckConfig) -> Result<Vec<ModelCheck>> {
    match scale {
        GradScale::Zero => {
            let store = ParamStore::new();
            let build = graph_fn(|g| Ok(g.constant(Tensor::scalar(0.0))));
            Ok(vec![ModelCheck {
                seed: 0,
                params: 0,
                redraws: 0,
                report: check_gradients(build, &store, check)?,
            }])
        }
        GradScale::Tiny => seeds
            .iter()
            .map(|&s| check_model(&ModelConfig::tiny(), s, check))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_distance_cases() {
        assert!((kink_distance(1.25, 4) - 0.25).abs() < 1e-15);
        assert!((kink_distance(2.9, 4) - 0.1).abs() < 1e-12);
        assert_eq!(kink_distance(-0.5, 4), 0.5);
        assert_eq!(kink_distance(3.0, 4), 0.0);
        assert!((kink_distance(3.5, 4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_scale_is_vacuous() {
        let r = gradient_suite(GradScale::Zero, &[0], &GradCheckConfig::default()).unwrap();
        assert!(r[0].passed());
        assert_eq!(r[0].report.coords_checked(), 0);
    }
}
