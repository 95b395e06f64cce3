//! Synthetic moving-skeleton windows and the top-down preprocessing that
//! turns them into model inputs and heatmap targets.

pub mod augment;
pub mod crop;
pub mod heatmap;
pub mod io;
pub mod posetrack;
pub mod skeleton;
pub mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

pub use augment::{Affine, AugmentConfig, AugmentParams};
pub use crop::{BBox, CropTransform};
pub use heatmap::render_gt_heatmaps;
pub use synth::{synth_sequence, SceneOptions, SyntheticSceneConfig};

/// One person's joints in one frame, in image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseAnnotation {
    pub joints: Vec<(f64, f64)>,
    pub visible: Vec<bool>,
    pub person_id: u32,
    pub frame_index: i64,
}

impl PoseAnnotation {
    pub fn visible_joints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.joints.iter().zip(&self.visible).filter(|(_, &v)| v).map(|(&p, _)| p)
    }
}

/// Three consecutive frames with the middle one as the key frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub frames: Vec<Image>,
    pub annotations: Vec<PoseAnnotation>,
}

impl Window {
    pub fn key(&self) -> &PoseAnnotation {
        &self.annotations[1]
    }

    /// Renders the window centred on `key_t` of a seeded random scene.
    pub fn synth(seed: u64, key_t: i64, opts: &SceneOptions) -> Result<Self> {
        let cfg = SyntheticSceneConfig::random(seed, key_t, opts);
        let (frames, annotations) = synth_sequence(&cfg, key_t)?;
        Ok(Self { frames, annotations })
    }
}

/// Seed of window `index` of a set generated from `seed`.
pub fn window_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.random()
}

/// `count` independent windows; each depends only on `(seed, index)`, so
/// the set is identical however the work is scheduled.
pub fn generate_windows(count: usize, seed: u64, opts: &SceneOptions) -> Result<Vec<Window>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = window_seed(seed, i);
            let key_t = 1 + (s % 500) as i64;
            Window::synth(s, key_t, opts)
        })
        .collect()
}

/// A preprocessed window ready for the model.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[3, 1, H, W]`.
    pub frames: Tensor,
    /// `[J, H/stride, W/stride]`.
    pub target: Tensor,
    pub visible: Vec<bool>,
    pub crop: CropTransform,
    /// Augmentation applied after cropping (identity at evaluation).
    pub affine: Affine,
    pub augment: AugmentParams,
    /// Key-frame annotation in original image coordinates.
    pub gt: PoseAnnotation,
}

impl Sample {
    /// Maps a point in heatmap pixels back to original image pixels.
    pub fn heatmap_to_image(&self, p: (f64, f64), stride: usize) -> (f64, f64) {
        let s = stride as f64;
        let c = (p.0 * s, p.1 * s);
        let c = if self.affine.is_identity() { c } else { self.affine.inverse().apply(c) };
        self.crop.to_image(c)
    }
}

/// Crop region for a window: the visible key-frame joints, widened to the
/// model aspect ratio; the whole frame when nothing is visible.
pub fn person_box(window: &Window, aspect: f64) -> BBox {
    let f = &window.frames[1];
    match BBox::enclosing(window.key().visible_joints()) {
        Some(b) if b.w > 0.0 || b.h > 0.0 => b.fit_aspect(aspect),
        _ => BBox::new(0.0, 0.0, f.width as f64, f.height as f64),
    }
}

/// Crops all three frames with the key-frame box, optionally augments them,
/// and renders the key-frame heatmap target.
pub fn prepare(window: &Window, cfg: &ModelConfig, sigma: f64, augment: Option<&AugmentParams>) -> Result<Sample> {
    if window.frames.len() != 3 || window.annotations.len() != 3 {
        return Err(Error::Config("a window needs exactly three frames".into()));
    }
    if window.key().joints.len() != cfg.joints {
        return Err(Error::Config(format!(
            "annotations have {} joints but the model predicts {}",
            window.key().joints.len(),
            cfg.joints
        )));
    }
    if cfg.channels != 1 {
        return Err(Error::Config("synthetic frames are single-channel".into()));
    }
    let (h, w) = (cfg.image_height, cfg.image_width);
    let region = crop::crop_region(&window.frames[1], person_box(window, w as f64 / h as f64))?;
    let mut crops = Vec::with_capacity(3);
    let mut anns = Vec::with_capacity(3);
    let mut transform = CropTransform::identity();
    for (f, a) in window.frames.iter().zip(&window.annotations) {
        let (img, t) = crop::crop_to(f, region, (h, w));
        transform = t;
        crops.push(img);
        anns.push(PoseAnnotation {
            joints: a.joints.iter().map(|&p| t.to_crop(p)).collect(),
            ..a.clone()
        });
    }
    let params = augment.copied().unwrap_or_else(AugmentParams::identity);
    let (crops, anns, affine) = augment::augment(&crops, &anns, &params, 1);

    let key = &anns[1];
    let inside = |(x, y): (f64, f64)| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;
    let visible: Vec<bool> = key.joints.iter().zip(&key.visible).map(|(&p, &v)| v && inside(p)).collect();
    let s = cfg.heatmap_stride as f64;
    let hm: Vec<(f64, f64)> = key.joints.iter().map(|&(x, y)| (x / s, y / s)).collect();
    let target = render_gt_heatmaps(&hm, &visible, cfg.heatmap_size(), sigma);

    let mut data = Vec::with_capacity(3 * h * w);
    for c in &crops {
        data.extend_from_slice(&c.data);
    }
    Ok(Sample {
        frames: Tensor::new(vec![3, 1, h, w], data)?,
        target,
        visible,
        crop: transform,
        affine,
        augment: params,
        gt: window.key().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_deterministic_and_independent_of_count() {
        let opts = SceneOptions {
            distractors: 1,
            background_motion: true,
            ..SceneOptions::default()
        };
        let a = generate_windows(3, 11, &opts).unwrap();
        let b = generate_windows(5, 11, &opts).unwrap();
        assert_eq!(a[..], b[..3]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn prepared_target_peaks_at_the_key_joints() {
        let cfg = ModelConfig::default();
        let w = &generate_windows(1, 2, &SceneOptions::default()).unwrap()[0];
        let s = prepare(w, &cfg, 1.0, None).unwrap();
        assert_eq!(s.frames.shape(), &[3, 1, 64, 48]);
        assert_eq!(s.target.shape(), &[15, 16, 12]);
        assert!(s.affine.is_identity());
        for j in 0..15 {
            if !s.visible[j] {
                continue;
            }
            let (hx, hy) = s.crop.to_crop(s.gt.joints[j]);
            let back = s.heatmap_to_image((hx / 4.0, hy / 4.0), 4);
            assert!((back.0 - s.gt.joints[j].0).abs() < 1e-9);
            assert!((back.1 - s.gt.joints[j].1).abs() < 1e-9);
        }
        assert!(s.visible.iter().filter(|&&v| v).count() >= 12);
    }

    #[test]
    fn augmented_mapping_inverts() {
        let cfg = ModelConfig::default();
        let w = &generate_windows(1, 4, &SceneOptions::default()).unwrap()[0];
        let params = AugmentParams {
            rotation_deg: 20.0,
            scale: 1.1,
            flip: false,
            half_body: None,
        };
        let s = prepare(w, &cfg, 1.0, Some(&params)).unwrap();
        let key = s.gt.joints[8];
        let crop = s.affine.apply(s.crop.to_crop(key));
        let back = s.heatmap_to_image((crop.0 / 4.0, crop.1 / 4.0), 4);
        assert!((back.0 - key.0).abs() < 1e-9 && (back.1 - key.1).abs() < 1e-9);
    }
}
