//! Qualitative outputs: skeleton overlays, token masks and sampling
//! locations of the deformable branch.

use crate::data::skeleton::{EDGES, JOINT_COUNT};
use crate::data::{PoseAnnotation, Sample};
use crate::error::Result;
use crate::graph::Graph;
use crate::image::{Image, RgbImage};
use crate::model::Vremd;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const RED: [f64; 3] = [1.0, 0.15, 0.1];
pub const GREEN: [f64; 3] = [0.1, 0.9, 0.2];
pub const YELLOW: [f64; 3] = [1.0, 0.9, 0.1];
pub const CYAN: [f64; 3] = [0.1, 0.8, 1.0];

/// Plain-tensor intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct Inspection {
    /// `[J, h, w]`
    pub heatmaps: Tensor,
    /// Human mask per frame, `[3, N]`.
    pub human_mask: Option<Tensor>,
    /// Keypoint mask per frame, `[3, N]`.
    pub keypoint_mask: Option<Tensor>,
    /// Sampling locations of the first motion block per stream, each
    /// `[N * S, 2]` in grid cells.
    pub sample_locations: Vec<Tensor>,
    pub samples_per_query: usize,
}

pub fn inspect(model: &Vremd, store: &ParamStore, sample: &Sample) -> Result<Inspection> {
    let g = Graph::new(store);
    let out = model.forward(&g, &sample.frames)?;
    let n = model.cfg.tokens();
    let (human_mask, keypoint_mask) = match &out.hkme {
        Some(h) => (
            Some(h.masks.human.value().reshape(&[3, n])?),
            Some(h.masks.keypoint.value().reshape(&[3, n])?),
        ),
        None => (None, None),
    };
    let mut sample_locations = Vec::new();
    if let Some(b) = &out.bmd {
        let per_stream = b.offsets.len() / b.streams.len().max(1);
        for s in 0..b.streams.len() {
            if let Some(f) = b.offsets.get(s * per_stream) {
                sample_locations.push(f.locations.value().as_ref().clone());
            }
        }
    }
    let samples_per_query = sample_locations.first().map_or(0, |t| t.shape()[0] / n);
    Ok(Inspection {
        heatmaps: out.heatmaps.value().as_ref().clone(),
        human_mask,
        keypoint_mask,
        sample_locations,
        samples_per_query,
    })
}

/// Draws a skeleton (bones when the joint count is the standard one).
pub fn draw_pose(img: &mut RgbImage, pose: &PoseAnnotation, scale: f64, color: [f64; 3]) {
    let at = |j: usize| (pose.joints[j].0 * scale, pose.joints[j].1 * scale);
    if pose.joints.len() == JOINT_COUNT {
        for &(a, b) in &EDGES {
            if pose.visible[a] && pose.visible[b] {
                img.segment(at(a), at(b), color);
            }
        }
    }
    for j in 0..pose.joints.len() {
        if pose.visible[j] {
            let (x, y) = at(j);
            img.dot(x, y, 1 + (scale as isize) / 3, color);
        }
    }
}

/// The frame enlarged by `scale` with the prediction in red and, when
/// given, the ground truth in green.
pub fn pose_overlay(frame: &Image, pred: &PoseAnnotation, gt: Option<&PoseAnnotation>, scale: usize) -> RgbImage {
    let mut img = frame.upscale(scale).to_rgb();
    if let Some(gt) = gt {
        draw_pose(&mut img, gt, scale as f64, GREEN);
    }
    draw_pose(&mut img, pred, scale as f64, RED);
    img
}

/// A per-token value map on the `grid`, min-max normalised and enlarged.
pub fn token_map(values: &[f64], grid: (usize, usize), scale: usize) -> Image {
    let (h, w) = grid;
    Image::from_fn(h, w, |y, x| values[y * w + x]).normalized().upscale(scale)
}

/// Heatmap of joint `j` of `[J, h, w]`, clamped to `[0, 1]` and enlarged.
pub fn joint_heatmap(heatmaps: &Tensor, j: usize, scale: usize) -> Image {
    let s = heatmaps.shape();
    let (h, w) = (s[1], s[2]);
    let d = &heatmaps.data()[j * h * w..(j + 1) * h * w];
    Image::from_fn(h, w, |y, x| d[y * w + x].clamp(0.0, 1.0)).upscale(scale)
}

/// Pixel-wise maximum over joints of `[J, h, w]` heatmaps, enlarged.
pub fn heatmap_montage(heatmaps: &Tensor, scale: usize) -> Image {
    let s = heatmaps.shape();
    let (j, h, w) = (s[0], s[1], s[2]);
    let d = heatmaps.data();
    Image::from_fn(h, w, |y, x| {
        (0..j).map(|k| d[(k * h + y) * w + x]).fold(0.0, f64::max).clamp(0.0, 1.0)
    })
    .upscale(scale)
}

/// Lines from every query cell centre to its sampling locations, over the
/// crop enlarged by `scale`. Grid cell `(i, j)` is drawn at the centre of
/// its `patch x patch` pixel block.
pub fn sampling_overlay(
    crop: &Image,
    locations: &Tensor,
    samples: usize,
    grid: (usize, usize),
    patch: usize,
    scale: usize,
    every: usize,
) -> RgbImage {
    let mut img = crop.upscale(scale).to_rgb();
    let px = |c: f64| (c * patch as f64 + (patch as f64 - 1.0) / 2.0) * scale as f64;
    let (_, w) = grid;
    let loc = locations.data();
    for q in (0..grid.0 * grid.1).step_by(every.max(1)) {
        let (qy, qx) = ((q / w) as f64, (q % w) as f64);
        let from = (px(qx), px(qy));
        for s in 0..samples {
            let k = (q * samples + s) * 2;
            let to = (px(loc[k]), px(loc[k + 1]));
            img.segment(from, to, YELLOW);
            img.dot(to.0, to.1, 1, CYAN);
        }
        img.dot(from.0, from.1, 1, RED);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{generate_windows, prepare, SceneOptions};

    #[test]
    fn inspection_shapes() {
        let cfg = ModelConfig::default();
        let (m, store) = Vremd::new(cfg.clone(), 0).unwrap();
        let w = &generate_windows(1, 0, &SceneOptions::default()).unwrap()[0];
        let s = prepare(w, &cfg, 1.0, None).unwrap();
        let ins = inspect(&m, &store, &s).unwrap();
        assert_eq!(ins.human_mask.as_ref().unwrap().shape(), &[3, 48]);
        assert_eq!(ins.sample_locations.len(), 2);
        assert_eq!(ins.samples_per_query, 4);
        let img = sampling_overlay(&w.frames[1], &ins.sample_locations[0], 4, (8, 6), 8, 2, 5);
        assert_eq!((img.height, img.width), (192, 144));
        let km = token_map(ins.keypoint_mask.as_ref().unwrap().data(), (8, 6), 4);
        assert_eq!((km.height, km.width), (32, 24));
    }
}
