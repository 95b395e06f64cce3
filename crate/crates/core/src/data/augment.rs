//! Training-time geometric augmentation shared across the three frames
//! of a window.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crop::BBox;
use super::skeleton::{flip_permutation, UPPER_BODY};
use super::PoseAnnotation;
use crate::image::Image;

/// Row-major 2x3 affine map `p' = [a b; c d]·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * p.0 + m[0][1] * p.1 + m[0][2],
            m[1][0] * p.0 + m[1][1] * p.1 + m[1][2],
        )
    }

    /// `self ∘ rhs` (apply `rhs` first).
    pub fn then_after(&self, rhs: &Affine) -> Affine {
        let (a, b) = (&self.m, &rhs.m);
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            m[r][0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            m[r][1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            m[r][2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        Affine { m }
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        Affine {
            m: [
                [a, b, -(a * m[0][2] + b * m[1][2])],
                [c, d, -(c * m[0][2] + d * m[1][2])],
            ],
        }
    }

    /// Rotation by `degrees` and isotropic `scale` about `center`.
    pub fn rotate_scale(degrees: f64, scale: f64, center: (f64, f64)) -> Affine {
        let (s, c) = degrees.to_radians().sin_cos();
        let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
        Affine {
            m: [
                [a, b, center.0 - (a * center.0 + b * center.1)],
                [cc, d, center.1 - (cc * center.0 + d * center.1)],
            ],
        }
    }

    /// Mirror about the vertical line through the middle of a `width`-pixel image.
    pub fn hflip(width: usize) -> Affine {
        Affine {
            m: [[-1.0, 0.0, (width - 1) as f64], [0.0, 1.0, 0.0]],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine::identity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfBody {
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub half_body_prob: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 45.0,
            scale_range: (0.65, 1.35),
            half_body_prob: 0.3,
            flip_prob: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub flip: bool,
    pub half_body: Option<HalfBody>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            flip: false,
            half_body: None,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Self {
        let r = cfg.max_rotation_deg;
        let rotation_deg = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let (lo, hi) = cfg.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));
        let half_body = rng.random_bool(cfg.half_body_prob.clamp(0.0, 1.0)).then(|| {
            if rng.random_bool(0.5) {
                HalfBody::Upper
            } else {
                HalfBody::Lower
            }
        });
        Self {
            rotation_deg,
            scale,
            flip,
            half_body,
        }
    }

    /// The crop-space affine these parameters describe for a key-frame
    /// annotation `key` in a crop of `size = (height, width)`.
    pub fn affine(&self, key: &PoseAnnotation, size: (usize, usize)) -> Affine {
        let (h, w) = size;
        let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut a = Affine::identity();
        if let Some(part) = self.half_body {
            if let Some(zoom) = half_body_zoom(key, part, size) {
                a = zoom;
            }
        }
        if self.rotation_deg != 0.0 || self.scale != 1.0 {
            a = Affine::rotate_scale(self.rotation_deg, self.scale, center).then_after(&a);
        }
        if self.flip {
            a = Affine::hflip(w).then_after(&a);
        }
        a
    }
}

/// Zoom that makes the chosen half of the visible joints fill the crop.
fn half_body_zoom(key: &PoseAnnotation, part: HalfBody, size: (usize, usize)) -> Option<Affine> {
    let upper = |j: usize| UPPER_BODY.contains(&j);
    let pts: Vec<(f64, f64)> = key
        .joints
        .iter()
        .zip(&key.visible)
        .enumerate()
        .filter(|(j, (_, &v))| v && (upper(*j) == (part == HalfBody::Upper)))
        .map(|(_, (&p, _))| p)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (h, w) = size;
    let b = BBox::enclosing(pts)?.fit_aspect(w as f64 / h as f64).expand(1.5);
    if b.w <= 1.0 {
        return None;
    }
    let s = w as f64 / b.w;
    let (cx, cy) = b.center();
    let (ox, oy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    Some(Affine {
        m: [[s, 0.0, ox - s * cx], [0.0, s, oy - s * cy]],
    })
}

/// Warps `img` by `a` (output pixel `p` reads input `a⁻¹(p)`), zero fill.
pub fn warp(img: &Image, a: &Affine) -> Image {
    if a.is_identity() {
        return img.clone();
    }
    let inv = a.inverse();
    Image::from_fn(img.height, img.width, |y, x| {
        let (sx, sy) = inv.apply((x as f64, y as f64));
        img.sample(sx, sy, 0.0)
    })
}

/// Maps an annotation through `a`; a flip also exchanges left/right joints.
pub fn transform_annotation(ann: &PoseAnnotation, a: &Affine, flip: bool) -> PoseAnnotation {
    let mut joints: Vec<(f64, f64)> = ann.joints.iter().map(|&p| a.apply(p)).collect();
    let mut visible = ann.visible.clone();
    if flip {
        let perm = flip_permutation(joints.len());
        joints = perm.iter().map(|&i| joints[i]).collect();
        visible = perm.iter().map(|&i| visible[i]).collect();
    }
    PoseAnnotation {
        joints,
        visible,
        ..ann.clone()
    }
}

/// Applies one shared augmentation to every frame and annotation.
pub fn augment(
    frames: &[Image],
    anns: &[PoseAnnotation],
    params: &AugmentParams,
    key: usize,
) -> (Vec<Image>, Vec<PoseAnnotation>, Affine) {
    let size = (frames[0].height, frames[0].width);
    let a = params.affine(&anns[key], size);
    let frames = frames.iter().map(|f| warp(f, &a)).collect();
    let anns = anns
        .iter()
        .map(|x| transform_annotation(x, &a, params.flip))
        .collect();
    (frames, anns, a)
}
