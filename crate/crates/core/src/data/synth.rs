//! Deterministic moving-skeleton scenes: a target person, optional
//! distractor persons, a drifting textured background, moving occluders
//! and optional blur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::{EDGES, JOINT_COUNT, TEMPLATE};
use super::PoseAnnotation;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMotion {
    /// Peak sinusoidal displacement in pixels, per axis.
    pub amplitude: (f64, f64),
    /// Angular frequency in radians per frame.
    pub omega: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonMotion {
    /// Pelvis position at frame 0.
    pub origin: (f64, f64),
    /// Pelvis velocity in pixels per frame.
    pub velocity: (f64, f64),
    /// Person height in pixels.
    pub scale: f64,
    pub joints: Vec<JointMotion>,
}

impl PersonMotion {
    pub fn still(origin: (f64, f64), scale: f64, joints: usize) -> Self {
        Self {
            origin,
            velocity: (0.0, 0.0),
            scale,
            joints: vec![
                JointMotion {
                    amplitude: (0.0, 0.0),
                    omega: 0.0,
                    phase: 0.0,
                };
                joints
            ],
        }
    }

    /// Joint positions at frame `t`.
    pub fn joints_at(&self, t: i64) -> Vec<(f64, f64)> {
        let tf = t as f64;
        self.joints
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let (tx, ty) = TEMPLATE[j % JOINT_COUNT];
                let s = (m.omega * tf + m.phase).sin();
                (
                    self.origin.0 + self.velocity.0 * tf + self.scale * tx + m.amplitude.0 * s,
                    self.origin.1 + self.velocity.1 * tf + self.scale * ty + m.amplitude.1 * s,
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub velocity: (f64, f64),
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub joint_count: usize,
    pub skeleton_edges: Vec<(usize, usize)>,
    pub target: PersonMotion,
    pub distractors: Vec<PersonMotion>,
    pub background_motion: bool,
    /// Background drift in pixels per frame.
    pub background_velocity: (f64, f64),
    pub background_phase: (f64, f64),
    /// Box-blur width (odd); `None` disables blur.
    pub blur: Option<usize>,
    pub occluders: Vec<Occluder>,
    /// `(height, width)` of the full frame.
    pub image_size: (usize, usize),
    pub seed: u64,
}

/// Knobs for drawing a random scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub distractors: usize,
    pub background_motion: bool,
    pub blur: Option<usize>,
    pub occluders: usize,
    /// Multiplies every velocity and sinusoid amplitude.
    pub motion_scale: f64,
    pub image_size: (usize, usize),
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            distractors: 0,
            background_motion: false,
            blur: None,
            occluders: 0,
            motion_scale: 1.0,
            image_size: (96, 72),
        }
    }
}

fn random_person(rng: &mut ChaCha8Rng, key_pos: (f64, f64), key_t: i64, scale: f64, motion: f64) -> PersonMotion {
    let velocity = (
        motion * rng.random_range(-1.5..1.5),
        motion * rng.random_range(-0.8..0.8),
    );
    let joints = (0..JOINT_COUNT)
        .map(|j| {
            // Extremities swing more than the torso.
            let swing = match j {
                0 | 5 | 6 | 11 => 3.5,
                1 | 4 | 7 | 10 => 2.0,
                _ => 0.6,
            };
            JointMotion {
                amplitude: (
                    motion * swing * rng.random_range(0.3..1.0),
                    motion * swing * rng.random_range(0.1..0.5),
                ),
                omega: rng.random_range(0.3..0.9),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    let kt = key_t as f64;
    PersonMotion {
        origin: (key_pos.0 - velocity.0 * kt, key_pos.1 - velocity.1 * kt),
        velocity,
        scale,
        joints,
    }
}

impl SyntheticSceneConfig {
    /// Draws a scene whose target sits near the frame centre at `key_t`.
    pub fn random(seed: u64, key_t: i64, opts: &SceneOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (opts.image_size.0 as f64, opts.image_size.1 as f64);
        let key = (
            w / 2.0 + rng.random_range(-0.1..0.1) * w,
            h * 0.52 + rng.random_range(-0.06..0.06) * h,
        );
        let scale = h * rng.random_range(0.36..0.46);
        let target = random_person(&mut rng, key, key_t, scale, opts.motion_scale);
        let distractors = (0..opts.distractors)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                let pos = (
                    key.0 + side * rng.random_range(0.28..0.45) * w,
                    key.1 + rng.random_range(-0.1..0.1) * h,
                );
                let s = scale * rng.random_range(0.85..1.1);
                random_person(&mut rng, pos, key_t, s, opts.motion_scale)
            })
            .collect();
        let occluders = (0..opts.occluders)
            .map(|_| Occluder {
                x: rng.random_range(0.0..w * 0.8),
                y: rng.random_range(0.0..h * 0.8),
                w: rng.random_range(0.1..0.25) * w,
                h: rng.random_range(0.05..0.15) * h,
                velocity: (
                    opts.motion_scale * rng.random_range(-2.0..2.0),
                    opts.motion_scale * rng.random_range(-1.0..1.0),
                ),
                intensity: rng.random_range(0.3..0.6),
            })
            .collect();
        let background_velocity = if opts.background_motion {
            (
                opts.motion_scale * rng.random_range(-1.5..1.5),
                opts.motion_scale * rng.random_range(-1.5..1.5),
            )
        } else {
            (0.0, 0.0)
        };
        Self {
            joint_count: JOINT_COUNT,
            skeleton_edges: EDGES.to_vec(),
            target,
            distractors,
            background_motion: opts.background_motion,
            background_velocity,
            background_phase: (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)),
            blur: opts.blur,
            occluders,
            image_size: opts.image_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 8 || w < 8 || h > 4096 || w > 4096 {
            return Err(Error::Config(format!("scene size {h}x{w} outside 8..=4096")));
        }
        if self.joint_count == 0 || self.joint_count > JOINT_COUNT {
            return Err(Error::Config(format!(
                "joint_count {} outside 1..={JOINT_COUNT}",
                self.joint_count
            )));
        }
        for p in std::iter::once(&self.target).chain(&self.distractors) {
            if p.joints.len() != self.joint_count {
                return Err(Error::Config("per-joint motion list does not match joint_count".into()));
            }
        }
        if let Some(&(a, b)) = self
            .skeleton_edges
            .iter()
            .find(|(a, b)| *a >= self.joint_count || *b >= self.joint_count)
        {
            return Err(Error::Config(format!("skeleton edge ({a}, {b}) out of range")));
        }
        if self.blur.is_some_and(|k| k % 2 == 0 || k > 15) {
            return Err(Error::Config("blur width must be odd and at most 15".into()));
        }
        Ok(())
    }

    fn background(&self, t: i64) -> Image {
        let (h, w) = self.image_size;
        let tf = t as f64;
        let (vx, vy) = if self.background_motion {
            self.background_velocity
        } else {
            (0.0, 0.0)
        };
        let (p1, p2) = self.background_phase;
        Image::from_fn(h, w, |y, x| {
            let (xs, ys) = (x as f64 - vx * tf, y as f64 - vy * tf);
            0.2 + 0.07 * (0.23 * xs + 0.11 * ys + p1).sin() + 0.05 * (0.09 * xs - 0.21 * ys + p2).sin()
        })
    }

    fn draw_person(&self, img: &mut Image, joints: &[(f64, f64)]) {
        let size = joints
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max)
            - joints.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let radius = (size / 60.0).clamp(0.5, 1.5);
        for &(a, b) in &self.skeleton_edges {
            img.line(joints[a], joints[b], radius, 0.5);
        }
        for (j, &(x, y)) in joints.iter().enumerate() {
            let amp = match j {
                0..=2 | 6..=8 => 1.0,
                3..=5 | 9..=11 => 0.78,
                _ => 0.9,
            };
            img.blob(x, y, 1.2, amp);
        }
    }

    /// Frame `t` and the target's annotation.
    pub fn render(&self, t: i64) -> (Image, PoseAnnotation) {
        let mut img = self.background(t);
        for d in &self.distractors {
            self.draw_person(&mut img, &d.joints_at(t));
        }
        let joints = self.target.joints_at(t);
        self.draw_person(&mut img, &joints);
        let tf = t as f64;
        for o in &self.occluders {
            img.fill_rect(o.x + o.velocity.0 * tf, o.y + o.velocity.1 * tf, o.w, o.h, o.intensity);
        }
        if let Some(k) = self.blur {
            img = img.box_blur(k);
        }
        img.quantize();
        let (h, w) = self.image_size;
        let visible = joints
            .iter()
            .map(|&(x, y)| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64)
            .collect();
        (
            img,
            PoseAnnotation {
                joints,
                visible,
                person_id: 0,
                frame_index: t,
            },
        )
    }
}

/// Frames `t − 1, t, t + 1` and their target annotations.
pub fn synth_sequence(cfg: &SyntheticSceneConfig, t: i64) -> Result<(Vec<Image>, Vec<PoseAnnotation>)> {
    cfg.validate()?;
    Ok((t - 1..=t + 1).map(|f| cfg.render(f)).unzip())
}
