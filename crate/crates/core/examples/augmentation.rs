//! One shared random affine per window: writes the original and several
//! augmented key-frame crops with their transformed joints.
//!
//! cargo run --release --example augmentation -- [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vremd::config::ModelConfig;
use vremd::data::{generate_windows, prepare, AugmentConfig, AugmentParams, PoseAnnotation, SceneOptions};
use vremd::image::Image;
use vremd::viz::{draw_pose, GREEN};

fn main() -> vremd::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vremd-augment"));
    std::fs::create_dir_all(&out).map_err(|e| vremd::Error::Config(e.to_string()))?;
    let cfg = ModelConfig::default();
    let w = &generate_windows(1, 11, &SceneOptions::default())?[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, wd) = (cfg.image_height, cfg.image_width);
    for i in 0..5 {
        let params = if i == 0 {
            AugmentParams::identity()
        } else {
            AugmentParams::sample(&AugmentConfig::default(), &mut rng)
        };
        let s = prepare(w, &cfg, 1.0, Some(&params))?;
        let key = Image {
            height: h,
            width: wd,
            data: s.frames.data()[h * wd..2 * h * wd].to_vec(),
        };
        let joints = s.gt.joints.iter().map(|&p| s.affine.apply(s.crop.to_crop(p))).collect::<Vec<_>>();
        let joints = if params.flip {
            vremd::data::skeleton::flip_permutation(joints.len()).iter().map(|&j| joints[j]).collect()
        } else {
            joints
        };
        let pose = PoseAnnotation {
            joints,
            visible: s.visible.clone(),
            ..s.gt.clone()
        };
        let mut img = key.upscale(4).to_rgb();
        draw_pose(&mut img, &pose, 4.0, GREEN);
        img.write_ppm(&out.join(format!("augment_{i}.ppm")))?;
        println!(
            "{i}: rotation {:+.1} deg, scale {:.2}, flip {}, half body {:?}, {} visible joints",
            params.rotation_deg,
            params.scale,
            params.flip,
            params.half_body,
            s.visible.iter().filter(|&&v| v).count()
        );
    }
    println!("crops written to {}", out.display());
    Ok(())
}
