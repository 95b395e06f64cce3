//! Human and keypoint masks of a model trained briefly on a few windows,
//! written as images next to the key-frame crop.
//!
//! cargo run --release --example hkme_masks -- [out_dir]

use std::path::PathBuf;

use vremd::data::{generate_windows, prepare, SceneOptions};
use vremd::image::Image;
use vremd::trainer::{TrainConfig, Trainer};
use vremd::viz::{inspect, token_map};

fn main() -> vremd::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vremd-masks"));
    std::fs::create_dir_all(&out).map_err(|e| vremd::Error::Config(e.to_string()))?;
    let opts = SceneOptions {
        distractors: 1,
        ..SceneOptions::default()
    };
    let windows = generate_windows(4, 5, &opts)?;
    let mut t = Trainer::new(TrainConfig {
        steps: 150,
        ..TrainConfig::default()
    })?;
    t.run(&windows, |r| {
        if r.step % 50 == 0 {
            println!("step {:>3} loss {:.5}", r.step, r.loss);
        }
    })?;

    let cfg = &t.model.cfg;
    let sample = prepare(&windows[0], cfg, 1.0, None)?;
    let ins = inspect(&t.model, &t.store, &sample)?;
    let (n, grid) = (cfg.tokens(), cfg.grid());
    let human = ins.human_mask.expect("model has the refinement stream");
    let keypoint = ins.keypoint_mask.expect("model has the refinement stream");
    let total: f64 = keypoint.data().iter().sum();
    println!("keypoint mask mass {total:.6} (3 frames x {} joints)", cfg.joints);

    let (h, w) = (cfg.image_height, cfg.image_width);
    let key = Image {
        height: h,
        width: w,
        data: sample.frames.data()[h * w..2 * h * w].to_vec(),
    };
    key.upscale(4).write_pgm(&out.join("key_crop.pgm"))?;
    let s = 4 * cfg.patch;
    token_map(&human.data()[n..2 * n], grid, s).write_pgm(&out.join("human_mask.pgm"))?;
    token_map(&keypoint.data()[n..2 * n], grid, s).write_pgm(&out.join("keypoint_mask.pgm"))?;
    println!("masks for the key frame written to {}", out.display());
    Ok(())
}
