//! Heatmap decoding and the PCKh table on hand-made predictions.
//!
//! cargo run --release --example evaluate

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vremd::data::{generate_windows, prepare, render_gt_heatmaps, SceneOptions};
use vremd::eval::{compute_map, decode, head_segment, EvalConfig};
use vremd::config::ModelConfig;

fn main() -> vremd::Result<()> {
    let cfg = ModelConfig::default();
    let windows = generate_windows(16, 3, &SceneOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gts: Vec<_> = windows.iter().map(|w| w.key().clone()).collect();

    // Decoding the ideal target recovers the annotation.
    let mut decoded = Vec::new();
    let mut worst: f64 = 0.0;
    for w in &windows {
        let s = prepare(w, &cfg, 1.0, None)?;
        let (pred, _) = decode(&s.target, |p| s.heatmap_to_image(p, cfg.heatmap_stride));
        for (j, (p, g)) in pred.joints.iter().zip(&s.gt.joints).enumerate() {
            if s.visible[j] {
                worst = worst.max((p.0 - g.0).hypot(p.1 - g.1));
            }
        }
        decoded.push(pred);
    }
    println!("decoded targets: worst joint error {worst:.3} image pixels");
    println!("{}\n", compute_map(&decoded, &gts, &EvalConfig::default(), head_segment)?);

    // Jittered predictions score lower, and a looser threshold never hurts.
    let jittered: Vec<_> = gts
        .iter()
        .map(|g| {
            let mut p = g.clone();
            for q in &mut p.joints {
                q.0 += rng.random_range(-4.0..4.0);
                q.1 += rng.random_range(-4.0..4.0);
            }
            p
        })
        .collect();
    for alpha in [0.25, 0.5, 1.0] {
        let r = compute_map(&jittered, &gts, &EvalConfig { alpha }, head_segment)?;
        println!("jitter ±4 px, alpha {alpha}: mean AP {:.2}", r.mean_ap);
    }
    let r = compute_map(&jittered, &gts, &EvalConfig::default(), head_segment)?;
    print!("\n{}", r.to_csv());

    let single = render_gt_heatmaps(&[(3.4, 7.8)], &[true], (16, 12), 1.0);
    let (p, conf) = decode(&single, |p| p);
    println!("\nsingle map: peak ({:.2}, {:.2}) confidence {:.3}", p.joints[0].0, p.joints[0].1, conf[0]);
    Ok(())
}
