//! Fits the default model to four fixed windows and scores it on them.
//!
//! cargo run --release --example train_overfit -- [seed]

use vremd::data::{generate_windows, SceneOptions};
use vremd::eval::{evaluate, EvalConfig};
use vremd::trainer::{dataset_loss, TrainConfig, Trainer};

fn main() -> vremd::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let windows = generate_windows(4, seed, &SceneOptions::default())?;
    let mut t = Trainer::new(TrainConfig {
        seed,
        ..TrainConfig::default()
    })?;
    let samples = t.prepare_all(&windows)?;
    let before = dataset_loss(&t.model, &t.store, &samples)?;
    t.run(&windows, |r| {
        if r.step % 50 == 0 {
            println!("step {:>3}  loss {:.6}  lr {:.0e}", r.step, r.loss, r.lr);
        }
    })?;
    let after = dataset_loss(&t.model, &t.store, &samples)?;
    println!("loss {before:.6} -> {after:.6} ({:.2}% of initial)", 100.0 * after / before);
    println!("{}", evaluate(&t.model, &t.store, &windows, &EvalConfig::default())?);
    Ok(())
}
