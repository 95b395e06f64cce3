//! Saves a briefly trained model, reloads it and compares predictions bit
//! for bit; then shows the errors for damaged files.
//!
//! cargo run --release --example checkpoint_roundtrip

use vremd::data::{generate_windows, prepare, SceneOptions};
use vremd::trainer::{Checkpoint, TrainConfig, Trainer};
use vremd::Error;

fn main() -> vremd::Result<()> {
    let windows = generate_windows(4, 8, &SceneOptions::default())?;
    let mut t = Trainer::new(TrainConfig {
        steps: 20,
        ..TrainConfig::default()
    })?;
    t.run(&windows, |_| {})?;

    let path = std::env::temp_dir().join("vremd-example.vrmd");
    t.checkpoint().save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let (model, store) = loaded.restore()?;
    println!("restored step {} with {} parameters", loaded.step, store.numel());

    for (i, w) in windows.iter().enumerate() {
        let s = prepare(w, &model.cfg, 1.0, None)?;
        let a = t.model.predict(&t.store, &s.frames)?;
        let b = model.predict(&store, &s.frames)?;
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        println!("window {i}: identical heatmaps = {same}");
    }

    let bytes = std::fs::read(&path).map_err(|e| Error::Config(e.to_string()))?;
    match Checkpoint::from_bytes(&bytes[..bytes.len() / 2]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file unexpectedly loaded"),
    }
    let mut other = bytes.clone();
    other[4..8].copy_from_slice(b"0002");
    if let Err(e) = Checkpoint::from_bytes(&other) {
        println!("future version: {e}");
    }
    Ok(())
}
