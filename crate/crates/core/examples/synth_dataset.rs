//! Renders a small synthetic dataset to disk and reads it back.
//!
//! cargo run --release --example synth_dataset -- [out_dir]

use std::path::PathBuf;

use vremd::data::io::{read_dataset, write_dataset};
use vremd::data::{generate_windows, SceneOptions};

fn main() -> vremd::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vremd-synth"));
    let opts = SceneOptions {
        distractors: 2,
        background_motion: true,
        occluders: 1,
        ..SceneOptions::default()
    };
    let windows = generate_windows(6, 42, &opts)?;
    write_dataset(&out, &windows)?;
    let back = read_dataset(&out)?;
    assert_eq!(back, windows, "the on-disk layout round-trips exactly");

    for (i, w) in windows.iter().enumerate() {
        let key = w.key();
        let visible = key.visible.iter().filter(|&&v| v).count();
        let (x, y) = key.joints[14];
        println!(
            "window {i}: frames {}..{}, {visible}/15 joints visible, head top at ({x:.1}, {y:.1})",
            w.annotations[0].frame_index, w.annotations[2].frame_index
        );
    }
    println!("wrote {} windows to {}", windows.len(), out.display());
    Ok(())
}
