//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   window_0000/
//!     frame_000041.pgm
//!     frame_000042.pgm      key frame (middle index)
//!     frame_000043.pgm
//!     annotations.txt
//!   window_0001/
//!   ...
//! ```
//!
//! `annotations.txt` starts with the line `vremd-synth v1` followed by one
//! `frame joint x y visible` line per joint per frame. Coordinates are
//! written in shortest round-trip form so reading them back is bit-exact;
//! `visible` is `0` or `1`. Frames are 8-bit binary graymaps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{PoseAnnotation, Window};
use crate::error::{Error, Result};
use crate::image::Image;

pub const HEADER: &str = "vremd-synth v1";

pub fn window_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("window_{index:04}"))
}

fn frame_path(dir: &Path, frame: i64) -> PathBuf {
    dir.join(format!("frame_{frame:06}.pgm"))
}

pub fn write_window(dir: &Path, window: &Window) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = format!("{HEADER}\n");
    for (img, ann) in window.frames.iter().zip(&window.annotations) {
        img.write_pgm(&frame_path(dir, ann.frame_index))?;
        for (j, (&(x, y), &v)) in ann.joints.iter().zip(&ann.visible).enumerate() {
            writeln!(text, "{} {} {} {} {}", ann.frame_index, j, x, y, u8::from(v)).unwrap();
        }
    }
    let path = dir.join("annotations.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_dataset(root: &Path, windows: &[Window]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (i, w) in windows.iter().enumerate() {
        write_window(&window_dir(root, i), w)?;
    }
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<PoseAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        Some(other) => return Err(bad(1, &format!("expected header `{HEADER}`, found `{other}`"))),
        None => return Err(bad(1, "empty file")),
    }
    let mut anns: Vec<PoseAnnotation> = Vec::new();
    for (n, line) in lines.enumerate() {
        let n = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(n, "expected `frame joint x y visible`"));
        }
        let frame: i64 = f[0].parse().map_err(|_| bad(n, "bad frame index"))?;
        let joint: usize = f[1].parse().map_err(|_| bad(n, "bad joint index"))?;
        let x: f64 = f[2].parse().map_err(|_| bad(n, "bad x"))?;
        let y: f64 = f[3].parse().map_err(|_| bad(n, "bad y"))?;
        let vis = match f[4] {
            "0" => false,
            "1" => true,
            _ => return Err(bad(n, "visible must be 0 or 1")),
        };
        if anns.last().is_none_or(|a| a.frame_index != frame) {
            anns.push(PoseAnnotation {
                joints: Vec::new(),
                visible: Vec::new(),
                person_id: 0,
                frame_index: frame,
            });
        }
        let ann = anns.last_mut().unwrap();
        if joint != ann.joints.len() {
            return Err(bad(n, "joints must be listed in order"));
        }
        ann.joints.push((x, y));
        ann.visible.push(vis);
    }
    Ok(anns)
}

pub fn read_window(dir: &Path) -> Result<Window> {
    let path = dir.join("annotations.txt");
    let annotations = read_annotations(&path)?;
    if annotations.len() != 3 {
        return Err(Error::Format {
            path,
            msg: format!("expected 3 frames, found {}", annotations.len()),
        });
    }
    let frames = annotations
        .iter()
        .map(|a| Image::read_pgm(&frame_path(dir, a.frame_index)))
        .collect::<Result<_>>()?;
    Ok(Window { frames, annotations })
}

/// Every `window_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Window>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("window_")))
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_window(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_windows, SceneOptions};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SceneOptions {
            distractors: 2,
            ..SceneOptions::default()
        };
        let windows = generate_windows(2, 7, &opts).unwrap();
        write_dataset(dir.path(), &windows).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, windows);
        let text = fs::read_to_string(dir.path().join("window_0000/annotations.txt")).unwrap();
        assert!(text.starts_with("vremd-synth v1\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 15);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let windows = generate_windows(2, 9, &SceneOptions::default()).unwrap();
        write_dataset(a.path(), &windows).unwrap();
        write_dataset(b.path(), &generate_windows(2, 9, &SceneOptions::default()).unwrap()).unwrap();
        for w in ["window_0000", "window_0001"] {
            for e in fs::read_dir(a.path().join(w)).unwrap() {
                let e = e.unwrap();
                let other = b.path().join(w).join(e.file_name());
                assert_eq!(fs::read(e.path()).unwrap(), fs::read(other).unwrap());
            }
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("annotations.txt");
        fs::write(&p, "vremd-synth v2\n0 0 1 1 1\n").unwrap();
        assert!(matches!(read_annotations(&p), Err(Error::Format { .. })));
    }
}
