//! Minimal reader for PoseTrack-style JSON annotation files, so real
//! videos can be fed through the same preprocessing as synthetic ones.
//!
//! Only the fields needed here are parsed: `images[].{id, file_name,
//! frame_id}` and `annotations[].{image_id, track_id, keypoints}` with 17
//! `(x, y, v)` keypoints in the PoseTrack 2018 order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::PoseAnnotation;
use crate::error::{Error, Result};

/// Index into the 17 source keypoints for each of our 15 joints.
pub const SOURCE_INDEX: [usize; 15] = [16, 14, 12, 11, 13, 15, 10, 8, 6, 5, 7, 9, 1, 0, 2];

#[derive(Deserialize)]
struct File {
    images: Vec<ImageEntry>,
    #[serde(default)]
    annotations: Vec<AnnotationEntry>,
}

#[derive(Deserialize)]
struct ImageEntry {
    id: u64,
    file_name: String,
    #[serde(default)]
    frame_id: Option<i64>,
}

#[derive(Deserialize)]
struct AnnotationEntry {
    image_id: u64,
    #[serde(default)]
    track_id: u32,
    keypoints: Vec<f64>,
}

/// One annotated person in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrackRecord {
    pub file_name: PathBuf,
    pub annotation: PoseAnnotation,
}

pub fn parse_posetrack(text: &str, path: &Path) -> Result<Vec<PoseTrackRecord>> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let file: File = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for a in &file.annotations {
        let (pos, img) = file
            .images
            .iter()
            .enumerate()
            .find(|(_, i)| i.id == a.image_id)
            .ok_or_else(|| bad(format!("annotation refers to unknown image {}", a.image_id)))?;
        if a.keypoints.len() != 17 * 3 {
            return Err(bad(format!("expected 51 keypoint values, found {}", a.keypoints.len())));
        }
        let mut joints = Vec::with_capacity(15);
        let mut visible = Vec::with_capacity(15);
        for &s in &SOURCE_INDEX {
            let (x, y, v) = (a.keypoints[3 * s], a.keypoints[3 * s + 1], a.keypoints[3 * s + 2]);
            joints.push((x, y));
            visible.push(v > 0.0 && x >= 0.0 && y >= 0.0);
        }
        out.push(PoseTrackRecord {
            file_name: PathBuf::from(&img.file_name),
            annotation: PoseAnnotation {
                joints,
                visible,
                person_id: a.track_id,
                frame_index: img.frame_id.unwrap_or(pos as i64),
            },
        });
    }
    Ok(out)
}

pub fn read_posetrack(path: &Path) -> Result<Vec<PoseTrackRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_posetrack(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_keypoints_to_our_order() {
        let mut kp = Vec::new();
        for i in 0..17 {
            kp.extend([i as f64, 100.0 + i as f64, if i == 3 || i == 9 { 0.0 } else { 1.0 }]);
        }
        let json = serde_json::json!({
            "images": [{"id": 5, "file_name": "a/000001.jpg", "frame_id": 1}],
            "annotations": [{"image_id": 5, "track_id": 2, "keypoints": kp}]
        });
        let recs = parse_posetrack(&json.to_string(), Path::new("x.json")).unwrap();
        let a = &recs[0].annotation;
        assert_eq!(a.joints[0], (16.0, 116.0));
        assert_eq!(a.joints[14], (2.0, 102.0));
        assert!(!a.visible[11]);
        assert_eq!(a.visible.iter().filter(|&&v| !v).count(), 1);
        assert_eq!((a.person_id, a.frame_index), (2, 1));
    }

    #[test]
    fn unknown_image_is_an_error() {
        let json = r#"{"images": [], "annotations": [{"image_id": 1, "keypoints": []}]}"#;
        assert!(parse_posetrack(json, Path::new("x.json")).is_err());
    }
}
