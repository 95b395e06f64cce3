//! Heatmap decoding and head-normalised keypoint accuracy.

use std::fmt;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::skeleton::{table_columns, HEAD_BOTTOM, HEAD_TOP, JOINT_COUNT, JOINT_NAMES};
use crate::data::{prepare, PoseAnnotation, Window};
use crate::error::{Error, Result};
use crate::model::Vremd;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Peak location of one heatmap in heatmap pixels, with its value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Argmax of a `[H, W]` map (first maximum in row-major order), shifted a
/// quarter pixel on each axis toward the larger of its two neighbours.
/// An axis at the border of the map is not refined.
pub fn decode_map(map: &[f64], h: usize, w: usize) -> Peak {
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    let (r, c) = (best / w, best % w);
    let at = |r: usize, c: usize| map[r * w + c];
    let shift = |lo: f64, hi: f64| {
        if hi > lo {
            0.25
        } else if lo > hi {
            -0.25
        } else {
            0.0
        }
    };
    let mut x = c as f64;
    let mut y = r as f64;
    if c > 0 && c + 1 < w {
        x += shift(at(r, c - 1), at(r, c + 1));
    }
    if r > 0 && r + 1 < h {
        y += shift(at(r - 1, c), at(r + 1, c));
    }
    Peak {
        x,
        y,
        confidence: map[best],
    }
}

/// Decodes every joint of `[J, H, W]` heatmaps in heatmap pixels.
pub fn decode_heatmaps(heatmaps: &Tensor) -> Vec<Peak> {
    let s = heatmaps.shape();
    let (j, h, w) = (s[0], s[1], s[2]);
    (0..j).map(|k| decode_map(&heatmaps.data()[k * h * w..(k + 1) * h * w], h, w)).collect()
}

/// Decodes heatmaps and maps every peak to image coordinates with `to_image`.
/// All joints are reported visible; confidences are the peak values.
pub fn decode(heatmaps: &Tensor, to_image: impl Fn((f64, f64)) -> (f64, f64)) -> (PoseAnnotation, Vec<f64>) {
    let peaks = decode_heatmaps(heatmaps);
    let ann = PoseAnnotation {
        joints: peaks.iter().map(|p| to_image((p.x, p.y))).collect(),
        visible: vec![true; peaks.len()],
        person_id: 0,
        frame_index: 0,
    };
    (ann, peaks.iter().map(|p| p.confidence).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Fraction of the head segment a prediction may be off by.
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

/// Head segment length of the ground truth (head bottom to head top).
pub fn head_segment(gt: &PoseAnnotation) -> f64 {
    let (a, b) = (gt.joints[HEAD_BOTTOM], gt.joints[HEAD_TOP]);
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP in `[0, 100]` per table column (joint groups for the standard
    /// skeleton, individual joints otherwise), for columns with any
    /// visible ground truth.
    pub per_joint_ap: IndexMap<String, f64>,
    pub mean_ap: f64,
    pub threshold: EvalConfig,
    pub sample_count: usize,
}

/// Columns of the report for a `joints`-joint skeleton.
pub fn report_columns(joints: usize) -> Vec<(String, Vec<usize>)> {
    if joints == JOINT_COUNT {
        table_columns().into_iter().map(|(n, js)| (n.to_string(), js)).collect()
    } else {
        (0..joints).map(|j| (format!("joint{j}"), vec![j])).collect()
    }
}

/// Fraction of visible ground-truth joints predicted within
/// `alpha · head_size(gt)`, per column, times 100.
pub fn compute_map(
    preds: &[PoseAnnotation],
    gts: &[PoseAnnotation],
    cfg: &EvalConfig,
    head_size: impl Fn(&PoseAnnotation) -> f64,
) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::EmptyEvalSet);
    }
    let joints = gts[0].joints.len();
    let mut correct = vec![0usize; joints];
    let mut total = vec![0usize; joints];
    for (p, g) in preds.iter().zip(gts) {
        let thr = cfg.alpha * head_size(g);
        for j in 0..joints {
            if !g.visible[j] {
                continue;
            }
            total[j] += 1;
            let (a, b) = (p.joints[j], g.joints[j]);
            if (a.0 - b.0).hypot(a.1 - b.1) <= thr {
                correct[j] += 1;
            }
        }
    }
    let mut per_joint_ap = IndexMap::new();
    for (name, js) in report_columns(joints) {
        let t: usize = js.iter().map(|&j| total[j]).sum();
        if t > 0 {
            let c: usize = js.iter().map(|&j| correct[j]).sum();
            per_joint_ap.insert(name, c as f64 / t as f64 * 100.0);
        }
    }
    if per_joint_ap.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mean_ap = per_joint_ap.values().sum::<f64>() / per_joint_ap.len() as f64;
    Ok(EvalReport {
        per_joint_ap,
        mean_ap,
        threshold: *cfg,
        sample_count: preds.len(),
    })
}

impl EvalReport {
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<&str> = self.per_joint_ap.keys().map(String::as_str).collect();
        cols.push("Mean");
        cols.join(",")
    }

    /// Header line plus one row of APs with two decimals.
    pub fn to_csv(&self) -> String {
        let mut vals: Vec<String> = self.per_joint_ap.values().map(|v| format!("{v:.2}")).collect();
        vals.push(format!("{:.2}", self.mean_ap));
        format!("{}\n{}\n", self.csv_header(), vals.join(","))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "PCKh@{} over {} samples",
            self.threshold.alpha, self.sample_count
        )?;
        for (k, v) in &self.per_joint_ap {
            writeln!(f, "  {k:<9} {v:6.2}")?;
        }
        write!(f, "  {:<9} {:6.2}", "Mean", self.mean_ap)
    }
}

/// Predictions of `model` on each window, mapped to image coordinates.
/// Windows are processed in parallel; the output order matches the input.
pub fn predict_windows(model: &Vremd, store: &ParamStore, windows: &[Window], sigma: f64) -> Result<Vec<PoseAnnotation>> {
    let stride = model.cfg.heatmap_stride;
    windows
        .par_iter()
        .map(|w| {
            let s = prepare(w, &model.cfg, sigma, None)?;
            let hm = model.predict(store, &s.frames)?;
            let (mut ann, _) = decode(&hm, |p| s.heatmap_to_image(p, stride));
            ann.frame_index = w.key().frame_index;
            ann.person_id = w.key().person_id;
            Ok(ann)
        })
        .collect()
}

/// Runs the model over `windows` and scores it against their key frames.
pub fn evaluate(model: &Vremd, store: &ParamStore, windows: &[Window], cfg: &EvalConfig) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let preds = predict_windows(model, store, windows, 1.0)?;
    let gts: Vec<PoseAnnotation> = windows.iter().map(|w| w.key().clone()).collect();
    compute_map(&preds, &gts, cfg, head_segment)
}

/// Name of joint `j` in the standard skeleton.
pub fn joint_name(j: usize) -> &'static str {
    JOINT_NAMES.get(j).copied().unwrap_or("joint")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_gt_heatmaps;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ann(joints: Vec<(f64, f64)>) -> PoseAnnotation {
        let n = joints.len();
        PoseAnnotation {
            joints,
            visible: vec![true; n],
            person_id: 0,
            frame_index: 0,
        }
    }

    fn skeleton(offset: (f64, f64)) -> PoseAnnotation {
        let mut a = ann((0..15).map(|j| (offset.0 + j as f64, offset.1 + 2.0 * j as f64)).collect());
        a.joints[HEAD_BOTTOM] = (offset.0, offset.1);
        a.joints[HEAD_TOP] = (offset.0, offset.1 + 10.0);
        a
    }

    #[test]
    fn uniform_map_decodes_to_origin() {
        let p = decode_map(&[0.3; 12], 4, 3);
        assert_eq!((p.x, p.y, p.confidence), (0.0, 0.0, 0.3));
    }

    #[test]
    fn single_pixel_decodes_exactly() {
        let mut m = vec![0.0; 20];
        m[2 * 5 + 3] = 0.7;
        let p = decode_map(&m, 4, 5);
        assert_eq!((p.x, p.y, p.confidence), (3.0, 2.0, 0.7));
    }

    #[test]
    fn refinement_moves_toward_larger_neighbour() {
        let mut m = vec![0.0; 25];
        m[2 * 5 + 2] = 1.0;
        m[2 * 5 + 3] = 0.5;
        m[1 * 5 + 2] = 0.2;
        let p = decode_map(&m, 5, 5);
        assert_eq!((p.x, p.y), (2.25, 1.75));
    }

    #[test]
    fn render_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let pts: Vec<(f64, f64)> = (0..15)
                .map(|_| (rng.random_range(0.0..11.0), rng.random_range(0.0..15.0)))
                .collect();
            let hm = render_gt_heatmaps(&pts, &[true; 15], (16, 12), 1.0);
            for (p, q) in decode_heatmaps(&hm).iter().zip(&pts) {
                assert!((p.x - q.0).abs() <= 0.5 && (p.y - q.1).abs() <= 0.5);
            }
        }
    }

    #[test]
    fn perfect_and_displaced_predictions() {
        let gts: Vec<_> = (0..4).map(|i| skeleton((i as f64, 3.0))).collect();
        let r = compute_map(&gts, &gts, &EvalConfig::default(), head_segment).unwrap();
        assert_eq!(r.mean_ap, 100.0);
        assert!(r.per_joint_ap.values().all(|&v| v == 100.0));
        let far: Vec<_> = gts.iter().map(|g| ann(g.joints.iter().map(|p| (p.0 + 6.0, p.1)).collect())).collect();
        let r = compute_map(&far, &gts, &EvalConfig::default(), head_segment).unwrap();
        assert_eq!(r.mean_ap, 0.0);
    }

    #[test]
    fn half_correct_fixture_scores_fifty() {
        let gts: Vec<_> = (0..4).map(|i| skeleton((10.0 * i as f64, 0.0))).collect();
        let preds: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let dx = if i % 2 == 0 { 1.0 } else { 8.0 };
                ann(g.joints.iter().map(|p| (p.0 + dx, p.1)).collect())
            })
            .collect();
        let r = compute_map(&preds, &gts, &EvalConfig::default(), head_segment).unwrap();
        assert!(r.per_joint_ap.values().all(|&v| v == 50.0));
        assert_eq!(r.mean_ap, 50.0);
        assert_eq!(r.csv_header(), "Head,Shoulder,Elbow,Wrist,Hip,Knee,Ankle,Mean");
        assert!(r.to_csv().ends_with("50.00,50.00\n"));
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(
            compute_map(&[], &[], &EvalConfig::default(), head_segment),
            Err(Error::EmptyEvalSet)
        ));
    }

    proptest! {
        #[test]
        fn translation_and_alpha_properties(
            shifts in proptest::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 15),
            t in (-50.0f64..50.0, -50.0f64..50.0),
            alpha in 0.05f64..1.0,
        ) {
            let gt = skeleton((20.0, 20.0));
            let pred = ann(gt.joints.iter().zip(&shifts).map(|(p, s)| (p.0 + s.0, p.1 + s.1)).collect());
            let cfg = EvalConfig { alpha };
            let base = compute_map(&[pred.clone()], &[gt.clone()], &cfg, head_segment).unwrap();
            let mv = |a: &PoseAnnotation| ann(a.joints.iter().map(|p| (p.0 + t.0, p.1 + t.1)).collect());
            let moved = compute_map(&[mv(&pred)], &[mv(&gt)], &cfg, head_segment).unwrap();
            for (a, b) in base.per_joint_ap.values().zip(moved.per_joint_ap.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let loose = compute_map(&[pred], &[gt], &EvalConfig { alpha: alpha * 1.5 }, head_segment).unwrap();
            for (a, b) in base.per_joint_ap.values().zip(loose.per_joint_ap.values()) {
                prop_assert!(b >= a);
            }
            let mean = base.per_joint_ap.values().sum::<f64>() / base.per_joint_ap.len() as f64;
            prop_assert!((base.mean_ap - mean).abs() < 1e-9);
        }
    }
}
