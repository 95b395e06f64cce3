//! Gaussian target heatmaps.

use crate::tensor::Tensor;

/// One unnormalised Gaussian (peak 1, std `sigma` pixels) per visible
/// joint at `joints` given in heatmap pixel coordinates; invisible joints
/// get all-zero maps. Returns `[J, H, W]`.
pub fn render_gt_heatmaps(joints: &[(f64, f64)], visible: &[bool], size: (usize, usize), sigma: f64) -> Tensor {
    let (h, w) = size;
    let j = joints.len();
    let mut data = vec![0.0; j * h * w];
    let denom = 2.0 * sigma * sigma;
    for (k, (&(x, y), &vis)) in joints.iter().zip(visible).enumerate() {
        if !vis {
            continue;
        }
        let map = &mut data[k * h * w..(k + 1) * h * w];
        for yy in 0..h {
            let dy = yy as f64 - y;
            for xx in 0..w {
                let dx = xx as f64 - x;
                map[yy * w + xx] = (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    Tensor::new(vec![j, h, w], data).expect("heatmap extents are positive")
}
