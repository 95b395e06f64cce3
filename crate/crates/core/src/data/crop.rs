//! Top-down preprocessing: box expansion, cropping and resizing with a
//! recorded affine map back to frame coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Tight box around `points`; `None` when empty.
    pub fn enclosing(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter().peekable();
        it.peek()?;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in it {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some(Self::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Scales width and height by `factor` about the centre.
    pub fn expand(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Grows the shorter side so that `w / h == aspect`, keeping the centre.
    pub fn fit_aspect(&self, aspect: f64) -> Self {
        let (cx, cy) = self.center();
        let (mut w, mut h) = (self.w, self.h);
        if w < aspect * h {
            w = aspect * h;
        } else {
            h = w / aspect;
        }
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Intersection with the `width x height` frame.
    pub fn clamp_to(&self, width: usize, height: usize) -> Self {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = (self.x + self.w).clamp(0.0, width as f64);
        let y1 = (self.y + self.h).clamp(0.0, height as f64);
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Crop coordinates `u = (x − x0)·sx`, `v = (y − y0)·sy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    pub sx: f64,
    pub sy: f64,
}

impl CropTransform {
    pub fn identity() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            sx: 1.0,
            sy: 1.0,
        }
    }

    pub fn to_crop(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.x0) * self.sx, (p.1 - self.y0) * self.sy)
    }

    pub fn to_image(&self, p: (f64, f64)) -> (f64, f64) {
        (p.0 / self.sx + self.x0, p.1 / self.sy + self.y0)
    }
}

/// Expands `bbox` by 1.25 about its centre, clamps it to the frame, and
/// resamples that region to `out_size = (height, width)`.
pub fn expand_and_crop(frame: &Image, bbox: BBox, out_size: (usize, usize)) -> Result<(Image, CropTransform)> {
    let region = crop_region(frame, bbox)?;
    Ok(crop_to(frame, region, out_size))
}

/// The region [`expand_and_crop`] reads for `bbox`.
pub fn crop_region(frame: &Image, bbox: BBox) -> Result<BBox> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::DegenerateBox { w: bbox.w, h: bbox.h });
    }
    let region = bbox.expand(1.25).clamp_to(frame.width, frame.height);
    if !(region.w > 0.0 && region.h > 0.0) {
        return Err(Error::DegenerateBox {
            w: region.w,
            h: region.h,
        });
    }
    Ok(region)
}

/// Resamples `region` of `frame` to `out_size` with bilinear interpolation.
pub fn crop_to(frame: &Image, region: BBox, out_size: (usize, usize)) -> (Image, CropTransform) {
    let (oh, ow) = out_size;
    let t = CropTransform {
        x0: region.x,
        y0: region.y,
        sx: ow as f64 / region.w,
        sy: oh as f64 / region.h,
    };
    let img = Image::from_fn(oh, ow, |v, u| {
        let (x, y) = t.to_image((u as f64, v as f64));
        let x = x.clamp(0.0, (frame.width - 1) as f64);
        let y = y.clamp(0.0, (frame.height - 1) as f64);
        frame.sample(x, y, 0.0)
    });
    (img, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_example() {
        let e = BBox::new(100.0, 100.0, 80.0, 120.0).expand(1.25);
        assert_eq!(e, BBox::new(90.0, 85.0, 100.0, 150.0));
        let frame = Image::new(400, 400);
        let r = crop_region(&frame, BBox::new(100.0, 100.0, 80.0, 120.0)).unwrap();
        assert_eq!(r, e);
    }

    #[test]
    fn border_boxes_are_clamped() {
        let frame = Image::from_fn(30, 20, |y, x| (y * 20 + x) as f64 / 600.0);
        let (crop, t) = expand_and_crop(&frame, BBox::new(-5.0, 25.0, 12.0, 10.0), (16, 12)).unwrap();
        assert!(t.x0 >= 0.0 && t.y0 >= 0.0);
        assert!(crop.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        let frame = Image::new(10, 10);
        for b in [BBox::new(1.0, 1.0, 0.0, 3.0), BBox::new(1.0, 1.0, 3.0, -1.0)] {
            assert!(matches!(expand_and_crop(&frame, b, (4, 4)), Err(Error::DegenerateBox { .. })));
        }
        let outside = BBox::new(50.0, 50.0, 2.0, 2.0);
        assert!(matches!(expand_and_crop(&frame, outside, (4, 4)), Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn square_round_trip_within_half_pixel() {
        let frame = Image::new(64, 64);
        let (_, t) = expand_and_crop(&frame, BBox::new(12.0, 12.0, 40.0, 40.0), (64, 64)).unwrap();
        for p in [(12.3, 40.7), (30.0, 30.0), (55.5, 13.25)] {
            let q = t.to_image(t.to_crop(p));
            assert!((q.0 - p.0).abs() < 0.5 && (q.1 - p.1).abs() < 0.5);
            assert!((q.0 - p.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_aspect_keeps_centre() {
        let b = BBox::new(10.0, 20.0, 10.0, 40.0).fit_aspect(0.75);
        assert_eq!(b.center(), (15.0, 40.0));
        assert!((b.w / b.h - 0.75).abs() < 1e-12);
    }
}
