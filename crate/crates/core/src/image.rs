//! Grayscale/RGB rasters, Netpbm I/O, and the few drawing primitives the
//! synthetic renderer and the overlay writer need.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear lookup at continuous `(x, y)`; outside the image returns `fill`.
    pub fn sample(&self, x: f64, y: f64, fill: f64) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x > -1.0 && y > -1.0 && x < w && y < h) {
            return fill;
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let at = |yy: f64, xx: f64| {
            if xx < 0.0 || yy < 0.0 || xx >= w || yy >= h {
                fill
            } else {
                self.get(yy as usize, xx as usize)
            }
        };
        let top = if fx == 0.0 {
            at(y0, x0)
        } else {
            (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0)
        };
        if fy == 0.0 {
            return top;
        }
        let bottom = if fx == 0.0 {
            at(y0 + 1.0, x0)
        } else {
            (1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0)
        };
        (1.0 - fy) * top + fy * bottom
    }

    /// Rounds every value to the nearest multiple of 1/255, as stored on disk.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = to_byte(*v) as f64 / 255.0;
        }
    }

    /// Max-composites a Gaussian blob of peak `amp` centred at `(cx, cy)`.
    pub fn blob(&mut self, cx: f64, cy: f64, sigma: f64, amp: f64) {
        let r = (3.0 * sigma).ceil();
        let y_lo = (cy - r).floor().max(0.0) as usize;
        let x_lo = (cx - r).floor().max(0.0) as usize;
        let y_hi = ((cy + r).ceil() as isize).min(self.height as isize - 1);
        let x_hi = ((cx + r).ceil() as isize).min(self.width as isize - 1);
        if y_hi < 0 || x_hi < 0 {
            return;
        }
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                let p = &mut self.data[y * self.width + x];
                *p = p.max(v);
            }
        }
    }

    /// Max-composites an anti-aliased segment of half-width `radius`.
    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), radius: f64, amp: f64) {
        let pad = radius + 1.0;
        let y_lo = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
        let x_lo = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
        let y_hi = ((a.1.max(b.1) + pad).ceil() as isize).min(self.height as isize - 1);
        let x_hi = ((a.0.max(b.0) + pad).ceil() as isize).min(self.width as isize - 1);
        if y_hi < 0 || x_hi < 0 {
            return;
        }
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                let (px, py) = (x as f64 - a.0, y as f64 - a.1);
                let t = if len2 > 0.0 {
                    ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
                let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
                let p = &mut self.data[y * self.width + x];
                *p = p.max(amp * cover);
            }
        }
    }

    /// Overwrites an axis-aligned rectangle (clipped to the image).
    pub fn fill_rect(&mut self, x: f64, y: f64, w: f64, h: f64, v: f64) {
        let x0 = x.round().max(0.0) as usize;
        let y0 = y.round().max(0.0) as usize;
        let x1 = ((x + w).round().max(0.0) as usize).min(self.width);
        let y1 = ((y + h).round().max(0.0) as usize).min(self.height);
        for yy in y0..y1 {
            for xx in x0..x1 {
                self.set(yy, xx, v);
            }
        }
    }

    /// Separable box blur of odd width `k` with edge replication.
    pub fn box_blur(&self, k: usize) -> Image {
        if k <= 1 {
            return self.clone();
        }
        let r = (k / 2) as isize;
        let pass = |src: &Image, horizontal: bool| {
            Image::from_fn(src.height, src.width, |y, x| {
                let mut s = 0.0;
                for o in -r..=r {
                    let (yy, xx) = if horizontal {
                        (y as isize, (x as isize + o).clamp(0, src.width as isize - 1))
                    } else {
                        ((y as isize + o).clamp(0, src.height as isize - 1), x as isize)
                    };
                    s += src.get(yy as usize, xx as usize);
                }
                s / (2 * r + 1) as f64
            })
        };
        pass(&pass(self, true), false)
    }

    /// Location of the maximum (first in row-major order).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 / self.width, best.0 % self.width)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_byte(v)));
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap (P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit graymaps are supported"));
        }
        pos += 1;
        let pixels = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated pixel data"))?;
        Ok(Image {
            height,
            width,
            data: pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    /// Grayscale to RGB, for drawing coloured overlays.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> Image {
        Image::from_fn(self.height * factor, self.width * factor, |y, x| {
            self.get(y / factor, x / factor)
        })
    }

    /// Linearly rescales values so the range spans `[0, 1]`.
    pub fn normalized(&self) -> Image {
        let lo = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v - lo) / span).collect(),
        }
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn put(&mut self, x: isize, y: isize, rgb: [f64; 3]) {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn dot(&mut self, x: f64, y: f64, r: isize, rgb: [f64; 3]) {
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, rgb);
                }
            }
        }
    }

    pub fn segment(&mut self, a: (f64, f64), b: (f64, f64), rgb: [f64; 3]) {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a.0 + t * (b.0 - a.0);
            let y = a.1 + t * (b.1 - a.1);
            self.put(x.round() as isize, y.round() as isize, rgb);
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_byte(v)));
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}
