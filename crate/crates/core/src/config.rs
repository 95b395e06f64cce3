//! Model hyperparameters and ablation switches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which attention variant fills the deformable branch of each motion block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DcaMode {
    /// Deformable convolution: a 3x3 kernel whose taps are shifted by
    /// offsets predicted from the motion features.
    Dc,
    /// Deformable attention: offsets and weights predicted from the query
    /// alone, no key projection.
    Da,
    /// Deformable cross attention: offsets from the query concatenated with
    /// the enhanced feature, dot-product weights over sampled keys.
    #[default]
    Dca,
}

impl fmt::Display for DcaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DcaMode::Dc => "dc",
            DcaMode::Da => "da",
            DcaMode::Dca => "dca",
        })
    }
}

impl FromStr for DcaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" => Ok(DcaMode::Dc),
            "da" => Ok(DcaMode::Da),
            "dca" => Ok(DcaMode::Dca),
            _ => Err(Error::Config(format!("unknown dca mode `{s}` (expected dc, da or dca)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Run the human/keypoint refinement stream at all. When off, the
    /// key-frame backbone feature replaces its outputs.
    pub hkme: bool,
    pub human_mask: bool,
    pub keypoint_mask: bool,
    pub bmd: bool,
    /// Process forward and backward residuals as separate streams.
    pub bidirectional: bool,
    pub dca_mode: DcaMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            hkme: true,
            human_mask: true,
            keypoint_mask: true,
            bmd: true,
            bidirectional: true,
            dca_mode: DcaMode::Dca,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub backbone_blocks: usize,
    pub human_blocks: usize,
    pub keypoint_blocks: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub adc_blocks: usize,
    pub sample_points: usize,
    /// Offset bound in patch-grid cells; `None` uses a quarter of the
    /// half grid diagonal.
    pub max_offset_radius: Option<f64>,
    pub joints: usize,
    pub heatmap_stride: usize,
    pub init_std: f64,
    pub ln_eps: f64,
    /// Squash the human mask through a sigmoid instead of using the raw
    /// dot product.
    pub human_mask_sigmoid: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 48,
            channels: 1,
            patch: 8,
            dim: 32,
            heads: 4,
            mlp_ratio: 2,
            backbone_blocks: 2,
            human_blocks: 1,
            keypoint_blocks: 1,
            spatial_blocks: 1,
            temporal_blocks: 1,
            adc_blocks: 2,
            sample_points: 4,
            max_offset_radius: None,
            joints: 15,
            heatmap_stride: 4,
            init_std: 0.02,
            ln_eps: 1e-6,
            human_mask_sigmoid: false,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// A model small enough to finite-difference every coordinate.
    pub fn tiny() -> Self {
        Self {
            image_height: 16,
            image_width: 12,
            patch: 4,
            dim: 8,
            heads: 2,
            joints: 4,
            sample_points: 2,
            init_std: 0.2,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch, self.image_width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn heatmap_size(&self) -> (usize, usize) {
        (
            self.image_height / self.heatmap_stride,
            self.image_width / self.heatmap_stride,
        )
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn offset_radius(&self) -> f64 {
        self.max_offset_radius.unwrap_or_else(|| {
            let (h, w) = self.grid();
            ((h * h + w * w) as f64).sqrt() / 2.0 / 4.0
        })
    }

    /// Number of 2x upsampling stages taking the patch grid to the heatmap.
    pub fn upsample_stages(&self) -> usize {
        let (gh, _) = self.grid();
        let (hh, _) = self.heatmap_size();
        (hh / gh).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("joints", self.joints),
            ("heatmap_stride", self.heatmap_stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (what, extent) in [("image height", self.image_height), ("image width", self.image_width)] {
            if extent % self.patch != 0 {
                return Err(Error::NotDivisible {
                    what,
                    extent,
                    patch: self.patch,
                });
            }
            if extent % self.heatmap_stride != 0 {
                return Err(Error::Config(format!(
                    "{what} {extent} is not divisible by heatmap stride {}",
                    self.heatmap_stride
                )));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(1..=16).contains(&self.sample_points) {
            return Err(Error::Config(format!(
                "sample_points must lie in 1..=16, got {}",
                self.sample_points
            )));
        }
        let (gh, gw) = self.grid();
        let (hh, hw) = self.heatmap_size();
        let ratio_ok = hh % gh == 0
            && hw % gw == 0
            && hh / gh == hw / gw
            && (hh / gh).is_power_of_two();
        if !ratio_ok {
            return Err(Error::Config(format!(
                "heatmap {hh}x{hw} is not a power-of-two upsampling of the {gh}x{gw} patch grid"
            )));
        }
        if !(self.init_std > 0.0 && self.ln_eps > 0.0) {
            return Err(Error::Config("init_std and ln_eps must be positive".into()));
        }
        if let Some(r) = self.max_offset_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("max_offset_radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}
