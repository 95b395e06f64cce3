//! Deformable sampling branches: cross attention with offsets conditioned
//! on a constraint feature, plus the deformable-attention and
//! deformable-convolution baselines.

use crate::config::{DcaMode, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Init, Linear};
use crate::tensor::Tensor;

/// Grid-node coordinates `(x, y)` of every cell of an `h x w` grid, `[N, 2]`.
pub fn reference_points(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            data.push(j as f64);
            data.push(i as f64);
        }
    }
    Tensor::from_parts(vec![h * w, 2], data)
}

/// Sampling offsets around per-query reference points.
pub struct OffsetField<'g> {
    /// `[N, S, 2]` in grid cells, `(dx, dy)`.
    pub offsets: Var<'g>,
    /// `[N, 2]`
    pub reference: Tensor,
    /// Reference plus offset (plus any fixed kernel displacement), before
    /// border clamping, `[N*S, 2]`.
    pub locations: Var<'g>,
}

fn bounded_offsets<'g>(raw: Var<'g>, samples: usize, radius: f64) -> Result<Var<'g>> {
    let n = raw.shape()[0];
    raw.tanh().scale(radius).reshape(&[n, samples, 2])
}

fn locations<'g>(
    g: &'g Graph<'g>,
    reference: &Tensor,
    offsets: Var<'g>,
    fixed: Option<&Tensor>,
) -> Result<Var<'g>> {
    let s = offsets.shape();
    let (n, k) = (s[0], s[1]);
    let mut base = g.constant(reference.reshape(&[n, 1, 2])?).add(offsets)?;
    if let Some(f) = fixed {
        base = base.add(g.constant(f.clone()))?;
    }
    base.reshape(&[n * k, 2])
}

fn as_grid<'g>(x: Var<'g>, grid: (usize, usize)) -> Result<Var<'g>> {
    let s = x.shape();
    if s.len() != 2 || s[0] != grid.0 * grid.1 {
        return Err(Error::invalid(
            "deformable sampling",
            format!("features {s:?} do not tile a {}x{} grid", grid.0, grid.1),
        ));
    }
    x.reshape(&[grid.0, grid.1, s[1]])
}

/// Deformable cross attention. Each query attends to `samples` bilinearly
/// sampled motion features at its reference point plus an offset derived
/// from the query and the constraint feature at that position.
#[derive(Clone, Debug)]
pub struct Dca {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_z: Linear,
    /// 3x3 grid convolution over `q ⊕ z`.
    pub psi: Linear,
    /// Projection to `2 * samples` offsets.
    pub theta: Linear,
    pub samples: usize,
    pub radius: f64,
    pub grid: (usize, usize),
    pub dim: usize,
}

impl Dca {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            w_q: Linear::new(&mut init.scoped("w_q"), d, d, false)?,
            w_k: Linear::new(&mut init.scoped("w_k"), d, d, false)?,
            w_v: Linear::new(&mut init.scoped("w_v"), d, d, false)?,
            w_z: Linear::new(&mut init.scoped("w_z"), d, d, false)?,
            psi: Linear::new(&mut init.scoped("psi"), 9 * 2 * d, d, true)?,
            theta: Linear::zeros(&mut init.scoped("theta"), d, 2 * cfg.sample_points, true)?,
            samples: cfg.sample_points,
            radius: cfg.offset_radius(),
            grid: cfg.grid(),
            dim: d,
        })
    }

    /// `Δp = tanh(θ(ψ(q ⊕ z))) · radius` anchored at the grid reference points.
    pub fn generate_offsets<'g>(&self, g: &'g Graph<'g>, q: Var<'g>, z: Var<'g>) -> Result<OffsetField<'g>> {
        let qz = as_grid(Var::concat(&[q, z], 1)?, self.grid)?;
        let conv = self.psi.forward(g, qz.unfold(3)?)?;
        let offsets = bounded_offsets(self.theta.forward(g, conv)?, self.samples, self.radius)?;
        let reference = reference_points(self.grid.0, self.grid.1);
        let locations = locations(g, &reference, offsets, None)?;
        Ok(OffsetField {
            offsets,
            reference,
            locations,
        })
    }

    /// `x: [N, D]` motion features, `constraint: [N, D]` -> `[N, D]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        x: Var<'g>,
        constraint: Var<'g>,
    ) -> Result<(Var<'g>, OffsetField<'g>)> {
        let n = x.shape()[0];
        let d = self.dim;
        let q = self.w_q.forward(g, x)?;
        let z = self.w_z.forward(g, constraint)?;
        let field = self.generate_offsets(g, q, z)?;
        let sampled = as_grid(x, self.grid)?.bilinear_sample(field.locations)?;
        let keys = self.w_k.forward(g, sampled)?.reshape(&[n, self.samples, d])?;
        let values = self.w_v.forward(g, sampled)?.reshape(&[n, self.samples, d])?;
        let weights = q
            .reshape(&[n, 1, d])?
            .matmul(keys.t()?)?
            .scale(1.0 / (d as f64).sqrt())
            .softmax(2)?;
        let out = weights.matmul(values)?.reshape(&[n, d])?;
        Ok((out, field))
    }
}

/// Deformable attention: offsets and attention weights are both linear
/// functions of the query alone.
#[derive(Clone, Debug)]
pub struct DeformableAttention {
    pub w_q: Linear,
    pub w_v: Linear,
    pub theta: Linear,
    pub attn: Linear,
    pub samples: usize,
    pub radius: f64,
    pub grid: (usize, usize),
    pub dim: usize,
}

impl DeformableAttention {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            w_q: Linear::new(&mut init.scoped("w_q"), d, d, false)?,
            w_v: Linear::new(&mut init.scoped("w_v"), d, d, false)?,
            theta: Linear::zeros(&mut init.scoped("theta"), d, 2 * cfg.sample_points, true)?,
            attn: Linear::new(&mut init.scoped("attn"), d, cfg.sample_points, true)?,
            samples: cfg.sample_points,
            radius: cfg.offset_radius(),
            grid: cfg.grid(),
            dim: d,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<(Var<'g>, OffsetField<'g>)> {
        let n = x.shape()[0];
        let q = self.w_q.forward(g, x)?;
        let offsets = bounded_offsets(self.theta.forward(g, q)?, self.samples, self.radius)?;
        let reference = reference_points(self.grid.0, self.grid.1);
        let locs = locations(g, &reference, offsets, None)?;
        let sampled = as_grid(x, self.grid)?.bilinear_sample(locs)?;
        let values = self.w_v.forward(g, sampled)?.reshape(&[n, self.samples, self.dim])?;
        let weights = self
            .attn
            .forward(g, q)?
            .softmax(1)?
            .reshape(&[n, 1, self.samples])?;
        let out = weights.matmul(values)?.reshape(&[n, self.dim])?;
        Ok((
            out,
            OffsetField {
                offsets,
                reference,
                locations: locs,
            },
        ))
    }
}

/// 3x3 deformable convolution on the patch grid; tap offsets come from a
/// plain 3x3 convolution of the input.
#[derive(Clone, Debug)]
pub struct DeformableConv {
    pub offset_conv: Linear,
    pub kernel: Linear,
    pub radius: f64,
    pub grid: (usize, usize),
    pub dim: usize,
}

const TAPS: usize = 9;

fn kernel_displacements(n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * TAPS * 2);
    for _ in 0..n {
        for dy in -1..=1 {
            for dx in -1..=1 {
                data.push(dx as f64);
                data.push(dy as f64);
            }
        }
    }
    Tensor::from_parts(vec![n, TAPS, 2], data)
}

impl DeformableConv {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            offset_conv: Linear::zeros(&mut init.scoped("offset_conv"), TAPS * d, 2 * TAPS, true)?,
            kernel: Linear::new(&mut init.scoped("kernel"), TAPS * d, d, false)?,
            radius: cfg.offset_radius(),
            grid: cfg.grid(),
            dim: d,
        })
    }

    pub fn forward<'g>(&self, g: &'g Graph<'g>, x: Var<'g>) -> Result<(Var<'g>, OffsetField<'g>)> {
        let n = x.shape()[0];
        let grid = as_grid(x, self.grid)?;
        let raw = self.offset_conv.forward(g, grid.unfold(3)?)?;
        let offsets = bounded_offsets(raw, TAPS, self.radius)?;
        let reference = reference_points(self.grid.0, self.grid.1);
        let locs = locations(g, &reference, offsets, Some(&kernel_displacements(n)))?;
        let taps = grid.bilinear_sample(locs)?.reshape(&[n, TAPS * self.dim])?;
        Ok((
            self.kernel.forward(g, taps)?,
            OffsetField {
                offsets,
                reference,
                locations: locs,
            },
        ))
    }
}

/// The deformable half of a motion block, selected by [`DcaMode`].
#[derive(Clone, Debug)]
pub enum DeformBranch {
    Dc(DeformableConv),
    Da(DeformableAttention),
    Dca(Dca),
}

impl DeformBranch {
    pub fn new(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg.ablation.dca_mode {
            DcaMode::Dc => DeformBranch::Dc(DeformableConv::new(&mut init.scoped("dc"), cfg)?),
            DcaMode::Da => DeformBranch::Da(DeformableAttention::new(&mut init.scoped("da"), cfg)?),
            DcaMode::Dca => DeformBranch::Dca(Dca::new(&mut init.scoped("dca"), cfg)?),
        })
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph<'g>,
        x: Var<'g>,
        constraint: Var<'g>,
    ) -> Result<(Var<'g>, OffsetField<'g>)> {
        match self {
            DeformBranch::Dc(m) => m.forward(g, x),
            DeformBranch::Da(m) => m.forward(g, x),
            DeformBranch::Dca(m) => m.forward(g, x, constraint),
        }
    }
}
