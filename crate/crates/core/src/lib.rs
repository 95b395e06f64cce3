//! Video pose estimation with human/keypoint mask refinement and
//! bidirectional deformable cross attention over motion residuals.

pub mod backbone;
pub mod cli;
pub mod bmd;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod hkme;
pub mod image;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod viz;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
