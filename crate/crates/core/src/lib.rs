//! Network inpainting by branched optimal transport on Cartesian grids.
//!
//! A conductivity `μ ≥ 0` is fitted to a partially observed image of a
//! transport network while the cost of routing the forcing `f⁺ − f⁻` through
//! `μ` favours thin, branched channels.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elliptic;
pub mod error;
pub mod face_mean;
pub mod graph_oracle;
pub mod grid;
pub mod imageio;
pub mod inpaint;
pub mod maps;
pub mod porous;
pub mod regularizer;
pub mod sparse;
pub mod synth;
pub mod topology;

pub use error::{NiotError, Result};
pub use grid::{CellField, FaceField, ForcingPair, Grid2D};
