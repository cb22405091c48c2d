//! Staged Laplacian-ICP (L-ICP) non-rigid mesh registration.
//!
//! A template mesh is deformed onto a target scan through user-declared
//! coarse-to-fine stages. Early stages fit a global affine transform whose
//! rigid part repositions the data and whose non-rigid part reshapes the
//! template; later stages solve sparse linear least-squares systems
//! regularised by the cotangent Laplace-Beltrami operator under a
//! decreasing stiffness schedule. A per-vertex-affine (N-ICP) solver is
//! included as a baseline, and an annotation-transfer benchmark scores
//! registration repeatability through density and homogeneity metrics.

pub mod benchmark;
pub mod cli;
pub mod correspond;
pub mod deform;
mod error;
pub mod mesh;
pub mod pipeline;
pub mod sparse;

pub use error::{Error, Result};
