//! Deforms meshed cuboid bounding boxes into target surfaces with stacks of
//! topology-adaptive graph convolutions.
//!
//! The pipeline: mesh the leaf boxes of a structure tree ([`mesh`]), run the
//! three-block deformation network ([`tagcn`]) that refines the mesh by
//! midpoint unpooling between blocks, supervise every block with a chamfer +
//! Laplacian + edge-length loss on area-weighted surface samples
//! ([`losses`]), optimize with Adam ([`train`]) and score the result with
//! chamfer, F1@d and voxel IoU ([`metrics`]).
//!
//! Gradients come from the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod sparse;
pub mod tagcn;
pub mod train;

pub use error::{Error, Result};
