//! Cross-camera multi-target tracking simulator.
//!
//! The crate models an edge video analytics pipeline over a deterministic
//! synthetic multi-camera world:
//!
//! - [`scenario`]: identities walking through overlapping camera views,
//!   rendered grayscale frames and ground truth.
//! - [`filter`]: SSIM / normalized-MSE frame redundancy filtering.
//! - [`percept`]: simulated person detector and appearance embedder.
//! - [`associate`]: temporal (intra-camera) and spatial (inter-camera)
//!   identity association into global IDs.
//! - [`roicover`]: tile grids, coverage matrices, exact and greedy tile set
//!   cover, tile merging and RoI masking.
//! - [`codec`]: lossless run-length intra/delta codec, analytic size model
//!   and uplink accounting.
//! - [`eval`]: IoU, MTTA and ID-switch metrics.
//! - [`querysvc`]: metadata store and online query resolution.
//! - [`pipeline`]: end-to-end orchestration, manifests and sweeps.

// `!(x > 0.0)` style checks deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod associate;
pub mod codec;
mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod percept;
pub mod pipeline;
pub mod querysvc;
pub mod rng;
pub mod roicover;
pub mod scenario;
mod union_find;

pub use error::{Error, Result};
pub use geometry::{BBox, PixelRect};
pub use union_find::UnionFind;
