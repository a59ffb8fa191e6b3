//! Representation learning across camera-specific identity label spaces.
//!
//! Training data carries identity labels annotated independently per camera
//! view, with no links between cameras. The model couples a shared feature
//! encoder with one classifier head per camera, trains on the per-camera
//! labels, and self-discovers cross-camera identity correspondences by
//! cyclic prediction consistency: identity `a` in camera `p` nominates its
//! best match `b` in camera `q` through camera `q`'s head, and the pair is
//! accepted only if `b` nominates `a` right back. Accepted pairs become
//! extra classification targets (multi-labels) for the next training round.
//!
//! The crate ships synthetic multi-camera datasets with hidden cross-camera
//! ground truth, an exactly-differentiated dense network, the two-phase
//! training procedure, retrieval evaluation (CMC / mAP), and a small CLI.
//! See the `examples/` directory for one runnable walkthrough per
//! capability.

pub mod association;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
