//! Post-processing toolkit for polar-anchor lane detectors.
//!
//! The crate covers everything in a two-stage polar lane detector that is not
//! a learned convolution: anchor geometry in local and global polar frames,
//! the interval-based lane IoU, matrix-form suppression with a geometric
//! prior, the masked graph scoring head (forward only), label assignment,
//! forward loss evaluators and detection metrics. The [`harness`] module
//! builds synthetic scenes and compares suppression strategies end to end.

// Validation uses `!(x > 0.0)`-style checks on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod laneiou;
pub mod losses;
pub mod o2o_head;
pub mod suppression;

pub use error::{Error, Result};
pub use geometry::{ImageFrame, LaneGrid, PolarAnchor, Pole, PoleKind};
pub use laneiou::GIoUParams;
pub use suppression::{Candidate, CandidateSet, SuppressionThresholds};
