//! Allocation-only kernels for keypoint-driven motion retargeting.
//!
//! Everything here is pure computation over in-memory rasters and point sets; file formats,
//! configuration and the command line live in the `retarget` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod geom;
pub mod grid;
pub mod guidance;
pub mod keypoints;
pub mod linalg;
pub mod matching;
pub mod motion;
pub mod sampling;
pub mod tps;
pub mod tracker;

pub use error::{Error, Result};
pub use geom::Point2;
pub use grid::{BinaryMask, FeatureGrid, Frame, FrameSequence, Tensor4};
pub use keypoints::{KeypointSequence, KeypointSet, TrackPoint};
