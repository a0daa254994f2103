//! Slice-as-frame harness for promptable segmentation of 3D medical volumes.
//!
//! The pipeline has five stages, each in its own module:
//!
//! - [`volio`] loads NIfTI-1 (and a small raw test format) into canonical
//!   `(slice, row, col)` order and windows slices into 8-bit [`volio::Frame`]s.
//! - [`prompts`] derives centroid points and tight boxes from reference masks
//!   and assembles the four prompt schemes.
//! - [`wireproto`] is the newline-delimited JSON protocol spoken with a
//!   segmentation backend, including the run-length mask codec.
//! - [`driver`] runs a whole volume in per-slice image mode or in
//!   anchor-then-propagate video mode.
//! - [`metrics`] scores predictions with 3D Dice and renders median tables.
//!
//! [`refbackends`] holds deterministic backends and a synthetic case
//! generator so the pipeline can be checked end to end without a GPU.

pub mod driver;
pub mod mask;
pub mod metrics;
pub mod prompts;
pub mod refbackends;
pub mod volio;
pub mod wireproto;

pub use mask::{BinaryMask, MaskVolume};
pub use volio::{Dims, Frame, LabelVolume, Volume};
