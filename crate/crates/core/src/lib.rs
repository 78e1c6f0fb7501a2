//! Online text-independent writer identification.
//!
//! The crate covers the whole chain from pen-down ink to a page-level writer
//! ranking:
//!
//! * [`ink`]: data model and the JSON ink format.
//! * [`preprocess`]: resampling, bending-value corners, pseudo-characters.
//! * [`augment`]: DropSegment counting/sampling/recombination and affine jitter.
//! * [`signature`]: truncated path signatures and feature-map rasterization.
//! * [`nn`]: a small dense CNN with backpropagation and a model file format.
//! * [`pipeline`]: training, page prediction and evaluation.
//! * [`synthgen`]: a deterministic multi-writer synthetic ink generator.

pub mod augment;
pub mod error;
pub mod ink;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod signature;
pub mod synthgen;

pub use error::{Error, Result};
pub use ink::{InkPage, Point, PseudoCharacter, SegmentedStroke, Stroke};

/// Side of the square raster fed to the network.
pub const GRID_SIZE: usize = 96;
/// Side of the box a normalized character is scaled into.
pub const CHAR_BOX: f64 = 54.0;
