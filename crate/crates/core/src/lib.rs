//! Synthetic displacement fields, volume warping and registration
//! evaluation for 3D medical images.
//!
//! Conventions used throughout:
//! - volumes are row-major, x-fastest, little-endian on disk;
//! - world coordinates are millimeters, `world = origin + index * spacing`;
//! - displacement fields are backward maps in mm: a warped image reads
//!   `out(x) = moving(x + d(x))`;
//! - all randomness is counter-based and fully determined by a u64 seed.

pub mod bspline;
pub mod error;
pub mod filter;
pub mod grid;
pub mod intensity;
pub mod io;
pub mod metrics;
pub mod pairs;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use grid::Grid;
pub use volume::{DisplacementField, Volume};
