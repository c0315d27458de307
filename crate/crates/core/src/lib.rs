//! Click-seeded instance segmentation of piled objects in depth maps.

pub mod dataset;
pub mod dualnet;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod groundtruth;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod pilegen;
pub mod rle;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
