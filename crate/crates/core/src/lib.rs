//! Point-of-gaze estimation workbench.
//!
//! A driver-facing camera and a road-facing camera observe the same moment;
//! the network maps the pair to the pixel in the road image the driver looks
//! at, while a calibration branch absorbs the unknown camera placement.

pub mod align;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod model;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod stats;
pub mod training;
pub mod world;

pub use error::{Error, Result};
