//! The two-camera gaze network: a calibration module that embeds the
//! scene/face pair into a unit-norm 8-vector describing the driver–camera
//! configuration, and a regression module that maps the 20-channel input
//! stack (images plus tiled embedding) to a point of gaze.

mod config;
mod embedding;
mod network;

pub use config::ModelConfig;
pub use embedding::{CalibrationEmbedding, EMBEDDING_DIM};
pub use network::{
    prepare_input, BatchOutput, Dpen, DpenCache, GazePrediction, Hooks, Mode, PreparedInput, CALIB_INPUT_CHANNELS,
};
