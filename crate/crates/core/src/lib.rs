//! Event-camera stereo disparity estimation built on a small reverse-mode
//! autodiff engine.

pub mod checkpoint;
pub mod eaa;
pub mod error;
pub mod events;
pub mod gradsuite;
pub mod io;
pub mod losses;
pub mod matcher;
pub mod metrics;
pub mod mga;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
