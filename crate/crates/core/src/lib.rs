//! Long-gap audio inpainting with similarity graphs.
//!
//! A lost segment is replaced by another part of the same recording. Frames
//! of a time-frequency feature representation are linked by a sparse
//! similarity graph; the best pair of jumps out of and back into the signal
//! around the gap is selected, refined to sample precision and joined with
//! time-frequency cross-fades.

pub mod audio_io;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod features;
mod par;
pub mod pipeline;
pub mod simgraph;
pub mod splice;
pub mod stft;
pub mod synth;
pub mod transition;

pub use error::{Error, Result};
