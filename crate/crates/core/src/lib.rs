//! Multi-geometry spatial filtering front-end.
//!
//! Superdirective beamformer banks for several microphone-array geometries,
//! trainable spatial-filtering networks initialized from those banks (an
//! elastic, fully connected variant and a weight-tied, max-pooled variant),
//! a stage-wise trainer, and a free-field simulator for desk-scale
//! experiments on geometry mismatch.

pub mod beamform;
pub mod dsp;
pub mod error;
pub mod geometry;
pub mod mcmodel;
pub mod nnet;
pub mod simkit;
pub mod trainer;
pub mod trend;
pub mod wav;

pub use error::{Error, Result};
