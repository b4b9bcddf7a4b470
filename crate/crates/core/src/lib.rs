//! Parkinson's-disease screening from dynamic handwriting signals.
//!
//! Pen recordings are normalized, forward-differenced and cut into
//! fixed-width patches; a compact LSTM + 1D-CNN network classifies each
//! patch, and a threshold vote over a recording's patches yields the
//! sequence-level diagnosis. Training uses subject-level stratified k-fold
//! cross-validation. A synthetic spiral generator stands in for clinical
//! data.

pub mod error;
pub mod numkit;
pub mod signal;
pub mod model;
pub mod metrics;
pub mod dataset;
pub mod infer;
pub mod train;
pub mod synth;
pub mod cli;

pub use error::{Error, Result};
