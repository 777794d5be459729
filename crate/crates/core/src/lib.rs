//! Jansen-Rit neural mass model toolkit: simulation, oscillation-screened
//! dataset generation, and reconstruction of the hidden state and parameters
//! from a single observed channel with either an analytic Kalman filter or a
//! physics-informed bidirectional LSTM.

pub mod akf;
pub mod dataset;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod io;
pub mod lstm;
pub mod model;
pub mod stats;
pub mod track;

pub use error::{Error, Result};
