//! Anomaly detection and counterfactual what-if analysis for multichannel
//! bearing vibration data.
//!
//! The pipeline runs: ingest or synthesise windows ([`data`]), label them
//! with a three-sigma RMS rule, oversample the anomalous class ([`balance`]),
//! train a temporal convolutional classifier ([`tcn`]), score it ([`eval`]),
//! and explain individual predictions by substituting whole channels from
//! nearby correctly classified training windows ([`cf`]).

pub mod balance;
pub mod cf;
pub mod data;
pub mod error;
pub mod eval;
pub mod seed;
pub mod tcn;

pub use error::{Error, Result};
