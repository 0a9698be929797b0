//! Simulation and statistical inference for photon-number-resolving silicon
//! photomultipliers.
//!
//! The crate is organized bottom-up: [`sources`] produces photon statistics,
//! [`detector`] maps them through the detector response, [`waveform`] renders
//! and digitizes single-shot traces, and [`estimators`] recovers the model
//! parameters from the resulting data.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod par;
pub mod pmf;
pub mod sources;
pub mod waveform;

pub use detector::{DetectorParams, OutputMoments};
pub use error::{Result, SipmError};
pub use pmf::PhotonDistribution;
pub use sources::{ShotCounts, SourceKind, SourceSpec};
