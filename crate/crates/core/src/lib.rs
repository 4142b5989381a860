//! Spectral dynamics of neural network weight matrices.
//!
//! The crate trains small networks deterministically, takes dense SVD
//! snapshots of every weight matrix along the trajectory, and turns them
//! into three families of measurements:
//!
//! * effective rank of each layer's spectrum,
//! * alignment between the singular bases of consecutive layers,
//! * singular vector agreement (SVA) between checkpoints or between
//!   independently trained models.
//!
//! On top of those sit the intervention tools: SVD truncation, magnitude
//! masks with matched random controls, masked retraining, weight-space
//! interpolation with loss barriers, and norm-matched perturbations.

pub mod archive;
pub mod dynamics;
pub mod error;
pub mod interventions;
pub mod linalg;
pub mod manifest;
pub mod metrics;
pub mod presets;
pub mod report;
pub mod rng;
pub mod views;

pub use error::{Error, Result};
