//! posereg: end-to-end 6-DOF camera pose regression from monocular images
//! at desk scale.
//!
//! A small reverse-mode autodiff engine trains a convolutional regressor
//! that maps an image to a 7-D pose vector (3-D position + quaternion).
//! Ground-truth poses come from a deterministic synthetic scene renderer
//! instead of a structure-from-motion pipeline, so datasets are regenerable
//! from a seed. The [`evaluation`] module implements the measurement
//! protocols: median/cumulative error reports, dense-crop averaging, a
//! nearest-neighbour feature baseline, loss-balance and training-spacing
//! sweeps, transfer from a classification pretext, and gradient saliency
//! maps.

pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod oracle;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
