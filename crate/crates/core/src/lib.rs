//! Action-conditioned video generation with a dual generator/actor network.
//!
//! The crate is organised bottom-up: [`tensor`] provides the differentiable
//! kernels and optimizer, [`dataset`] the synthetic egocentric world and file
//! formats, [`generator`] and [`actor`] the two networks, [`losses`] the
//! objective and discriminator, [`training`] the three-phase protocol and
//! checkpoints, and [`evaluation`] the metrics and ablation harness.
//! [`verify`] holds the finite-difference gradient suite.

pub mod actor;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod losses;
mod nn;
pub mod seed;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
