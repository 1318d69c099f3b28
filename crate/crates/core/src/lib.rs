//! Phase-synchrony object tracking: a reverse-mode differentiation engine over
//! real and complex tensors, the InT and CV-RNN recurrent circuits, the
//! FeatureTracker procedural video generator, the shell-game motivation
//! experiment, and the synchrony / error-consistency metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the training
//! harness and the command line live in the `synchrony` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod circuits;
pub mod color;
pub mod error;
pub mod featuretracker;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod shellgame;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{CVar, ComplexTensor, RealTensor, Tape, Var};
