//! Simulation and reconstruction toolkit for 3D Bragg coherent diffraction
//! imaging: crystal synthesis, kinematical intensity, photon noise,
//! deterministic holographic reconstruction, shrink-wrap refinement and the
//! error metrics used to compare them.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dcdi;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod forward;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod shrinkwrap;
pub mod volume;
pub mod volume_io;

pub use error::{Error, Result};
