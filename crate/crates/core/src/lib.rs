//! Approximate message passing multiuser detection for the Gaussian
//! multiple-access channel with one-hot short-packet coding.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amp;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod harness;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod se;
pub mod stats;
pub mod validate;

pub use amp::{run_amp, AmpOutput, AmpRunConfig, AmpTrajectory};
pub use denoise::{DecoderKind, Denoise, Denoiser, PriorSpec};
pub use error::{Error, Result};
pub use model::{SensingMatrix, SensingOperator, SystemConfig};
pub use se::{run_se, run_se_with, QuadratureSpec, SeTrajectory};
