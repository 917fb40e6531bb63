//! Mean-field spectral analysis of random feedforward networks.
//!
//! The crate predicts, for an architecture drawn from a Gaussian ensemble,
//! a lower bound on the expected top eigenvalue of the Fisher information
//! matrix and the corresponding critical momentum-GD learning rate, from
//! closed layer-wise recursions over activation/gradient second moments.
//! A from-scratch network kernel, a Monte-Carlo oracle, and a training lab
//! verify the predictions empirically.
//!
//! Modules:
//! * [`arch`] — declarative architecture model and config parsing
//! * [`meanfield`] — the order-parameter recursions
//! * [`eigenbound`] — eigenvalue bound, critical learning rate, scale sweeps
//! * [`nnkernel`] — sampling, forward, and manual backward passes
//! * [`oracle`] — Monte-Carlo estimation and theory/empirical comparison
//! * [`lab`] — datasets, momentum-GD training, phase-diagram sweeps

pub mod arch;
pub mod eigenbound;
pub mod error;
pub mod lab;
pub mod meanfield;
pub mod nnkernel;
pub mod oracle;
pub mod rng;

pub use arch::{parse_arch, serialize_arch, validate_dims, ArchSpec, InitSpec, InputDim, LayerSpec};
pub use eigenbound::{analyze, gamma_sweep, spectral_report, SpectralReport};
pub use error::{Error, Result};
pub use meanfield::{run_profile, LayerOrderParams, OrderParamProfile};
pub use nnkernel::{sample_network, BatchTape, NetInstance};
