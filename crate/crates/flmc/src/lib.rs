//! Round-based simulator for federated Langevin Monte Carlo over a noisy
//! multiple-access uplink.
//!
//! Edge devices hold partitions of a synthetic Bayesian linear-regression
//! dataset. Each round they compute local cost gradients, clip them, and
//! transmit over a simulated superposition channel — either as one-bit
//! stochastically quantized symbols (digital) or as raw clipped values
//! (analog). The server folds the channel noise into the Langevin update, so
//! the uplink doubles as the sampler's noise source and as a differential
//! privacy mechanism.
//!
//! The crate provides:
//!
//! * [`model`] — data generation, exact conjugate posterior, local gradients;
//! * [`quantizer`] — one-bit stochastic quantization;
//! * [`channel`] — uplink superposition, AWGN, and the server update;
//! * [`privacy`] — (ε, δ) accounting for both transmission schemes;
//! * [`power`] — power-gain solvers under transmit, sampling-noise, and
//!   privacy constraints;
//! * [`harness`] — chains, replications, and parameter sweeps;
//! * [`cli`] — config parsing, CSV emission, and the command-line front end.

pub mod channel;
pub mod cli;
pub mod error;
pub mod harness;
pub mod model;
pub mod power;
pub mod privacy;
pub mod quantizer;
pub mod rng;

pub use error::{Error, Result};
