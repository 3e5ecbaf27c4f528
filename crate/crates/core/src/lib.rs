//! Noise decoupling for continuous-variable state transfer.
//!
//! A single bosonic mode is carried along a path of random unitary noise
//! (displacements, squeezes, or higher polynomial generators). Between path
//! segments a controller applies phase-space rotations or parity so that the
//! group-averaged noise generator vanishes. The crate simulates this in a
//! truncated Fock space, evaluates Wigner functions, and predicts the averaged
//! output with Gaussian filter functions.

pub mod cli;
pub mod engine;
pub mod error;
pub mod filter;
pub mod fock;
pub mod gaussian;
pub mod noise;
pub mod protocol;
pub mod wigner;

pub use error::{Error, Result};
