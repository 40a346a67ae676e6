//! Over-the-air federated learning over an active STARS-assisted uplink.
//!
//! The crate is organised bottom-up: [`scenario`] holds configuration and
//! geometry, [`channel`] draws Rician links and composes effective channels
//! through the surface, [`ota`] implements the normalize/precode/superpose/
//! estimate chain, [`fl`] runs gradient descent on top of it, [`bounds`]
//! evaluates the convergence analysis, [`sca`] optimizes the receive
//! beamformer and surface phases, and [`harness`] wires everything into
//! reproducible Monte-Carlo experiments.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod fl;
pub mod harness;
pub mod ota;
pub mod rng;
pub mod sca;
pub mod scenario;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
