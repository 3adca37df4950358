//! Factorized spectral Boltzmann collision operator.
//!
//! The collision tensor `C[α1, α2, α3]` of a Laguerre × real-spherical-harmonic
//! Galerkin discretization is split into a sparse real Gaunt routing table
//! ([`angular::GauntCoo`]) and a dense rotation-invariant kinematic tensor
//! ([`kinematic::RTensor`]), `C = G ⊙ R`.

pub mod angular;
pub mod basis;
pub mod bench;
pub mod cache;
pub mod contraction;
pub mod error;
pub mod harmonics;
pub mod harness;
pub mod kinematic;
pub mod quadrature;

pub use error::{Error, Result};
