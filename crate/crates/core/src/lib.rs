//! Simulation and surrogate learning for two-photon linear-optical circuits.
//!
//! The exact model evolves a two-photon state through a Haar-random
//! interferometer preceded by a bank of phase shifters and reads out the
//! coincidence distribution. Two trainable surrogates, a dense network
//! ([`surrogate::qcnn`]) and a low-rank tensor network ([`surrogate::qctn`]),
//! learn the map from phases to coincidences with the physical constraints
//! (phase periodicity, bosonic symmetry, normalization) built into their
//! layers. Either the exact model or a trained surrogate can then be inverted
//! by gradient descent to recover unknown phases from measured counts.

pub mod binio;
pub mod circuit;
pub mod entanglement;
pub mod error;
pub mod estimation;
pub mod fock;
pub mod grad;
pub mod permanent;
pub mod rng;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};
