//! Guided clustering with a Gaussian-mixture variational autoencoder.
//!
//! An encoder maps features `x` to a latent space structured by a Gaussian
//! mixture prior; a decoder reconstructs a guiding variable `y` from the
//! latent code. Clusters are the mixture components, and at inference time
//! only `x` is needed.

pub mod data;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod training;

pub use error::{Error, ErrorClass, Result};
