//! Concept erasure under a kernelized rate-distortion objective.
//!
//! The crate trains a small erasure network `f` so that the learned
//! representations `Z = f(X)` no longer encode a chosen concept (categorical,
//! continuous or vector valued) while their overall coding rate stays close
//! to that of the inputs. It also ships the measurements used to judge an
//! erasure: probes, demographic-parity style fairness metrics and the
//! kNN-overlap alignment score.

pub mod alignment;
pub mod coding_rate;
pub mod datagen;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod knn;
pub mod metrics;
pub mod mlp;
pub mod net;
pub mod rng;

pub use error::{Error, Result};
