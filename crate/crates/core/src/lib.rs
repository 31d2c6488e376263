//! Ontology-grounded, context-sensitive token embeddings with a bi-LSTM
//! prepositional-phrase attachment disambiguator.
//!
//! A word token is embedded as the expectation of concept vectors under a
//! per-token distribution over its grounded (sense, hypernym) pairs; the
//! distribution combines a rank-decay sense prior with context-conditioned
//! attention. The crate also bundles a synthetic benchmark generator, a
//! training loop with early stopping, and a finite-difference oracle used
//! throughout the test suite.
//!
//! All numeric code is generic over the scalar type ([`scalar::Scalar`],
//! `f32` or `f64`); checkpoints always store 64-bit values.

pub mod attachment;
pub mod datagen;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod ndmath;
pub mod ontology;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete 64-bit aliases; the default precision for tests and checkpoints.
pub type Tensor64 = ndmath::Tensor<f64>;
pub type Tape64 = ndmath::Tape<f64>;
pub type ParameterStore64 = ndmath::ParameterStore<f64>;

/// Concrete 32-bit aliases for fast training builds.
pub type Tensor32 = ndmath::Tensor<f32>;
pub type Tape32 = ndmath::Tape<f32>;
pub type ParameterStore32 = ndmath::ParameterStore<f32>;
