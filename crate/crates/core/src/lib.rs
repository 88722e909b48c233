//! Automatic construction and selection of groupby-aggregate combinatorial
//! features for high-dimensional categorical log data.
//!
//! The pipeline samples the raw log, searches categorical field pairs guided by
//! a latent factorization of pair effectiveness, expands each pair into
//! statistical features, prunes them with a Filter / Embedded / Wrapper
//! cascade and emits a reusable [`construct::FeatureTemplate`].

pub mod aggregate;
pub mod analysis;
pub mod cli;
pub mod construct;
pub mod dataset;
pub mod error;
pub mod learners;
pub mod pipeline;
pub mod search;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
