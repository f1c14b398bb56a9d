//! Sub-cluster supervised contrastive learning with inter-class distance
//! reweighting for long-tailed classification on feature vectors.
//!
//! The pipeline embeds samples with a small encoder trained by a contrastive
//! objective, splits large classes into sub-clusters about the size of the
//! smallest class, and weights the classification loss of every class by how
//! close it sits to its nearest neighbouring class.

pub mod clustering;
pub mod data_io;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod reweighting;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use domain::{Dataset, EmbeddingBatch, Matrix, RandomSource};
pub use error::{Error, Result};
