//! Article-aware legal outcome classification with domain adaptation across
//! articles.
//!
//! The crate covers the whole pipeline: corpus loading and the synthetic
//! generator, the EMB1 embedding store, the hierarchical article-aware
//! network with its fact-only baseline, discriminator and Wasserstein
//! adversaries, balanced training and multi-label evaluation.

pub mod adaptation;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod model;
pub mod objective;
pub mod params;
pub mod tape;
pub mod training;

#[cfg(test)]
mod properties;

pub use error::{Error, Result};
