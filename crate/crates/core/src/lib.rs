//! Memorisation cartography for machine-translation corpora.
//!
//! The crate turns per-example likelihood logs from an ensemble of
//! half-corpus training runs into training-memorisation (TM),
//! generalisation-score (GS) and counterfactual-memorisation (CM) maps,
//! derives surface features and training signals, fits a predictor for the
//! three metrics, plans region-based removal and sampling experiments, and
//! runs a token-insertion hallucination harness.

pub mod artifact;
pub mod cartography;
pub mod corpus;
pub mod ensemble;
pub mod features;
pub mod error;
pub mod flags;
pub mod hashing;
pub mod metrics;
pub mod perturb;
pub mod predictor;
pub mod signals;
pub mod stats;

pub use error::{Error, Result};

/// Zero-based line index of an example in its corpus.
pub type ExampleId = usize;
