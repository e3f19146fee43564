//! In-context image classification with enriched label spaces.
//!
//! The pipeline picks demonstration images for each test image, rewrites
//! their labels (label distributions or visual descriptions), assembles an
//! interleaved image/text prompt, and scores every candidate class by the mean
//! log-probability a backend assigns to its tokens. Backends speak a small
//! line-delimited JSON protocol; [`scorer_gateway::SyntheticBackend`] is a
//! deterministic stand-in used for hermetic runs.

pub mod description_cache;
pub mod embedding_store;
pub mod error;
pub mod eval_harness;
pub mod ice_selection;
pub mod label_space;
pub mod prompt_builder;
pub mod rng;
pub mod scorer_gateway;
pub mod scoring;
mod template;

pub use error::{Error, ErrorClass, Result};
pub use template::fill as fill_template;
