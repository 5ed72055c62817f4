//! Image classification with location context.
//!
//! Given records that pair a precomputed image embedding with a GPS
//! coordinate, this crate extracts geographic context features (grid
//! encodings, map patches, survey statistics, radius-pooled hashtag and
//! concept histograms), trains a concatenation network whose pooling radii
//! are themselves learnable parameters, and evaluates the result with
//! ranking metrics. Bayesian location priors and KL-based class selection
//! round out the pipeline.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geodata`]: coordinates, grid quantization, spatial indexing with
//!   exact radius aggregation.
//! - [`features`]: the five location feature extractors.
//! - [`histfn`]: piecewise-linear histogram functions over the radius set.
//! - [`net`]: the from-scratch network, including the radius learning layer.
//! - [`baselines`]: Bayesian location priors.
//! - [`selection`]: KL-divergence class selection.
//! - [`eval`]: average precision and normalized accuracy@k.
//! - [`synth`], [`dataset`], [`experiment`]: data generation, feature
//!   caches, and experiment orchestration used by the CLI.

pub mod baselines;
pub mod dataset;
mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod geodata;
pub mod histfn;
pub mod net;
pub mod rng;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
