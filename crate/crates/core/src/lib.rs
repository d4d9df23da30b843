//! Dataset pruning by temporal dual-depth scoring.
//!
//! The pipeline: train a model while logging each sample's predicted
//! probabilities per epoch ([`toytrain`], [`trajlog`]), turn adjacent-epoch
//! changes into a per-sample score ([`scoring`]) or a baseline score
//! ([`baselines`]), keep the top-scoring fraction, and retrain on it with
//! optional importance weights.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod compare;
pub mod error;
pub mod oracles;
pub mod scoring;
pub mod synthdata;
pub mod toytrain;
pub mod trajlog;

pub use error::{Error, Result};
