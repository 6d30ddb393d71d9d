//! Bounded-memory, covariance-aware nearest-neighbour anomaly detection
//! over precomputed patch descriptors.
//!
//! The pipeline learns four objects from normal data: an incrementally
//! fitted linear reducer, streaming mean/covariance moments, a regularised
//! whitening factor, and a budgeted memory bank of whitened
//! representatives. Inference scores each patch by its squared whitened
//! nearest-neighbour distance, which equals the Mahalanobis squared
//! distance in reduced coordinates, and reduces patch scores to an image
//! score with a stabilised softmax reweighting of the maximum.
//!
//! Training never materialises the full patch pool (except through the
//! offline-greedy reference constructor): each stage consumes the dataset
//! as a stream of mini-batches, and datasets are traversed multiple times
//! under a hash-checked re-iterability contract.
//!
//! Data-parallel inner loops (whitening, search, coverage updates) run on
//! rayon when the default `parallel` feature is enabled and degrade to
//! sequential iteration without it; results are bit-identical either way.

pub mod bank;
pub mod covreg;
pub mod detector;
pub mod error;
pub mod eval;
pub mod index;
pub mod linalg;
pub mod moments;
pub mod reducer;
pub mod synth;
pub mod telemetry;

pub use error::{Error, Result};
