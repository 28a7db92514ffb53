//! Learning compact binary hash codes by directly optimizing multivariate
//! ranking measures (AUC, Precision-at-K, NDCG, mAP).
//!
//! Bit weights are trained with a 1-slack structured SVM solved by cutting
//! planes over an exact restricted-master LP; hash hyperplanes are generated
//! one at a time by column generation, each maximizing a dual-weighted
//! triplet objective through a sigmoid-smoothed surrogate. Retrieval ranks
//! word-packed codes under the learned weighted Hamming distance.
//!
//! With the default `parallel` feature the per-query and per-row loops fan
//! out over a rayon pool; without it every path runs sequentially. Results
//! are bit-identical either way.

pub mod codes;
pub mod data;
pub mod error;
pub mod exec;
pub mod inference;
pub mod measures;
pub mod learner;
pub mod model;
pub mod retrieval;
pub mod selftest;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
