//! Test-time adaptation for graph anomaly detection under normality
//! shift.
//!
//! A detector trained on one population of normal nodes degrades when
//! deployment graphs contain benign but previously unseen node groups:
//! the unfamiliar nodes score as anomalies, and message passing lets
//! them contaminate the representations of their seen-normal
//! neighbors. This crate adapts a frozen detector to such graphs at
//! test time by training a small residual feature aligner against an
//! aggregation-free twin of the encoder, optionally together with a
//! linear estimator that reconstructs aggregated representations for
//! confidently normal nodes.
//!
//! The pieces, bottom up:
//!
//! * [`tensorcore`]: dense/sparse matrices, reverse-mode
//!   differentiation, Adam.
//! * [`graph`]: CSR graphs, symmetric normalization, split masks, and
//!   an on-disk bundle format.
//! * [`gadmodel`]: the frozen two-layer GCN detector and its
//!   pretraining loop.
//! * [`tune`]: the test-time adaptation procedure itself.
//! * [`benchmark`]: synthetic shifted-graph generation, ranking
//!   metrics, and diagnostic studies.
//! * [`cli`]: the `shiftguard` command-line pipeline.
//!
//! All randomness flows from explicit seeds and all reductions run in
//! fixed order, so every pipeline stage is byte-reproducible.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod gadmodel;
pub mod graph;
pub mod tensorcore;
pub mod tune;

pub use error::{Error, Result};
