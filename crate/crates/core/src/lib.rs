//! Corpus construction toolkit for continual pre-training.
//!
//! Turns heterogeneous semi-structured records plus general web text into
//! ratio-balanced, graph-mixed, fixed-length training sequences, and scores
//! model outputs with ICL benchmark metrics.
//!
//! Pipeline stages: [`ingest`] -> [`quality`] -> [`graph`] -> [`mixer`] ->
//! [`interleave`] -> [`pack`], orchestrated by [`pipeline`]. [`lm`] provides
//! an n-gram perplexity oracle for corpus validation; [`eval`] the few-shot
//! benchmark harness.

pub mod eval;
pub mod graph;
pub mod ingest;
pub mod interleave;
pub mod lm;
pub mod manifest;
pub mod mixer;
pub mod pack;
pub mod pipeline;
pub mod quality;
pub mod types;

pub use types::{Document, DomainTag, Lang, Provenance, SourceId, TrainingSample};
