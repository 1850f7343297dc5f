//! Toolkit for evaluating and training reciprocal (two-sided) recommender
//! systems.
//!
//! A reciprocal recommender produces ranked lists for *both* parties of a
//! matching market (candidates and recruiters, or two sides of a dating
//! service). Judging each side's list in isolation double-counts pairs that
//! are recommended to each other and hides how many distinct matches the
//! system can actually create. This crate provides:
//!
//! - [`dataset`]: directed bipartite interaction logs, k-core filtering,
//!   deterministic splitting, treatment-labelled pair sets, and a synthetic
//!   generator for desk-scale experiments.
//! - [`metrics`]: the usual per-side Recall/Precision/NDCG plus overall
//!   metrics that count every matched pair once (coverage), count pairs
//!   recommended on both sides (stability), and weight NDCG by side
//!   population (balanced ranking) — in batch form and as an incremental
//!   stream that updates after every emitted list.
//! - [`backbone`]: a latent-factor scoring model trained with pairwise
//!   ranking (BPR) loss, Adam, seeded negative sampling, and early stopping.
//! - [`crrs`]: the causal layer — three treatment-conditioned copies of the
//!   backbone, two-stage optimization, potential-outcome prediction, and a
//!   reranking rule that weighs each pair against the best alternative use
//!   of its list slots.
//! - [`harness`]: full-ranking evaluation, redundancy-rewriting experiment
//!   adjusters, the redundant-rank histogram, and the dual-model baseline.
//! - [`cli`]: the `prepare` / `train` / `evaluate` / `stream` / `adjust`
//!   pipeline commands used by the thin binary.
//!
//! Every operation is deterministic given its seed; see the `examples/`
//! directory for one runnable program per capability.

pub mod backbone;
pub mod cli;
pub mod crrs;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod seed;
pub mod types;

pub use error::{Error, Result};
pub use types::Side;
