//! Desk-scale economic sandbox: retail and wholesale purchasing simulation
//! driven by pluggable chat-model backends or deterministic mock agents.
//!
//! The crate is organized around the simulation pipeline:
//!
//! - [`data`] — market data types, ingestion, and the seeded synthetic
//!   market generator used as a verification oracle.
//! - [`prompt`] — profile summaries, retail decision prompts, and
//!   alignment-dataset construction.
//! - [`backend`] — the chat interface (HTTP or mock) and decision parsing.
//! - [`retail`] — single-agent retail episodes, consistency and
//!   attention diagnostics, candidate strategies.
//! - [`wholesale`] — the multi-round dealer/service/manufacturer dialogue
//!   state machine and symbolic rule discovery.
//! - [`meanfield`] — windowed market aggregates and the alternating
//!   micro/macro update loop.
//! - [`calibration`] — conditional histograms, KL-minimizing quantile
//!   maps, reweighting, bottleneck feedback, and the generalization bound.
//! - [`metrics`] — the evaluation harness (hit rate, quantity error,
//!   stability, run reports).

pub mod backend;
pub mod calibration;
pub mod data;
pub mod meanfield;
pub mod metrics;
pub mod money;
pub mod prompt;
pub mod retail;
pub mod seed;
pub mod wholesale;

pub use money::{Money, Month};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
