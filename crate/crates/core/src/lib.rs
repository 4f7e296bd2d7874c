//! Core of an interactive known-item search engine driven by pairwise
//! "closer to the target" judgments.
//!
//! The crate is `no_std` and only needs an allocator. It holds the pieces that
//! are pure computation:
//!
//! * [`space`]: unit-normalised embedding spaces and cosine primitives,
//! * [`engine`]: the per-session probability distribution and its Bayesian
//!   updates (hard, confidence-weighted soft, multi-space aggregation, pruning),
//! * [`display`]: greedy and diverse pair sampling,
//! * [`simulator`]: per-space oracle judgments with majority voting,
//! * [`perception`]: the transformer that predicts which embedding spaces a
//!   judgment agrees with, together with its training loop,
//! * [`session`]: the display / feedback / update loop shared by the
//!   simulation harness and the HTTP service.
//!
//! File formats, the CLI and the service live in the `kis` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bits;
pub mod display;
pub mod engine;
mod error;
pub mod linalg;
pub mod perception;
pub mod rng;
pub mod session;
pub mod simulator;
pub mod space;

pub use display::{diverse_display, greedy_display, Display, Pair, Strategy};
pub use engine::{
    apply_update, init_session, rank_of, temporal_hard, temporal_soft, Hyperparams, Judgment,
    Label, Query, RankInfo, SessionState,
};
pub use error::{Error, Result};
pub use session::{run_session, Ablation, Confidences, Policy, RankTrace, RunOptions, SearchSession, StepLog, StrategyPlan};
pub use simulator::{judge, oracle_choice, OracleVerdict};
pub use space::{Corpus, EmbeddingSpace, ItemMeta};
