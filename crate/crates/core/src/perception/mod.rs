//! Per-space perception predictor.
//!
//! For every judgment of the current round the predictor outputs a confidence
//! `c ∈ (0, 1)` that the judgment agrees with its embedding space. One
//! independent predictor is trained per space.
//!
//! Input sequence: the initial query `q0` at position 0, followed by one token
//! per judged pair of every round so far, in round order. A judgment token is
//! `W·v_diff + W·v_s + E^d[bin] + step[k]` where `v_diff = v+ − v−`, `v_s` is
//! the mean of the top-50 candidates when the display was shown, and `bin`
//! buckets `‖v_diff‖ / 2` into 100 intervals. Self-attention is full
//! (non-causal) and carries no ordering signal inside a round, so pairs of a
//! display are treated as a set. Confidences are read at the last round's
//! tokens.

mod config;
mod gradcheck;
mod model;
mod ops;
mod token;
mod train;

pub use config::PredictorConfig;
pub use gradcheck::{gradient_check, gradient_check_params, GradCheck, REL_ERROR_FLOOR};
pub use model::{Predictor, PredictorInput, TensorInfo};
pub use ops::Real;
pub use token::{dist_bin, encode_pairs, encode_step, state_embedding, JudgmentToken, DIST_BINS, STATE_TOP};
pub use train::{auc, bce, evaluate_episodes, train, Episode, EpochStats, EvalMetrics, TrainConfig, TrainReport};
