use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::display::Display;
use crate::engine::{Judgment, Label, SessionState};
use crate::space::EmbeddingSpace;
use crate::{Error, Result};

/// Number of distance-embedding bins.
pub const DIST_BINS: usize = 100;
/// Candidates pooled into the state embedding.
pub const STATE_TOP: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentToken {
    /// `v+ − v−` in the token's space.
    pub v_diff: Vec<f32>,
    /// State embedding at the time of the judgment.
    pub v_s: Vec<f32>,
    pub dist_bin: u8,
}

/// Maps `‖v_diff‖ ∈ [0, 2]` to one of 100 equal-width bins over `‖v_diff‖ / 2`.
pub fn dist_bin(norm: f64) -> u8 {
    let x = libm::ceil(norm / 2.0 * DIST_BINS as f64) - 1.0;
    x.clamp(0.0, (DIST_BINS - 1) as f64) as u8
}

/// Mean of the rows of the `min(50, active)` most probable candidates,
/// scaled to unit length.
pub fn state_embedding(state: &SessionState, space: &EmbeddingSpace) -> Vec<f32> {
    let top = state.top_k(STATE_TOP);
    let mut mean = vec![0.0f64; space.dim()];
    for &i in &top {
        for (m, &x) in mean.iter_mut().zip(space.row(i)) {
            *m += x as f64;
        }
    }
    let norm = libm::sqrt(mean.iter().map(|x| x * x).sum::<f64>());
    if norm == 0.0 {
        return vec![0.0; space.dim()];
    }
    mean.iter().map(|&x| (x / norm) as f32).collect()
}

/// Tokens for a list of judgments sharing one state embedding.
pub fn encode_pairs(space: &EmbeddingSpace, v_s: &[f32], judgments: &[Judgment]) -> Vec<JudgmentToken> {
    judgments
        .iter()
        .map(|j| {
            let (plus, minus) = (space.row(j.selected()), space.row(j.rejected()));
            let v_diff: Vec<f32> = plus.iter().zip(minus).map(|(&p, &m)| p - m).collect();
            let norm = libm::sqrt(v_diff.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
            JudgmentToken {
                v_diff,
                v_s: v_s.to_vec(),
                dist_bin: dist_bin(norm),
            }
        })
        .collect()
}

/// Tokens for one displayed round, with `v_s` taken from `state`.
pub fn encode_step(
    space: &EmbeddingSpace,
    state: &SessionState,
    display: &Display,
    labels: &[Label],
) -> Result<Vec<JudgmentToken>> {
    if labels.len() != display.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: display.len(),
            actual: labels.len(),
        });
    }
    for p in &display.pairs {
        for i in [p.a, p.b] {
            if i >= space.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: space.len(),
                });
            }
        }
    }
    let v_s = state_embedding(state, space);
    let judgments: Vec<Judgment> = display
        .pairs
        .iter()
        .zip(labels)
        .map(|(p, &l)| Judgment::new(p.a, p.b, l))
        .collect();
    Ok(encode_pairs(space, &v_s, &judgments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::display::{Pair, Strategy};
    use crate::engine::{init_from_scores, Hyperparams};

    #[test]
    fn bins_cover_the_range() {
        assert_eq!(dist_bin(0.0), 0);
        assert_eq!(dist_bin(core::f64::consts::SQRT_2), 70);
        assert_eq!(dist_bin(2.0), 99);
        assert_eq!(dist_bin(0.5), 24);
        assert_eq!(dist_bin(0.500001), 25);
        assert_eq!(dist_bin(3.0), 99);
    }

    #[test]
    fn encode_step_examples() {
        let space = EmbeddingSpace::from_rows("s", 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let params = Hyperparams {
            n_prune: 0,
            ..Hyperparams::default()
        };
        let state = init_from_scores(&[0.2, 0.1, 0.0], &params).unwrap();
        let display = Display {
            pairs: vec![Pair { a: 0, b: 1 }, Pair { a: 0, b: 2 }],
            strategy: Strategy::Greedy,
        };
        let toks = encode_step(&space, &state, &display, &[Label::First, Label::Second]).unwrap();
        assert_eq!(toks[0].v_diff, vec![1.0, -1.0]);
        assert_eq!(toks[0].dist_bin, 70);
        assert_eq!(toks[1].v_diff, vec![0.0, 0.0]);
        assert_eq!(toks[1].dist_bin, 0);
        let flipped = encode_step(&space, &state, &display, &[Label::Second, Label::Second]).unwrap();
        assert_eq!(flipped[0].v_diff, vec![-1.0, 1.0]);
        assert_eq!(flipped[0].dist_bin, toks[0].dist_bin);
        let norm: f64 = toks[0].v_s.iter().map(|&x| x as f64 * x as f64).sum();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(encode_step(&space, &state, &display, &[Label::First]).is_err());
    }
}
