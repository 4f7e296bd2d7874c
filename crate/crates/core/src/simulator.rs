//! Oracle user: one relative judgment per embedding space, combined by
//! majority vote. Spaces that disagree with the vote are the "misaligned"
//! sub-perceptions the predictor learns to spot.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::display::Pair;
use crate::engine::Label;
use crate::space::Corpus;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    /// Per-space choice: `First` when `a` is closer to the target.
    pub choices: Vec<Label>,
    /// The label fed back to the engine.
    pub majority: Label,
    /// `alignment[f]` is true when space `f` agrees with `majority`.
    #[serde(with = "crate::bits")]
    pub alignment: Vec<bool>,
    /// Set when an even number of spaces split evenly.
    #[serde(skip)]
    pub tie_broken: bool,
}

impl OracleVerdict {
    pub fn from_choices(choices: Vec<Label>) -> Self {
        let second = choices.iter().filter(|&&c| c == Label::Second).count();
        let first = choices.len() - second;
        let tie_broken = first == second;
        let majority = if first > second {
            Label::First
        } else if second > first {
            Label::Second
        } else {
            choices.first().copied().unwrap_or(Label::First)
        };
        let alignment = choices.iter().map(|&c| c == majority).collect();
        Self {
            choices,
            majority,
            alignment,
            tie_broken,
        }
    }

    /// Replaces the fed-back label (label noise) and re-derives alignment.
    pub fn with_label(mut self, label: Label) -> Self {
        self.majority = label;
        self.alignment = self.choices.iter().map(|&c| c == label).collect();
        self
    }

    pub fn is_unanimous(&self) -> bool {
        self.choices.windows(2).all(|w| w[0] == w[1])
    }
}

/// Picks the pair member closer to `target` in one space; exact ties go to `a`.
pub fn oracle_choice(corpus: &Corpus, space_index: usize, pair: Pair, target: usize) -> Result<Label> {
    let space = corpus.space(space_index);
    let sa = space.similarity(pair.a, target)?;
    let sb = space.similarity(pair.b, target)?;
    Ok(if sb > sa { Label::Second } else { Label::First })
}

/// Per-space choices plus their majority vote.
pub fn judge(corpus: &Corpus, pair: Pair, target: usize) -> Result<OracleVerdict> {
    let choices = (0..corpus.num_spaces())
        .map(|f| oracle_choice(corpus, f, pair, target))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleVerdict::from_choices(choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::EmbeddingSpace;
    use Label::{First, Second};

    fn space(id: &str, rows: &[[f32; 2]]) -> EmbeddingSpace {
        EmbeddingSpace::from_rows(id, 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn majority_and_alignment() {
        let v = OracleVerdict::from_choices(alloc::vec![First, First, Second]);
        assert_eq!(v.majority, First);
        assert_eq!(v.alignment, alloc::vec![true, true, false]);
        let v = OracleVerdict::from_choices(alloc::vec![Second; 3]);
        assert_eq!(v.majority, Second);
        assert!(v.alignment.iter().all(|&y| y) && v.is_unanimous());
        let tie = OracleVerdict::from_choices(alloc::vec![Second, First]);
        assert!(tie.tie_broken);
        assert_eq!(tie.majority, Second);
    }

    #[test]
    fn oracle_choice_examples() {
        // target is item 0; item 1 has cos 0.3, item 2 cos 0.7 to it, item 3 duplicates item 1
        let s = space(
            "a",
            &[[1.0, 0.0], [0.3, 0.953_939_2], [0.7, 0.714_142_8], [0.3, 0.953_939_2]],
        );
        let corpus = Corpus::from_spaces(alloc::vec![s]).unwrap();
        assert_eq!(oracle_choice(&corpus, 0, Pair { a: 0, b: 1 }, 0).unwrap(), First);
        assert_eq!(oracle_choice(&corpus, 0, Pair { a: 1, b: 2 }, 0).unwrap(), Second);
        assert_eq!(oracle_choice(&corpus, 0, Pair { a: 3, b: 1 }, 0).unwrap(), First);
    }
}
