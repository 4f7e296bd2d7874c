//! Display models: which pairs the user is asked to judge.

use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SessionState;
use crate::rng::seeded;
use crate::{Error, Result};

/// Width of the head and tail bands of the diverse display.
pub const DIVERSE_BAND: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Diverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Display {
    pub pairs: Vec<Pair>,
    pub strategy: Strategy,
}

impl Display {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().flat_map(|p| [p.a, p.b])
    }
}

/// Takes the `2 * num_pairs` most probable items and pairs them with a seeded
/// uniformly random perfect matching.
pub fn greedy_display(state: &SessionState, num_pairs: usize, seed: u64) -> Result<Display> {
    let needed = 2 * num_pairs;
    if num_pairs == 0 {
        return Err(Error::InvalidParam("num_pairs must be at least 1".into()));
    }
    if state.active_count() < needed {
        return Err(Error::TooFewCandidates {
            needed,
            available: state.active_count(),
        });
    }
    let mut items = state.top_k(needed);
    items.shuffle(&mut seeded(seed));
    let pairs = items
        .chunks_exact(2)
        .map(|c| Pair { a: c[0], b: c[1] })
        .collect();
    Ok(Display {
        pairs,
        strategy: Strategy::Greedy,
    })
}

/// Pairs one item drawn from ranks `1..=50` with one from ranks
/// `n_display-49..=n_display`, without replacement across the display.
pub fn diverse_display(
    state: &SessionState,
    num_pairs: usize,
    n_display: usize,
    seed: u64,
) -> Result<Display> {
    if num_pairs == 0 {
        return Err(Error::InvalidParam("num_pairs must be at least 1".into()));
    }
    if n_display < 2 * DIVERSE_BAND {
        return Err(Error::InvalidParam(alloc::format!(
            "diverse display needs n_display >= {}, got {n_display}",
            2 * DIVERSE_BAND
        )));
    }
    if num_pairs > DIVERSE_BAND {
        return Err(Error::TooFewCandidates {
            needed: num_pairs,
            available: DIVERSE_BAND,
        });
    }
    if state.active_count() < n_display {
        return Err(Error::TooFewCandidates {
            needed: n_display,
            available: state.active_count(),
        });
    }
    let ranked = state.top_k(n_display);
    let head = &ranked[..DIVERSE_BAND];
    let tail = &ranked[n_display - DIVERSE_BAND..];
    let mut rng = seeded(seed);
    let heads = index::sample(&mut rng, DIVERSE_BAND, num_pairs);
    let tails = index::sample(&mut rng, DIVERSE_BAND, num_pairs);
    let pairs = heads
        .iter()
        .zip(tails.iter())
        .map(|(h, t)| {
            let (x, y) = (head[h], tail[t]);
            if rng.random::<bool>() {
                Pair { a: x, b: y }
            } else {
                Pair { a: y, b: x }
            }
        })
        .collect();
    Ok(Display {
        pairs,
        strategy: Strategy::Diverse,
    })
}
