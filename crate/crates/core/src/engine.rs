//! Per-session probability state and the Bayesian update rules.
//!
//! The state holds `P`, the probability of each candidate being the search
//! target. Each round of pairwise judgments produces, per embedding space
//! `f`, a temporal factor
//!
//! ```text
//! p̂_i^f = Σ_j sigmoid( c_j · [s^f(v_j+, v_i) − s^f(v_j−, v_i)] / ρ )
//! ```
//!
//! (`c_j = 1` is the plain pairwise update). The factors are summed over
//! spaces and multiplied into `P`, which is then renormalised over the active
//! candidates.
//!
//! The similarity gap `s(v+, v_i) − s(v−, v_i)` equals `(v+ − v−) · v_i` for
//! unit rows, so each pair costs a single dot product per candidate.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::display::Display;
use crate::linalg::{dot_mixed, sigmoid};
use crate::space::{Corpus, EmbeddingSpace};
use crate::{Error, Result};

/// Session hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Sigmoid temperature of the pairwise update.
    pub rho: f64,
    /// Pairs per display, `|D|`.
    pub num_pairs: usize,
    /// Head size `N_D` the diverse display samples from.
    pub n_display: usize,
    /// Candidates kept after the initial query; `0` disables pruning.
    pub n_prune: usize,
    pub max_steps: usize,
    /// Softmax temperature turning initial query scores into `P^0`.
    pub init_temperature: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            rho: 0.05,
            num_pairs: 5,
            n_display: 100,
            n_prune: 5000,
            max_steps: 7,
            init_temperature: 0.05,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParam(alloc::format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.init_temperature > 0.0 && self.init_temperature.is_finite()) {
            return Err(Error::InvalidParam(alloc::format!(
                "init_temperature must be > 0, got {}",
                self.init_temperature
            )));
        }
        if self.num_pairs == 0 {
            return Err(Error::InvalidParam("num_pairs must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParam("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// True when `n_prune` is set but would keep every item.
    pub fn prune_is_noop(&self, n_items: usize) -> bool {
        self.n_prune > 0 && self.n_prune >= n_items
    }
}

/// Which member of a displayed pair the user picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// `l = 0`: the first item `a` is closer to the target.
    First,
    /// `l = 1`: the second item `b` is closer.
    Second,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Self::First),
            1 => Some(Self::Second),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Self::First => 0,
            Self::Second => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Self::First => Self::Second,
            Self::Second => Self::First,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Label::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(alloc::format!("label must be 0 or 1, got {bit}")))
    }
}

/// A labelled pair: `label` says which of `a`, `b` was judged closer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub a: usize,
    pub b: usize,
    pub label: Label,
}

impl Judgment {
    pub fn new(a: usize, b: usize, label: Label) -> Self {
        Self { a, b, label }
    }

    /// `v+`, the item the user picked.
    pub fn selected(&self) -> usize {
        match self.label {
            Label::First => self.a,
            Label::Second => self.b,
        }
    }

    /// `v−`, the item the user passed over.
    pub fn rejected(&self) -> usize {
        match self.label {
            Label::First => self.b,
            Label::Second => self.a,
        }
    }
}

/// The initial query: either one vector per space, or precomputed scores
/// (one per item) standing in for the mean cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Vectors(Vec<Vec<f32>>),
    Scores(Vec<f64>),
}

/// One completed interaction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub display: Display,
    pub labels: Vec<Label>,
    /// State embedding `v_s` of each space at the time the display was shown.
    pub state_embeddings: Vec<Vec<f32>>,
}

impl HistoryEntry {
    pub fn judgments(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.display
            .pairs
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| Judgment::new(p.a, p.b, l))
    }
}

/// Rank of an item together with whether it is still a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankInfo {
    /// 1-based rank; `N` for pruned items.
    pub rank: usize,
    pub active: bool,
}

/// Probability distribution over candidates plus the interaction history.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    probs: Vec<f64>,
    active: Vec<bool>,
    active_list: Vec<usize>,
    step: usize,
    history: Vec<HistoryEntry>,
    target: Option<usize>,
}

/// Descending probability, ascending index on ties.
#[inline]
fn by_prob(probs: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b))
}

impl SessionState {
    /// Rebuilds a state from stored parts (e.g. a snapshot).
    pub fn from_parts(
        probs: Vec<f64>,
        active: Vec<bool>,
        history: Vec<HistoryEntry>,
        target: Option<usize>,
    ) -> Result<Self> {
        if probs.len() != active.len() {
            return Err(Error::LengthMismatch {
                what: "active mask",
                expected: probs.len(),
                actual: active.len(),
            });
        }
        let active_list: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        if active_list.is_empty() {
            return Err(Error::InvalidParam("no active candidates".into()));
        }
        for (i, (&p, &on)) in probs.iter().zip(&active).enumerate() {
            if !(p >= 0.0 && p.is_finite()) || (!on && p != 0.0) {
                return Err(Error::InvalidParam(alloc::format!("invalid probability at {i}")));
            }
        }
        if let Some(t) = target {
            if t >= probs.len() {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    len: probs.len(),
                });
            }
        }
        let step = history.len();
        let mut state = Self {
            probs,
            active,
            active_list,
            step,
            history,
            target,
        };
        state.renormalize()?;
        Ok(state)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.get(i).copied().unwrap_or(false)
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Active item indices in ascending order.
    pub fn active_items(&self) -> &[usize] {
        &self.active_list
    }

    pub fn active_count(&self) -> usize {
        self.active_list.len()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    pub fn set_target(&mut self, target: Option<usize>) {
        self.target = target;
    }

    /// The `k` most probable active items, best first.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let k = k.min(self.active_list.len());
        if k == 0 {
            return Vec::new();
        }
        let mut items = self.active_list.clone();
        let cmp = by_prob(&self.probs);
        if k < items.len() {
            items.select_nth_unstable_by(k - 1, &cmp);
            items.truncate(k);
        }
        items.sort_unstable_by(&cmp);
        items
    }

    pub fn rank_of(&self, item: usize) -> RankInfo {
        rank_of(self, item)
    }

    fn check_judgment(&self, j: &Judgment) -> Result<()> {
        for i in [j.a, j.b] {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            if !self.active[i] {
                return Err(Error::InactiveItem(i));
            }
        }
        if j.a == j.b {
            return Err(Error::DegeneratePair(j.a));
        }
        Ok(())
    }

    fn renormalize(&mut self) -> Result<()> {
        let total: f64 = self.active_list.iter().map(|&i| self.probs[i]).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Underflow);
        }
        for &i in &self.active_list {
            self.probs[i] /= total;
        }
        Ok(())
    }
}

/// Builds `P^0 ∝ exp(score_i / τ)` from the initial query, where `score_i` is
/// the mean cosine similarity over spaces. With `n_prune > 0` only the top
/// `n_prune` items of that ranking stay active.
pub fn init_session(corpus: &Corpus, query: &Query, params: &Hyperparams) -> Result<SessionState> {
    params.validate()?;
    let n = corpus.len();
    let scores = match query {
        Query::Vectors(v) => corpus.mean_similarity_to_all(v)?,
        Query::Scores(s) => {
            if s.len() != n {
                return Err(Error::LengthMismatch {
                    what: "query scores",
                    expected: n,
                    actual: s.len(),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParam("query scores must be finite".into()));
            }
            s.clone()
        }
    };
    init_from_scores(&scores, params)
}

/// [`init_session`] for callers that already hold the score vector.
pub fn init_from_scores(scores: &[f64], params: &Hyperparams) -> Result<SessionState> {
    params.validate()?;
    let n = scores.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty corpus".into()));
    }
    let tau = params.init_temperature;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|&s| libm::exp((s - max) / tau)).collect();

    let mut active = vec![true; n];
    if params.n_prune > 0 && params.n_prune < n {
        let mut order: Vec<usize> = (0..n).collect();
        let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
        order.select_nth_unstable_by(params.n_prune - 1, cmp);
        active.iter_mut().for_each(|a| *a = false);
        for &i in &order[..params.n_prune] {
            active[i] = true;
        }
        for (p, &on) in probs.iter_mut().zip(&active) {
            if !on {
                *p = 0.0;
            }
        }
    }
    let active_list = (0..n).filter(|&i| active[i]).collect();
    let mut state = SessionState {
        probs,
        active,
        active_list,
        step: 0,
        history: Vec::new(),
        target: None,
    };
    state.renormalize()?;
    Ok(state)
}

fn check_confidences(judgments: &[Judgment], confidences: &[f64]) -> Result<()> {
    if confidences.len() != judgments.len() {
        return Err(Error::LengthMismatch {
            what: "confidences",
            expected: judgments.len(),
            actual: confidences.len(),
        });
    }
    if let Some(&c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidConfidence(c));
    }
    Ok(())
}

/// Adds `Σ_j sigmoid(c_j / ρ · (v_j+ − v_j−) · v_i)` into `out[i]` for every
/// active `i`. Inputs must already be validated.
fn accumulate_temporal(
    state: &SessionState,
    judgments: &[Judgment],
    confidences: &[f64],
    space: &EmbeddingSpace,
    rho: f64,
    out: &mut [f64],
) {
    let dim = space.dim();
    let mut diffs = vec![0.0f64; judgments.len() * dim];
    for (j, d) in judgments.iter().zip(diffs.chunks_exact_mut(dim)) {
        let (plus, minus) = (space.row(j.selected()), space.row(j.rejected()));
        for ((d, &p), &m) in d.iter_mut().zip(plus).zip(minus) {
            *d = p as f64 - m as f64;
        }
    }
    let scales: Vec<f64> = confidences.iter().map(|&c| c / rho).collect();
    for &i in state.active_items() {
        let row = space.row(i);
        let mut acc = 0.0;
        for (d, &k) in diffs.chunks_exact(dim).zip(&scales) {
            acc += sigmoid(k * dot_mixed(d, row));
        }
        out[i] += acc;
    }
}

/// Confidence-weighted temporal factor of one space, zero on inactive items.
pub fn temporal_soft(
    state: &SessionState,
    judgments: &[Judgment],
    confidences: &[f64],
    space: &EmbeddingSpace,
    rho: f64,
) -> Result<Vec<f64>> {
    if judgments.is_empty() {
        return Err(Error::NoJudgments);
    }
    check_confidences(judgments, confidences)?;
    if space.len() != state.len() {
        return Err(Error::ItemCountMismatch {
            space: space.id().into(),
            expected: state.len(),
            actual: space.len(),
        });
    }
    for j in judgments {
        state.check_judgment(j)?;
    }
    let mut out = vec![0.0; state.len()];
    accumulate_temporal(state, judgments, confidences, space, rho, &mut out);
    Ok(out)
}

/// Unweighted temporal factor (every confidence equal to one).
pub fn temporal_hard(
    state: &SessionState,
    judgments: &[Judgment],
    space: &EmbeddingSpace,
    rho: f64,
) -> Result<Vec<f64>> {
    let ones = vec![1.0; judgments.len()];
    temporal_soft(state, judgments, &ones, space, rho)
}

/// Sums the per-space factors, multiplies them into `P`, renormalises, and
/// records `entry` as the step just taken.
pub fn apply_update(
    state: &mut SessionState,
    per_space_temporals: &[Vec<f64>],
    entry: HistoryEntry,
) -> Result<()> {
    if per_space_temporals.is_empty() {
        return Err(Error::InvalidParam("at least one temporal vector is required".into()));
    }
    let n = state.len();
    let mut total = vec![0.0; n];
    for t in per_space_temporals {
        if t.len() != n {
            return Err(Error::LengthMismatch {
                what: "temporal vector",
                expected: n,
                actual: t.len(),
            });
        }
        for &i in state.active_items() {
            if !(t[i] > 0.0 && t[i].is_finite()) {
                return Err(Error::NonPositiveTemporal(i));
            }
            total[i] += t[i];
        }
    }
    multiply_and_record(state, &total, entry)
}

fn multiply_and_record(state: &mut SessionState, factor: &[f64], entry: HistoryEntry) -> Result<()> {
    let mut next = state.probs.clone();
    for &i in &state.active_list {
        next[i] *= factor[i];
    }
    let total: f64 = state.active_list.iter().map(|&i| next[i]).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Underflow);
    }
    for &i in &state.active_list {
        next[i] /= total;
    }
    state.probs = next;
    state.step += 1;
    state.history.push(entry);
    Ok(())
}

/// One full update: per-space soft factors summed over spaces and applied.
/// `confidences[f][j]` weights judgment `j` in space `f`.
pub fn update_step(
    state: &mut SessionState,
    corpus: &Corpus,
    judgments: &[Judgment],
    confidences: &[Vec<f64>],
    rho: f64,
    entry: HistoryEntry,
) -> Result<()> {
    if judgments.is_empty() {
        return Err(Error::NoJudgments);
    }
    if confidences.len() != corpus.num_spaces() {
        return Err(Error::LengthMismatch {
            what: "per-space confidences",
            expected: corpus.num_spaces(),
            actual: confidences.len(),
        });
    }
    if corpus.len() != state.len() {
        return Err(Error::LengthMismatch {
            what: "corpus size",
            expected: state.len(),
            actual: corpus.len(),
        });
    }
    for j in judgments {
        state.check_judgment(j)?;
    }
    let mut total = vec![0.0; state.len()];
    for (space, c) in corpus.spaces().iter().zip(confidences) {
        check_confidences(judgments, c)?;
        accumulate_temporal(state, judgments, c, space, rho, &mut total);
    }
    multiply_and_record(state, &total, entry)
}

/// 1-based rank by descending probability, ties broken by ascending index.
/// Inactive items report rank `N` with `active = false`.
pub fn rank_of(state: &SessionState, item: usize) -> RankInfo {
    if !state.is_active(item) {
        return RankInfo {
            rank: state.len(),
            active: false,
        };
    }
    let p = state.probs[item];
    let better = state
        .active_list
        .iter()
        .filter(|&&j| {
            let q = state.probs[j];
            q > p || (q == p && j < item)
        })
        .count();
    RankInfo {
        rank: better + 1,
        active: true,
    }
}
