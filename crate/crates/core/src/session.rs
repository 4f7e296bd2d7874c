//! The display / feedback / update loop of one search session.
//!
//! [`SearchSession`] is the state machine the service drives one request at a
//! time; [`run_session`] drives the same machine with the simulated user.
//! Every random draw is keyed by `(seed, step, stream)`, so a service session
//! and a harness run with the same seed and labels end in the same state.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::display::{diverse_display, greedy_display, Display, Strategy};
use crate::engine::{init_session, update_step, HistoryEntry, Hyperparams, Judgment, Label, Query, RankInfo, SessionState};
use crate::perception::{encode_pairs, state_embedding, JudgmentToken, Predictor, PredictorInput};
use crate::rng::{derive_seed, step_rng, Stream};
use crate::simulator::{judge, OracleVerdict};
use crate::space::Corpus;
use crate::{Error, Result};

/// How confidences are assigned to each judgment in each space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Every space independently includes or ignores each judgment (`c ∈ {0, 1}`
    /// by a fair coin).
    Random,
    /// Every judgment counts fully in every space (`c = 1`).
    PicHunter,
    /// Confidences come from the per-space perception predictors.
    Ours,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::PicHunter => "pichunter",
            Policy::Ours => "ours",
        }
    }
}

impl core::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "pichunter" => Ok(Policy::PicHunter),
            "ours" => Ok(Policy::Ours),
            other => Err(Error::InvalidParam(alloc::format!("unknown policy {other:?}"))),
        }
    }
}

/// Component removed from the full model.
///
/// `StateRep` and `DistEmb` change the predictors themselves (retrained with
/// the input switched off); `SoftUpd` keeps the predictors and rounds each
/// confidence to 0 or 1 before the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    None,
    SoftUpd,
    StateRep,
    DistEmb,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::SoftUpd => "softupd",
            Ablation::StateRep => "staterep",
            Ablation::DistEmb => "distemb",
        }
    }
}

impl core::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "full" => Ok(Ablation::None),
            "softupd" => Ok(Ablation::SoftUpd),
            "staterep" => Ok(Ablation::StateRep),
            "distemb" => Ok(Ablation::DistEmb),
            other => Err(Error::InvalidParam(alloc::format!("unknown ablation {other:?}"))),
        }
    }
}

/// Source of per-space confidences for one submitted round.
#[derive(Debug, Clone, Copy)]
pub enum Confidences<'a> {
    Policy {
        policy: Policy,
        predictors: &'a [Predictor<f32>],
        threshold: bool,
    },
    /// The simulator's per-space alignment, `verdicts[j].alignment[f]`.
    Oracle(&'a [OracleVerdict]),
    /// Explicit values, indexed `[space][pair]`.
    Given(&'a [Vec<f64>]),
}

impl<'a> Confidences<'a> {
    pub fn pichunter() -> Self {
        Confidences::Policy {
            policy: Policy::PicHunter,
            predictors: &[],
            threshold: false,
        }
    }
}

/// Which display strategy each step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyPlan {
    Greedy,
    Diverse,
    /// Greedy on even steps, diverse on odd ones.
    Alternate,
    /// A fair coin per step.
    Mixed,
}

impl StrategyPlan {
    pub fn at(self, seed: u64, step: usize) -> Strategy {
        match self {
            StrategyPlan::Greedy => Strategy::Greedy,
            StrategyPlan::Diverse => Strategy::Diverse,
            StrategyPlan::Alternate if step % 2 == 0 => Strategy::Greedy,
            StrategyPlan::Alternate => Strategy::Diverse,
            StrategyPlan::Mixed => {
                if step_rng(seed, step, Stream::Strategy).random::<bool>() {
                    Strategy::Diverse
                } else {
                    Strategy::Greedy
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    display: Display,
    state_embeddings: Vec<Vec<f32>>,
}

/// One interactive session over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSession {
    state: SessionState,
    params: Hyperparams,
    seed: u64,
    queries: Option<Vec<Vec<f32>>>,
    /// Judgment tokens per space, per completed round.
    tokens: Vec<Vec<Vec<JudgmentToken>>>,
    pending: Option<Pending>,
}

impl SearchSession {
    pub fn new(corpus: &Corpus, query: &Query, params: Hyperparams, seed: u64) -> Result<Self> {
        let state = init_session(corpus, query, &params)?;
        let queries = match query {
            Query::Vectors(v) => Some(v.clone()),
            Query::Scores(_) => None,
        };
        Ok(Self {
            state,
            params,
            seed,
            queries,
            tokens: vec![Vec::new(); corpus.num_spaces()],
            pending: None,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SessionState {
        &mut self.state
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> usize {
        self.state.step()
    }

    pub fn is_finished(&self) -> bool {
        self.state.step() >= self.params.max_steps
    }

    pub fn pending_display(&self) -> Option<&Display> {
        self.pending.as_ref().map(|p| &p.display)
    }

    /// The display for the current step. Once drawn it is cached until
    /// feedback arrives, so repeated calls return the same pairs.
    pub fn next_display(&mut self, corpus: &Corpus, strategy: Strategy) -> Result<&Display> {
        if self.is_finished() {
            return Err(Error::StepLimit(self.params.max_steps));
        }
        if self.pending.is_none() {
            let seed = derive_seed(self.seed, self.state.step(), Stream::Display);
            let display = match strategy {
                Strategy::Greedy => greedy_display(&self.state, self.params.num_pairs, seed)?,
                Strategy::Diverse => diverse_display(&self.state, self.params.num_pairs, self.params.n_display, seed)?,
            };
            let state_embeddings = corpus.spaces().iter().map(|s| state_embedding(&self.state, s)).collect();
            self.pending = Some(Pending {
                display,
                state_embeddings,
            });
        }
        Ok(&self.pending.as_ref().expect("pending display was just set").display)
    }

    /// Applies labels for the pending display. Returns the confidences used,
    /// indexed `[space][pair]`.
    pub fn submit(&mut self, corpus: &Corpus, labels: &[Label], source: Confidences<'_>) -> Result<Vec<Vec<f64>>> {
        let pending = self.pending.clone().ok_or(Error::NoPendingDisplay)?;
        if labels.len() != pending.display.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: pending.display.len(),
                actual: labels.len(),
            });
        }
        let judgments: Vec<Judgment> = pending
            .display
            .pairs
            .iter()
            .zip(labels)
            .map(|(p, &l)| Judgment::new(p.a, p.b, l))
            .collect();
        let round: Vec<Vec<JudgmentToken>> = corpus
            .spaces()
            .iter()
            .zip(&pending.state_embeddings)
            .map(|(s, v_s)| encode_pairs(s, v_s, &judgments))
            .collect();
        let confidences = self.confidences(&judgments, &round, source)?;
        let entry = HistoryEntry {
            display: pending.display,
            labels: labels.to_vec(),
            state_embeddings: pending.state_embeddings,
        };
        update_step(&mut self.state, corpus, &judgments, &confidences, self.params.rho, entry)?;
        for (all, r) in self.tokens.iter_mut().zip(round) {
            all.push(r);
        }
        self.pending = None;
        Ok(confidences)
    }

    fn confidences(&mut self, judgments: &[Judgment], round: &[Vec<JudgmentToken>], source: Confidences<'_>) -> Result<Vec<Vec<f64>>> {
        let f = round.len();
        let n = judgments.len();
        match source {
            Confidences::Oracle(verdicts) => {
                if verdicts.len() != n {
                    return Err(Error::LengthMismatch {
                        what: "verdicts",
                        expected: n,
                        actual: verdicts.len(),
                    });
                }
                (0..f)
                    .map(|s| {
                        verdicts
                            .iter()
                            .map(|v| {
                                v.alignment.get(s).map(|&y| if y { 1.0 } else { 0.0 }).ok_or(Error::LengthMismatch {
                                    what: "alignment",
                                    expected: f,
                                    actual: v.alignment.len(),
                                })
                            })
                            .collect()
                    })
                    .collect()
            }
            Confidences::Given(c) => {
                if c.len() != f {
                    return Err(Error::LengthMismatch {
                        what: "per-space confidences",
                        expected: f,
                        actual: c.len(),
                    });
                }
                Ok(c.to_vec())
            }
            Confidences::Policy {
                policy: Policy::PicHunter,
                ..
            } => Ok(vec![vec![1.0; n]; f]),
            Confidences::Policy {
                policy: Policy::Random,
                ..
            } => {
                let mut rng = step_rng(self.seed, self.state.step(), Stream::Coin);
                Ok((0..f)
                    .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect())
                    .collect())
            }
            Confidences::Policy {
                policy: Policy::Ours,
                predictors,
                threshold,
            } => {
                if predictors.len() != f {
                    return Err(Error::MissingPredictor(predictors.len()));
                }
                let queries = self.queries.as_ref().ok_or(Error::QueryVectorsRequired)?;
                let mut out = Vec::with_capacity(f);
                for s in 0..f {
                    let steps = &mut self.tokens[s];
                    steps.push(round[s].clone());
                    let c = predictors[s].forward(&PredictorInput {
                        query: &queries[s],
                        steps,
                    });
                    steps.pop();
                    let mut c = c?;
                    if threshold {
                        c.iter_mut().for_each(|x| *x = if *x >= 0.5 { 1.0 } else { 0.0 });
                    }
                    out.push(c);
                }
                Ok(out)
            }
        }
    }

    /// Judgment tokens of completed rounds in space `f`.
    pub fn tokens(&self, f: usize) -> &[Vec<JudgmentToken>] {
        &self.tokens[f]
    }

    pub fn queries(&self) -> Option<&[Vec<f32>]> {
        self.queries.as_deref()
    }
}

/// Options for a simulated session.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions<'a> {
    pub policy: Policy,
    pub predictors: &'a [Predictor<f32>],
    pub ablation: Ablation,
    pub strategy: StrategyPlan,
    /// Probability of flipping the simulated majority label.
    pub label_noise: f64,
    /// Weight each judgment by the oracle's per-space alignment instead of the
    /// policy (used to generate training trajectories).
    pub oracle_confidences: bool,
}

impl<'a> RunOptions<'a> {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            predictors: &[],
            ablation: Ablation::None,
            strategy: StrategyPlan::Greedy,
            label_noise: 0.0,
            oracle_confidences: false,
        }
    }

    pub fn with_predictors(mut self, predictors: &'a [Predictor<f32>]) -> Self {
        self.predictors = predictors;
        self
    }
}

/// One simulated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub display: Display,
    pub labels: Vec<Label>,
    /// `alignment[j][f]`: whether space `f` agreed with judgment `j`.
    pub alignment: Vec<Vec<bool>>,
    pub state_embeddings: Vec<Vec<f32>>,
    /// Rank of the target after the update.
    pub rank: RankInfo,
}

/// Target rank before feedback and after every step taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrace {
    pub target: usize,
    pub initial: RankInfo,
    pub steps: Vec<StepLog>,
}

impl RankTrace {
    /// Rank after `step` rounds; sessions that stopped early keep their last rank.
    pub fn rank_at(&self, step: usize) -> usize {
        if step == 0 || self.steps.is_empty() {
            return self.initial.rank;
        }
        self.steps[step.min(self.steps.len()) - 1].rank.rank
    }

    pub fn ranks(&self) -> Vec<usize> {
        core::iter::once(self.initial.rank).chain(self.steps.iter().map(|s| s.rank.rank)).collect()
    }

    /// First step at which the target reached rank 1.
    pub fn hit_step(&self) -> Option<usize> {
        (0..=self.steps.len()).find(|&t| self.rank_at(t) == 1)
    }
}

/// Runs a simulated session for `target` until it reaches rank 1 or
/// `max_steps` rounds have been judged.
pub fn run_session(
    corpus: &Corpus,
    target: usize,
    query: &Query,
    params: &Hyperparams,
    seed: u64,
    options: &RunOptions<'_>,
) -> Result<RankTrace> {
    corpus.check_index(target)?;
    if !(0.0..=1.0).contains(&options.label_noise) {
        return Err(Error::InvalidParam("label_noise must be in [0, 1]".into()));
    }
    if options.policy == Policy::Ours && !options.oracle_confidences && options.predictors.len() != corpus.num_spaces() {
        return Err(Error::MissingPredictor(options.predictors.len()));
    }
    let mut session = SearchSession::new(corpus, query, params.clone(), seed)?;
    session.state_mut().set_target(Some(target));
    let initial = session.state().rank_of(target);
    let mut trace = RankTrace {
        target,
        initial,
        steps: Vec::new(),
    };
    let mut rank = initial;
    while rank.rank != 1 && !session.is_finished() {
        let step = session.step();
        let mut strategy = options.strategy.at(seed, step);
        if strategy == Strategy::Diverse && session.state().active_count() < params.n_display {
            strategy = Strategy::Greedy;
        }
        let display = session.next_display(corpus, strategy)?.clone();
        let mut noise = step_rng(seed, step, Stream::LabelNoise);
        let mut verdicts = Vec::with_capacity(display.len());
        for &pair in &display.pairs {
            let v = judge(corpus, pair, target)?;
            let v = if options.label_noise > 0.0 && noise.random::<f64>() < options.label_noise {
                let flipped = v.majority.flipped();
                v.with_label(flipped)
            } else {
                v
            };
            verdicts.push(v);
        }
        let labels: Vec<Label> = verdicts.iter().map(|v| v.majority).collect();
        let source = if options.oracle_confidences {
            Confidences::Oracle(&verdicts)
        } else {
            Confidences::Policy {
                policy: options.policy,
                predictors: options.predictors,
                threshold: options.ablation == Ablation::SoftUpd,
            }
        };
        session.submit(corpus, &labels, source)?;
        rank = session.state().rank_of(target);
        let entry = session.state().history().last().expect("a round was just recorded");
        trace.steps.push(StepLog {
            display,
            labels,
            alignment: verdicts.into_iter().map(|v| v.alignment).collect(),
            state_embeddings: entry.state_embeddings.clone(),
            rank,
        });
    }
    Ok(trace)
}
