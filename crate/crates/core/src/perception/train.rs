use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Predictor, PredictorInput};
use super::token::JudgmentToken;
use crate::rng::seeded;
use crate::{Error, Result};

/// One recorded search session, seen through a single embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub query: Vec<f32>,
    pub steps: Vec<Vec<JudgmentToken>>,
    /// Per round, whether each judgment agreed with this space.
    pub labels: Vec<Vec<bool>>,
}

impl Episode {
    pub fn input(&self, t: usize) -> PredictorInput<'_> {
        PredictorInput {
            query: &self.query,
            steps: &self.steps[..t],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                what: "episode rounds",
                expected: self.steps.len(),
                actual: self.labels.len(),
            });
        }
        for (s, l) in self.steps.iter().zip(&self.labels) {
            if s.len() != l.len() {
                return Err(Error::LengthMismatch {
                    what: "episode labels",
                    expected: s.len(),
                    actual: l.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of episodes held out for validation loss.
    pub validation_fraction: f64,
    /// Restore the parameters of the epoch with the lowest validation loss.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            validation_fraction: 0.1,
            keep_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-judgment loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_episodes: usize,
    pub val_episodes: usize,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of judgments where `c ≥ 0.5` matches the alignment label.
    pub accuracy: f64,
    /// Accuracy of always predicting the more frequent label.
    pub majority_rate: f64,
    pub mean_loss: f64,
    /// Area under the ROC curve of the confidences; `None` when only one
    /// label occurs.
    pub auc: Option<f64>,
    pub judgments: usize,
}

/// Mann-Whitney AUC with tied scores counted as one half.
pub fn auc(scored: &mut [(f64, bool)]) -> Option<f64> {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = scored.iter().filter(|x| x.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // average 1-based rank of the tie group
        let r = (i + j + 1) as f64 / 2.0;
        rank_sum += r * scored[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Binary cross-entropy of a logit against a 0/1 target, without overflow.
pub(crate) fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + libm::log1p(libm::exp(-z.abs()))
}

/// Binary cross-entropy of a confidence against a label.
pub fn bce(confidence: f64, label: bool) -> f64 {
    let c = confidence.clamp(1e-15, 1.0 - 1e-15);
    if label {
        -libm::log(c)
    } else {
        -libm::log1p(-c)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            let upd = lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
            *p = (*p as f64 - upd) as f32;
        }
    }
}

fn samples(episodes: &[Episode]) -> Vec<(usize, usize)> {
    episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (1..=ep.steps.len()).filter(move |&t| !ep.steps[t - 1].is_empty()).map(move |t| (e, t)))
        .collect()
}

fn mean_loss(predictor: &Predictor<f32>, episodes: &[Episode], idx: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(e, t) in idx {
        let ep = &episodes[e];
        total += predictor.loss(&ep.input(t), &ep.labels[t - 1])?;
        count += ep.labels[t - 1].len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains `predictor` in place with Adam on per-judgment binary cross-entropy.
/// Each (episode, round) prefix is one sample.
pub fn train(predictor: &mut Predictor<f32>, episodes: &[Episode], config: &TrainConfig) -> Result<TrainReport> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidParam("batch_size and learning_rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::InvalidParam("validation_fraction must be in [0, 1)".into()));
    }
    for ep in episodes {
        ep.validate()?;
    }
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (episodes.len() as f64 * config.validation_fraction) as usize;
    let (val_eps, train_eps) = order.split_at(n_val);
    let pick = |ids: &[usize]| -> Vec<(usize, usize)> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        samples(episodes).into_iter().filter(|(e, _)| ids.binary_search(e).is_ok()).collect()
    };
    let mut train_idx = pick(train_eps);
    let val_idx = pick(val_eps);
    if train_idx.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let n = predictor.num_params();
    let trainable: Vec<bool> = (0..n).map(|i| predictor.trainable(i)).collect();
    let mut adam = Adam::new(n);
    let mut scratch = vec![0.0f32; n];
    let mut grads = vec![0.0f64; n];
    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        train_episodes: train_eps.len(),
        val_episodes: val_eps.len(),
        best_epoch: None,
    };
    let mut best: Option<(f64, Vec<f32>)> = None;

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for (b, batch) in train_idx.chunks(config.batch_size).enumerate() {
            let judgments: usize = batch.iter().map(|&(e, t)| episodes[e].labels[t - 1].len()).sum();
            let scale = 1.0 / judgments as f64;
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &(e, t) in batch {
                let ep = &episodes[e];
                scratch.iter_mut().for_each(|g| *g = 0.0);
                batch_loss += predictor.loss_and_grad(&ep.input(t), &ep.labels[t - 1], scale, &mut scratch, Some(&mut rng))?;
                for (g, &s) in grads.iter_mut().zip(&scratch) {
                    *g += s as f64;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            for (g, &on) in grads.iter_mut().zip(&trainable) {
                if !on {
                    *g = 0.0;
                }
            }
            adam.step(predictor.params_mut(), &grads, config.learning_rate);
            epoch_loss += batch_loss;
            epoch_count += judgments;
        }
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(mean_loss(predictor, episodes, &val_idx)?)
        };
        if let (true, Some(v)) = (config.keep_best, val_loss) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, predictor.params().to_vec()));
                report.best_epoch = Some(epoch);
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / epoch_count.max(1) as f64,
            val_loss,
        });
    }
    if let Some((_, params)) = best {
        predictor.params_mut().copy_from_slice(&params);
    }
    Ok(report)
}

/// Thresholded accuracy of the predictor on every round of `episodes`.
pub fn evaluate_episodes(predictor: &Predictor<f32>, episodes: &[Episode]) -> Result<EvalMetrics> {
    let mut correct = 0usize;
    let mut positives = 0usize;
    let mut total = 0usize;
    let mut loss = 0.0;
    let mut scored = Vec::new();
    for ep in episodes {
        ep.validate()?;
        for t in 1..=ep.steps.len() {
            if ep.steps[t - 1].is_empty() {
                continue;
            }
            let conf = predictor.forward(&ep.input(t))?;
            for (&c, &y) in conf.iter().zip(&ep.labels[t - 1]) {
                correct += usize::from((c >= 0.5) == y);
                positives += usize::from(y);
                loss += bce(c, y);
                scored.push((c, y));
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let p = positives as f64 / total as f64;
    Ok(EvalMetrics {
        accuracy: correct as f64 / total as f64,
        majority_rate: p.max(1.0 - p),
        mean_loss: loss / total as f64,
        auc: auc(&mut scored),
        judgments: total,
    })
}
