use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;

use super::model::Predictor;
use super::train::Episode;
use crate::rng::seeded;
use crate::{Error, Result};

/// Denominator floor for the relative error, so near-zero gradients are
/// compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter offsets that were compared.
    pub checked: Vec<usize>,
    pub worst: Option<usize>,
}

/// Compares backpropagated gradients with central differences on a sample of
/// parameters. Runs in f64 on a copy of the predictor, without dropout.
pub fn gradient_check(
    predictor: &Predictor<f32>,
    episode: &Episode,
    t: usize,
    epsilon: f64,
    max_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    if !(1e-5..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidParam("epsilon must be in [1e-5, 1e-3]".into()));
    }
    if t == 0 || t > episode.steps.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: episode.steps.len(),
        });
    }
    let candidates: Vec<usize> = (0..predictor.num_params()).filter(|&i| predictor.trainable(i)).collect();
    let take = max_params.min(1000).min(candidates.len());
    let mut rng = seeded(seed);
    let mut checked: Vec<usize> = index::sample(&mut rng, candidates.len(), take).into_iter().map(|k| candidates[k]).collect();
    checked.sort_unstable();
    gradient_check_params(predictor, episode, t, epsilon, checked)
}

/// [`gradient_check`] over an explicit list of parameter offsets.
pub fn gradient_check_params(
    predictor: &Predictor<f32>,
    episode: &Episode,
    t: usize,
    epsilon: f64,
    checked: Vec<usize>,
) -> Result<GradCheck> {
    if !(1e-5..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidParam("epsilon must be in [1e-5, 1e-3]".into()));
    }
    if t == 0 || t > episode.steps.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: episode.steps.len(),
        });
    }
    if let Some(&i) = checked.iter().find(|&&i| i >= predictor.num_params()) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: predictor.num_params(),
        });
    }
    let mut model: Predictor<f64> = predictor.cast();
    let input = episode.input(t);
    let labels = &episode.labels[t - 1];
    let mut grads = vec![0.0f64; model.num_params()];
    model.loss_and_grad(&input, labels, 1.0, &mut grads, None)?;

    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    for &i in &checked {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + epsilon;
        let up = model.loss(&input, labels)?;
        model.params_mut()[i] = orig - epsilon;
        let down = model.loss(&input, labels)?;
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = Some(i);
        }
    }
    Ok(GradCheck {
        max_rel_error,
        checked,
        worst,
    })
}
