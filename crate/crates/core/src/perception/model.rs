use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::PredictorConfig;
use super::ops::{self, Real};
use super::token::{JudgmentToken, DIST_BINS};
use crate::rng::{seeded, SessionRng};
use crate::{Error, Result};

/// Name, shape and offset of one parameter tensor in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIdx {
    ln1: usize,
    qkv: usize,
    proj: usize,
    ln2: usize,
    ff1: usize,
    ff2: usize,
}

/// Offsets of each weight; every bias (or LayerNorm shift) directly follows its weight.
#[derive(Debug, Clone, PartialEq)]
struct Index {
    input: usize,
    query: usize,
    dist: usize,
    step: usize,
    layers: Vec<LayerIdx>,
    lnf: usize,
    head: usize,
}

fn build_layout(cfg: &PredictorConfig) -> (Vec<TensorInfo>, Index, usize) {
    let mut tensors = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let at = offset;
        offset += shape.iter().product::<usize>();
        tensors.push(TensorInfo {
            name,
            shape,
            offset: at,
        });
        at
    };
    let (d, i, ff) = (cfg.model_dim, cfg.input_dim, cfg.ff_dim);
    let input = push("input.weight".into(), vec![d, i]);
    push("input.bias".into(), vec![d]);
    let query = push("query.weight".into(), vec![d, i]);
    push("query.bias".into(), vec![d]);
    let dist = push("distance_embedding".into(), vec![DIST_BINS, d]);
    let step = push("step_embedding".into(), vec![cfg.max_steps + 1, d]);
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut linear = |name: &str, out: usize, inp: usize| {
            let w = push(alloc::format!("layers.{l}.{name}.weight"), vec![out, inp]);
            push(alloc::format!("layers.{l}.{name}.bias"), vec![out]);
            w
        };
        let ln1 = linear("ln1", 1, d);
        let qkv = linear("qkv", 3 * d, d);
        let proj = linear("proj", d, d);
        let ln2 = linear("ln2", 1, d);
        let ff1 = linear("ff1", ff, d);
        let ff2 = linear("ff2", d, ff);
        layers.push(LayerIdx {
            ln1,
            qkv,
            proj,
            ln2,
            ff1,
            ff2,
        });
    }
    let lnf = push("final_norm.weight".into(), vec![1, d]);
    push("final_norm.bias".into(), vec![d]);
    let head = push("head.weight".into(), vec![1, d]);
    push("head.bias".into(), vec![1]);
    // LayerNorm gains are stored as [1, d]; reshape to [d] for readability.
    for t in &mut tensors {
        if t.shape.len() == 2 && t.shape[0] == 1 && !t.name.starts_with("head") {
            t.shape.remove(0);
        }
    }
    (
        tensors,
        Index {
            input,
            query,
            dist,
            step,
            layers,
            lnf,
            head,
        },
        offset,
    )
}

/// The judgments the predictor sees: the query plus every round so far.
/// Confidences are produced for the last round.
#[derive(Debug, Clone, Copy)]
pub struct PredictorInput<'a> {
    pub query: &'a [f32],
    pub steps: &'a [Vec<JudgmentToken>],
}

/// Transformer encoder predicting per-judgment alignment confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<T: Real = f32> {
    config: PredictorConfig,
    tensors: Vec<TensorInfo>,
    index: Index,
    params: Vec<T>,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1: Vec<T>,
    ln1_stats: (Vec<T>, Vec<T>),
    qkv: Vec<T>,
    att: Vec<T>,
    att_out: Vec<T>,
    mask1: Option<Vec<T>>,
    x_mid: Vec<T>,
    ln2: Vec<T>,
    ln2_stats: (Vec<T>, Vec<T>),
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    mask2: Option<Vec<T>>,
}

struct Cache<T> {
    seq: usize,
    query: Vec<T>,
    tokens: Vec<T>,
    bins: Vec<usize>,
    steps: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    x_out: Vec<T>,
    out_start: usize,
    lnf: Vec<T>,
    lnf_stats: (Vec<T>, Vec<T>),
}

fn dropout_mask<T: Real>(len: usize, p: f64, rng: &mut SessionRng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (x, &m) in x.iter_mut().zip(m) {
            *x *= m;
        }
    }
}

impl<T: Real> Predictor<T> {
    /// Fresh predictor with seeded Xavier-uniform weights.
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (tensors, index, total) = build_layout(&config);
        let mut params = vec![T::zero(); total];
        let mut rng = seeded(seed);
        for t in &tensors {
            let slot = &mut params[t.offset..t.offset + t.len()];
            let name = t.name.as_str();
            if name.ends_with(".bias") && !name.starts_with("distance") {
                continue;
            }
            if name.contains("ln") || name.starts_with("final_norm") {
                slot.iter_mut().for_each(|x| *x = T::one());
            } else if name == "distance_embedding" {
                if config.use_distance_embedding {
                    slot.iter_mut().for_each(|x| *x = T::of(rng.random_range(-0.05..0.05)));
                }
            } else if name == "head.weight" {
                // small output layer: untrained confidences start near 0.5
                slot.iter_mut().for_each(|x| *x = T::of(rng.random_range(-0.02..0.02)));
            } else if name == "step_embedding" {
                slot.iter_mut().for_each(|x| *x = T::of(rng.random_range(-0.05..0.05)));
            } else {
                let (fan_out, fan_in) = (t.shape[0], t.shape[1]);
                let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                slot.iter_mut().for_each(|x| *x = T::of(rng.random_range(-a..a)));
            }
        }
        Ok(Self {
            config,
            tensors,
            index,
            params,
        })
    }

    /// Predictor from a stored flat parameter buffer.
    pub fn from_params(config: PredictorConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (tensors, index, total) = build_layout(&config);
        if params.len() != total {
            return Err(Error::LengthMismatch {
                what: "predictor parameters",
                expected: total,
                actual: params.len(),
            });
        }
        Ok(Self {
            config,
            tensors,
            index,
            params,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.offset..t.offset + t.len()])
    }

    pub fn cast<U: Real>(&self) -> Predictor<U> {
        Predictor {
            config: self.config.clone(),
            tensors: self.tensors.clone(),
            index: self.index.clone(),
            params: self.params.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }

    /// Zeroes the output layer, so every confidence is exactly 0.5.
    pub fn zero_head(&mut self) {
        let h = self.index.head;
        let d = self.config.model_dim;
        self.params[h..h + d + 1].iter_mut().for_each(|x| *x = T::zero());
    }

    /// Offsets (into the flat buffer) of parameters that receive gradients.
    pub fn trainable(&self, i: usize) -> bool {
        let dist = self.index.dist;
        self.config.use_distance_embedding || !(dist..dist + DIST_BINS * self.config.model_dim).contains(&i)
    }

    #[inline]
    fn p(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    fn check_input(&self, input: &PredictorInput<'_>) -> Result<usize> {
        let cfg = &self.config;
        if input.steps.is_empty() || input.steps.last().is_some_and(|s| s.is_empty()) {
            return Err(Error::InvalidParam("the predictor needs at least one judged round".into()));
        }
        let seq = 1 + input.steps.iter().map(Vec::len).sum::<usize>();
        if input.steps.len() > cfg.max_steps || seq > cfg.max_sequence() {
            return Err(Error::SequenceOverflow {
                len: seq,
                max: cfg.max_sequence(),
            });
        }
        if input.query.len() != cfg.input_dim {
            return Err(Error::DimMismatch {
                context: "predictor query".into(),
                expected: cfg.input_dim,
                actual: input.query.len(),
            });
        }
        for tok in input.steps.iter().flatten() {
            if tok.v_diff.len() != cfg.input_dim || tok.v_s.len() != cfg.input_dim {
                return Err(Error::DimMismatch {
                    context: "judgment token".into(),
                    expected: cfg.input_dim,
                    actual: tok.v_diff.len().min(tok.v_s.len()),
                });
            }
        }
        Ok(seq)
    }

    fn forward_cached(&self, input: &PredictorInput<'_>, mut rng: Option<&mut SessionRng>) -> Result<(Vec<T>, Cache<T>)> {
        let seq = self.check_input(input)?;
        let cfg = &self.config;
        let (d, id, ff, heads) = (cfg.model_dim, cfg.input_dim, cfg.ff_dim, cfg.heads);
        let ix = &self.index;

        let query: Vec<T> = input.query.iter().map(|&x| T::of(x as f64)).collect();
        let mut tokens = Vec::with_capacity((seq - 1) * id);
        let mut bins = Vec::with_capacity(seq - 1);
        let mut steps = Vec::with_capacity(seq - 1);
        for (k, round) in input.steps.iter().enumerate() {
            for tok in round {
                for (&dv, &sv) in tok.v_diff.iter().zip(&tok.v_s) {
                    let s = if cfg.use_state_embedding { sv as f64 } else { 0.0 };
                    tokens.push(T::of(dv as f64 + s));
                }
                bins.push(tok.dist_bin as usize);
                steps.push(k + 1);
            }
        }

        let mut x = vec![T::zero(); seq * d];
        ops::linear(&mut x[..d], &query, self.p(ix.query, d * id), self.p(ix.query + d * id, d), id, d);
        ops::linear(&mut x[d..], &tokens, self.p(ix.input, d * id), self.p(ix.input + d * id, d), id, d);
        let step_emb = self.p(ix.step, (cfg.max_steps + 1) * d);
        let dist_emb = self.p(ix.dist, DIST_BINS * d);
        for (r, row) in x.chunks_exact_mut(d).enumerate() {
            let k = if r == 0 { 0 } else { steps[r - 1] };
            for (xv, &e) in row.iter_mut().zip(&step_emb[k * d..(k + 1) * d]) {
                *xv += e;
            }
            if r > 0 && cfg.use_distance_embedding {
                let b = bins[r - 1];
                for (xv, &e) in row.iter_mut().zip(&dist_emb[b * d..(b + 1) * d]) {
                    *xv += e;
                }
            }
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &ix.layers {
            let x_in = x.clone();
            let mut ln1 = vec![T::zero(); seq * d];
            let mut ln1_stats = (vec![T::zero(); seq], vec![T::zero(); seq]);
            ops::layernorm(&mut ln1, &mut ln1_stats.0, &mut ln1_stats.1, &x_in, self.p(l.ln1, d), self.p(l.ln1 + d, d), d);
            let mut qkv = vec![T::zero(); seq * 3 * d];
            ops::linear(&mut qkv, &ln1, self.p(l.qkv, 3 * d * d), self.p(l.qkv + 3 * d * d, 3 * d), d, 3 * d);
            let mut att = vec![T::zero(); heads * seq * seq];
            let mut att_out = vec![T::zero(); seq * d];
            ops::attention(&mut att_out, &mut att, &qkv, seq, d, heads);
            let mut proj = vec![T::zero(); seq * d];
            ops::linear(&mut proj, &att_out, self.p(l.proj, d * d), self.p(l.proj + d * d, d), d, d);
            let mask1 = rng.as_deref_mut().filter(|_| cfg.dropout > 0.0).map(|r| dropout_mask(seq * d, cfg.dropout, r));
            apply_mask(&mut proj, &mask1);
            for (xv, &pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }
            let x_mid = x.clone();
            let mut ln2 = vec![T::zero(); seq * d];
            let mut ln2_stats = (vec![T::zero(); seq], vec![T::zero(); seq]);
            ops::layernorm(&mut ln2, &mut ln2_stats.0, &mut ln2_stats.1, &x_mid, self.p(l.ln2, d), self.p(l.ln2 + d, d), d);
            let mut ff_pre = vec![T::zero(); seq * ff];
            ops::linear(&mut ff_pre, &ln2, self.p(l.ff1, ff * d), self.p(l.ff1 + ff * d, ff), d, ff);
            let mut ff_act = vec![T::zero(); seq * ff];
            ops::gelu(&mut ff_act, &ff_pre);
            let mut ff_out = vec![T::zero(); seq * d];
            ops::linear(&mut ff_out, &ff_act, self.p(l.ff2, d * ff), self.p(l.ff2 + d * ff, d), ff, d);
            let mask2 = rng.as_deref_mut().filter(|_| cfg.dropout > 0.0).map(|r| dropout_mask(seq * d, cfg.dropout, r));
            apply_mask(&mut ff_out, &mask2);
            for (xv, &fv) in x.iter_mut().zip(&ff_out) {
                *xv += fv;
            }
            layers.push(LayerCache {
                x_in,
                ln1,
                ln1_stats,
                qkv,
                att,
                att_out,
                mask1,
                x_mid,
                ln2,
                ln2_stats,
                ff_pre,
                ff_act,
                mask2,
            });
        }

        let n_out = input.steps.last().map_or(0, Vec::len);
        let out_start = seq - n_out;
        let mut lnf = vec![T::zero(); n_out * d];
        let mut lnf_stats = (vec![T::zero(); n_out], vec![T::zero(); n_out]);
        ops::layernorm(&mut lnf, &mut lnf_stats.0, &mut lnf_stats.1, &x[out_start * d..], self.p(ix.lnf, d), self.p(ix.lnf + d, d), d);
        let head_w = self.p(ix.head, d);
        let head_b = self.params[ix.head + d];
        let logits = lnf.chunks_exact(d).map(|r| ops::dot(r, head_w) + head_b).collect();
        Ok((
            logits,
            Cache {
                seq,
                query,
                tokens,
                bins,
                steps,
                layers,
                x_out: x,
                out_start,
                lnf,
                lnf_stats,
            },
        ))
    }

    fn backward(&self, cache: &Cache<T>, dlogits: &[T], grads: &mut [T]) {
        let cfg = &self.config;
        let (d, id, ff, heads, seq) = (cfg.model_dim, cfg.input_dim, cfg.ff_dim, cfg.heads, cache.seq);
        let ix = &self.index;
        let mut dx = vec![T::zero(); seq * d];

        {
            let head_w = self.p(ix.head, d);
            let mut dlnf = vec![T::zero(); dlogits.len() * d];
            for ((&g, row), drow) in dlogits.iter().zip(cache.lnf.chunks_exact(d)).zip(dlnf.chunks_exact_mut(d)) {
                ops::axpy(&mut grads[ix.head..ix.head + d], g, row);
                grads[ix.head + d] += g;
                ops::axpy(drow, g, head_w);
            }
            let (dg, db) = grads[ix.lnf..ix.lnf + 2 * d].split_at_mut(d);
            ops::layernorm_backward(
                &mut dx[cache.out_start * d..],
                dg,
                db,
                &dlnf,
                &cache.x_out[cache.out_start * d..],
                &cache.lnf_stats.0,
                &cache.lnf_stats.1,
                self.p(ix.lnf, d),
                d,
            );
        }

        for (l, c) in ix.layers.iter().zip(&cache.layers).rev() {
            // feed-forward branch
            let mut dff_out = dx.clone();
            apply_mask(&mut dff_out, &c.mask2);
            let mut dact = vec![T::zero(); seq * ff];
            {
                let (dw, db) = grads[l.ff2..l.ff2 + d * ff + d].split_at_mut(d * ff);
                ops::linear_backward(Some(&mut dact), dw, db, &dff_out, &c.ff_act, self.p(l.ff2, d * ff), ff, d);
            }
            let mut dpre = vec![T::zero(); seq * ff];
            ops::gelu_backward(&mut dpre, &c.ff_pre, &dact);
            let mut dln2 = vec![T::zero(); seq * d];
            {
                let (dw, db) = grads[l.ff1..l.ff1 + ff * d + ff].split_at_mut(ff * d);
                ops::linear_backward(Some(&mut dln2), dw, db, &dpre, &c.ln2, self.p(l.ff1, ff * d), d, ff);
            }
            {
                let (dg, db) = grads[l.ln2..l.ln2 + 2 * d].split_at_mut(d);
                ops::layernorm_backward(&mut dx, dg, db, &dln2, &c.x_mid, &c.ln2_stats.0, &c.ln2_stats.1, self.p(l.ln2, d), d);
            }
            // attention branch
            let mut dproj = dx.clone();
            apply_mask(&mut dproj, &c.mask1);
            let mut datt_out = vec![T::zero(); seq * d];
            {
                let (dw, db) = grads[l.proj..l.proj + d * d + d].split_at_mut(d * d);
                ops::linear_backward(Some(&mut datt_out), dw, db, &dproj, &c.att_out, self.p(l.proj, d * d), d, d);
            }
            let mut dqkv = vec![T::zero(); seq * 3 * d];
            ops::attention_backward(&mut dqkv, &datt_out, &c.qkv, &c.att, seq, d, heads);
            let mut dln1 = vec![T::zero(); seq * d];
            {
                let (dw, db) = grads[l.qkv..l.qkv + 3 * d * d + 3 * d].split_at_mut(3 * d * d);
                ops::linear_backward(Some(&mut dln1), dw, db, &dqkv, &c.ln1, self.p(l.qkv, 3 * d * d), d, 3 * d);
            }
            {
                let (dg, db) = grads[l.ln1..l.ln1 + 2 * d].split_at_mut(d);
                ops::layernorm_backward(&mut dx, dg, db, &dln1, &c.x_in, &c.ln1_stats.0, &c.ln1_stats.1, self.p(l.ln1, d), d);
            }
        }

        {
            let (dw, db) = grads[ix.query..ix.query + d * id + d].split_at_mut(d * id);
            ops::linear_backward(None, dw, db, &dx[..d], &cache.query, self.p(ix.query, d * id), id, d);
        }
        {
            let (dw, db) = grads[ix.input..ix.input + d * id + d].split_at_mut(d * id);
            ops::linear_backward(None, dw, db, &dx[d..], &cache.tokens, self.p(ix.input, d * id), id, d);
        }
        for (r, drow) in dx.chunks_exact(d).enumerate() {
            let k = if r == 0 { 0 } else { cache.steps[r - 1] };
            let at = ix.step + k * d;
            for (g, &v) in grads[at..at + d].iter_mut().zip(drow) {
                *g += v;
            }
            if r > 0 && cfg.use_distance_embedding {
                let at = ix.dist + cache.bins[r - 1] * d;
                for (g, &v) in grads[at..at + d].iter_mut().zip(drow) {
                    *g += v;
                }
            }
        }
    }

    /// Raw logits for the last round's tokens (inference mode).
    pub fn logits(&self, input: &PredictorInput<'_>) -> Result<Vec<f64>> {
        let (logits, _) = self.forward_cached(input, None)?;
        Ok(logits.into_iter().map(Real::f64).collect())
    }

    /// Confidences in the open interval (0, 1) for the last round's tokens.
    pub fn forward(&self, input: &PredictorInput<'_>) -> Result<Vec<f64>> {
        const EDGE: f64 = 1e-15;
        Ok(self
            .logits(input)?
            .into_iter()
            .map(|z| crate::linalg::sigmoid(z).clamp(EDGE, 1.0 - EDGE))
            .collect())
    }

    /// Summed binary cross-entropy over the last round's tokens; gradients of
    /// `scale × loss` are accumulated into `grads`. Dropout is active when an
    /// RNG is supplied.
    pub fn loss_and_grad(
        &self,
        input: &PredictorInput<'_>,
        labels: &[bool],
        scale: f64,
        grads: &mut [T],
        rng: Option<&mut SessionRng>,
    ) -> Result<f64> {
        let (logits, cache) = self.forward_cached(input, rng)?;
        if labels.len() != logits.len() {
            return Err(Error::LengthMismatch {
                what: "alignment labels",
                expected: logits.len(),
                actual: labels.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                what: "gradient buffer",
                expected: self.params.len(),
                actual: grads.len(),
            });
        }
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(logits.len());
        for (&z, &y) in logits.iter().zip(labels) {
            let z = z.f64();
            let y = if y { 1.0 } else { 0.0 };
            loss += super::train::bce_from_logit(z, y);
            dlogits.push(T::of((crate::linalg::sigmoid(z) - y) * scale));
        }
        self.backward(&cache, &dlogits, grads);
        Ok(loss)
    }

    /// Summed loss only, without dropout.
    pub fn loss(&self, input: &PredictorInput<'_>, labels: &[bool]) -> Result<f64> {
        let logits = self.logits(input)?;
        Ok(logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| super::train::bce_from_logit(z, if y { 1.0 } else { 0.0 }))
            .sum())
    }
}
