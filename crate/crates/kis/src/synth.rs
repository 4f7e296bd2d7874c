//! Synthetic corpora with controlled agreement between embedding spaces, and
//! query sets whose targets start at chosen depths of the initial ranking.
//!
//! Item `i` in space `f` is `normalize(√ρ·z_i + √(1−ρ)·u_i^f)` with shared
//! `z_i` and per-space `u_i^f`, all standard Gaussian. For a random pair and
//! a random target the per-space score differences then have correlation
//! close to `ρ²`, so the chance that two spaces pick the same item is about
//! `1 − arccos(ρ²)/π`.

use kis_core::{Corpus, EmbeddingSpace};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_items: usize,
    pub num_spaces: usize,
    pub dim: usize,
    /// `ρ_corr ∈ [0, 1]`; 1 makes every space identical.
    pub correlation: f64,
    /// Query noise for uncalibrated queries.
    pub query_noise: f64,
    pub seed: u64,
    /// Spread of per-item, per-space reliability. Item `i` in space `f` mixes
    /// with weight `ρ^exp(spread·g)`, `g ~ N(0, 1)`, instead of `ρ`; 0 gives
    /// every item the same weight.
    #[serde(default)]
    pub reliability_spread: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_items: 10_000,
            num_spaces: 3,
            dim: 64,
            correlation: 0.7,
            query_noise: 0.5,
            seed: 0,
            reliability_spread: 0.0,
        }
    }
}

/// Initial-rank intervals `(lo, hi]` used to stratify evaluation targets.
pub const BUCKETS: [(usize, usize); 5] = [(10, 50), (50, 100), (100, 500), (500, 1000), (1000, 5000)];

pub fn bucket_label(b: usize) -> String {
    let (lo, hi) = BUCKETS[b];
    format!("({lo},{hi}]")
}

pub fn bucket_of(rank: usize) -> Option<usize> {
    BUCKETS.iter().position(|&(lo, hi)| rank > lo && rank <= hi)
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.n_items == 0 || spec.num_spaces == 0 || spec.dim == 0 {
        return Err(Error::Invalid("n_items, num_spaces and dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.correlation) {
        return Err(Error::Invalid(format!("correlation must be in [0, 1], got {}", spec.correlation)));
    }
    if !(spec.reliability_spread >= 0.0 && spec.reliability_spread.is_finite()) {
        return Err(Error::Invalid("reliability_spread must be finite and ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![Vec::with_capacity(spec.n_items * spec.dim); spec.num_spaces];
    for _ in 0..spec.n_items {
        let z = gaussian(&mut rng, spec.dim);
        for space in data.iter_mut() {
            let rho = if spec.reliability_spread > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                spec.correlation.powf((spec.reliability_spread * g).exp())
            } else {
                spec.correlation
            };
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            let u = gaussian(&mut rng, spec.dim);
            let v: Vec<f64> = z.iter().zip(&u).map(|(z, u)| a * z + b * u).collect();
            space.extend(normalized(&v));
        }
    }
    let spaces = data
        .into_iter()
        .enumerate()
        .map(|(f, d)| EmbeddingSpace::from_rows(format!("s{f}"), spec.dim, d))
        .collect::<kis_core::Result<Vec<_>>>()?;
    Ok(Corpus::from_spaces(spaces)?)
}

/// `normalize(row + σ·n)` per space, with `n ~ N(0, I/dim)`.
pub fn noisy_query(corpus: &Corpus, target: usize, sigma: f64, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    corpus
        .spaces()
        .iter()
        .map(|s| {
            let noise = gaussian(rng, s.dim());
            query_from(s.row(target), &noise, sigma)
        })
        .collect()
}

fn query_from(row: &[f32], noise: &[f64], sigma: f64) -> Vec<f32> {
    let scale = sigma / (row.len() as f64).sqrt();
    let v: Vec<f64> = row.iter().zip(noise).map(|(&r, &n)| r as f64 + scale * n).collect();
    normalized(&v)
}

/// Rank of `target` (1-based, ties by index) under mean cosine scores.
pub fn initial_rank(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub target: usize,
    pub bucket: Option<usize>,
    pub initial_rank: usize,
    pub sigma: f64,
    /// One query vector per space.
    pub vectors: Vec<Vec<f32>>,
}

/// Searches for a noise level that puts `target` inside `(lo, hi]`. The noise
/// direction is fixed, only its scale moves; a few directions are tried.
pub fn calibrated_query(corpus: &Corpus, target: usize, lo: usize, hi: usize, rng: &mut impl Rng) -> Result<BenchQuery> {
    const DIRECTIONS: usize = 8;
    const ITERS: usize = 60;
    let n = corpus.len();
    if hi > n || lo >= hi {
        return Err(Error::Invalid(format!("bucket ({lo},{hi}] does not fit a corpus of {n}")));
    }
    let f = corpus.num_spaces();
    for _ in 0..DIRECTIONS {
        let noise: Vec<Vec<f64>> = corpus.spaces().iter().map(|s| gaussian(rng, s.dim())).collect();
        // score_i(σ) = mean_f (a_i + σ' b_i) / ‖t + σ' n‖ with σ' = σ/√dim
        let mut a = vec![vec![0.0; n]; f];
        let mut b = vec![vec![0.0; n]; f];
        let mut tn = vec![0.0; f];
        let mut nn = vec![0.0; f];
        for (k, s) in corpus.spaces().iter().enumerate() {
            let t = s.row(target);
            tn[k] = t.iter().zip(&noise[k]).map(|(&x, y)| x as f64 * y).sum();
            nn[k] = noise[k].iter().map(|y| y * y).sum();
            for i in 0..n {
                let r = s.row(i);
                a[k][i] = r.iter().zip(t).map(|(&x, &y)| x as f64 * y as f64).sum();
                b[k][i] = r.iter().zip(&noise[k]).map(|(&x, y)| x as f64 * y).sum();
            }
        }
        let rank_at = |sigma: f64| -> usize {
            let mut scores = vec![0.0; n];
            for k in 0..f {
                let sp = sigma / (corpus.space(k).dim() as f64).sqrt();
                let norm = (1.0 + 2.0 * sp * tn[k] + sp * sp * nn[k]).sqrt();
                for i in 0..n {
                    scores[i] += (a[k][i] + sp * b[k][i]) / norm;
                }
            }
            initial_rank(&scores, target)
        };
        let mut high = 1.0;
        while rank_at(high) <= lo && high < 1e4 {
            high *= 2.0;
        }
        let mut low = 0.0;
        let goal = ((lo as f64 + 1.0) * hi as f64).sqrt();
        for _ in 0..ITERS {
            let mid = 0.5 * (low + high);
            let r = rank_at(mid);
            if r > lo && r <= hi {
                let vectors: Vec<Vec<f32>> = corpus
                    .spaces()
                    .iter()
                    .zip(&noise)
                    .map(|(s, nz)| query_from(s.row(target), nz, mid))
                    .collect();
                let scores = corpus.mean_similarity_to_all(&vectors)?;
                let exact = initial_rank(&scores, target);
                if exact > lo && exact <= hi {
                    return Ok(BenchQuery {
                        target,
                        bucket: bucket_of(exact),
                        initial_rank: exact,
                        sigma: mid,
                        vectors,
                    });
                }
            }
            if (r as f64) < goal {
                low = mid;
            } else {
                high = mid;
            }
        }
    }
    Err(Error::Invalid(format!(
        "could not place target {target} inside ({lo},{hi}] after {DIRECTIONS} noise directions"
    )))
}

/// `per_bucket` targets for every bucket, each with a calibrated query.
/// Targets are distinct across the whole set.
pub fn bucket_queries(corpus: &Corpus, per_bucket: usize, seed: u64) -> Result<Vec<BenchQuery>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = per_bucket * BUCKETS.len();
    if total > corpus.len() {
        return Err(Error::Invalid(format!("{total} targets requested from {} items", corpus.len())));
    }
    let mut pool = index::sample(&mut rng, corpus.len(), corpus.len().min(total * 2)).into_vec();
    pool.reverse();
    let mut out = Vec::with_capacity(total);
    for &(lo, hi) in &BUCKETS {
        let mut got = 0;
        while got < per_bucket {
            let target = pool
                .pop()
                .ok_or_else(|| Error::Invalid("ran out of candidate targets while calibrating".into()))?;
            match calibrated_query(corpus, target, lo, hi, &mut rng) {
                Ok(q) => {
                    out.push(q);
                    got += 1;
                }
                Err(e) => log::debug!("skipping target {target}: {e}"),
            }
        }
    }
    Ok(out)
}

/// Uncalibrated queries for random targets at noise level `sigma`.
pub fn random_queries(corpus: &Corpus, count: usize, sigma: f64, seed: u64) -> Result<Vec<BenchQuery>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let target = rng.random_range(0..corpus.len());
            let vectors = noisy_query(corpus, target, sigma, &mut rng);
            let scores = corpus.mean_similarity_to_all(&vectors)?;
            let rank = initial_rank(&scores, target);
            Ok(BenchQuery {
                target,
                bucket: bucket_of(rank),
                initial_rank: rank,
                sigma,
                vectors,
            })
        })
        .collect()
}

/// Fraction of (space pair, item pair) combinations where two spaces make the
/// same oracle choice, over random targets and random pairs.
pub fn oracle_agreement(corpus: &Corpus, samples: usize, seed: u64) -> f64 {
    let f = corpus.num_spaces();
    if f < 2 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.len();
    let mut agree = 0usize;
    let mut total = 0usize;
    for _ in 0..samples {
        let picks = index::sample(&mut rng, n, 3);
        let (t, x, y) = (picks.index(0), picks.index(1), picks.index(2));
        let choice: Vec<bool> = corpus
            .spaces()
            .iter()
            .map(|s| s.similarity(y, t).unwrap_or(0.0) > s.similarity(x, t).unwrap_or(0.0))
            .collect();
        for g in 0..f {
            for h in g + 1..f {
                agree += usize::from(choice[g] == choice[h]);
                total += 1;
            }
        }
    }
    agree as f64 / total as f64
}
