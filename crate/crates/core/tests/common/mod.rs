//! Shared by the core property tests and the workspace acceptance run: a
//! scalar re-implementation of the posterior update, and invariant checks that
//! take concrete inputs so both random sweeps and proptest can drive them.

#![allow(dead_code)]

use kis_core::display::DIVERSE_BAND;
use kis_core::engine::{init_from_scores, update_step, HistoryEntry};
use kis_core::perception::{dist_bin, Episode, JudgmentToken, DIST_BINS};
use kis_core::rng::seeded;
use kis_core::{
    diverse_display, greedy_display, judge, oracle_choice, temporal_hard, temporal_soft, Confidences, Corpus,
    Display, EmbeddingSpace, Hyperparams, Judgment, Label, Pair, Query, SearchSession, SessionState, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Unit rows per space, built from raw (possibly unnormalised) rows.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub corpus: Corpus,
}

impl Fixture {
    /// `raw[f]` holds `n * dim` values. `None` if some row is zero.
    pub fn from_raw(dim: usize, raw: Vec<Vec<f32>>) -> Option<Self> {
        let spaces = raw
            .into_iter()
            .enumerate()
            .map(|(f, d)| EmbeddingSpace::from_rows(format!("s{f}"), dim, d))
            .collect::<kis_core::Result<Vec<_>>>()
            .ok()?;
        Some(Self {
            corpus: Corpus::from_spaces(spaces).ok()?,
        })
    }

    pub fn random(rng: &mut ChaCha8Rng, n: usize, f: usize, dim: usize) -> Self {
        let raw = (0..f)
            .map(|_| (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        Self::from_raw(dim, raw).expect("random rows are non-zero")
    }

    pub fn n(&self) -> usize {
        self.corpus.len()
    }

    pub fn dim(&self) -> usize {
        self.corpus.space(0).dim()
    }

    /// Stored rows widened to `f64`, indexed `[space][item][k]`.
    pub fn rows(&self) -> Vec<Vec<Vec<f64>>> {
        self.corpus
            .spaces()
            .iter()
            .map(|s| (0..s.len()).map(|i| s.row(i).iter().map(|&x| x as f64).collect()).collect())
            .collect()
    }
}

// ---- scalar oracle ----

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `P^0` and the active mask: softmax of mean cosine over spaces at
/// temperature `tau`, keeping the `n_prune` best items (0 keeps all).
pub fn scalar_prior(rows: &[Vec<Vec<f64>>], query: &[Vec<f32>], tau: f64, n_prune: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rows[0].len();
    let f = rows.len() as f64;
    let mut score = vec![0.0; n];
    for (space, q) in rows.iter().zip(query) {
        let q: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let qn = dot(&q, &q).sqrt();
        for i in 0..n {
            score[i] += dot(&q, &space[i]) / qn / f;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).unwrap().then(a.cmp(&b)));
    let keep = if n_prune == 0 || n_prune >= n { n } else { n_prune };
    let mut active = vec![false; n];
    for &i in &order[..keep] {
        active[i] = true;
    }
    let w: Vec<f64> = (0..n).map(|i| if active[i] { (score[i] / tau).exp() } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    (w.iter().map(|x| x / z).collect(), active)
}

/// One round seen by the oracle: pairs as (selected, rejected) and
/// confidences indexed `[space][pair]`.
#[derive(Debug, Clone)]
pub struct ScalarRound {
    pub judged: Vec<(usize, usize)>,
    pub confidences: Vec<Vec<f64>>,
}

/// `Σ_f Σ_j sigmoid(c_fj (s(v+, v_i) − s(v−, v_i)) / ρ)` for one item.
pub fn scalar_factor(rows: &[Vec<Vec<f64>>], round: &ScalarRound, rho: f64, i: usize) -> f64 {
    let mut total = 0.0;
    for (f, space) in rows.iter().enumerate() {
        for (j, &(plus, minus)) in round.judged.iter().enumerate() {
            let gap = dot(&space[plus], &space[i]) - dot(&space[minus], &space[i]);
            total += logistic(round.confidences[f][j] * gap / rho);
        }
    }
    total
}

/// Posterior after all `rounds`: the prior times the product of per-round
/// factors, normalised once at the end.
pub fn scalar_posterior(rows: &[Vec<Vec<f64>>], prior: &[f64], active: &[bool], rounds: &[ScalarRound], rho: f64) -> Vec<f64> {
    let n = prior.len();
    let mut p: Vec<f64> = (0..n)
        .map(|i| {
            if !active[i] {
                return 0.0;
            }
            rounds.iter().fold(prior[i], |acc, r| acc * scalar_factor(rows, r, rho, i))
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Runs a random session of at most 3 rounds on a corpus with `N ≤ 10` and
/// `F ≤ 2` and returns the largest absolute gap between engine and oracle
/// posteriors over every step (the prior included).
pub fn oracle_equivalence(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=10usize);
    let f = rng.random_range(1..=2usize);
    let dim = rng.random_range(2..=6usize);
    let fx = Fixture::random(&mut rng, n, f, dim);
    let num_pairs = rng.random_range(1..=(n / 2).min(3));
    let n_prune = if rng.random_bool(0.5) { 0 } else { rng.random_range(2 * num_pairs..=n) };
    let params = Hyperparams {
        rho: [0.05, 0.1, 0.3][rng.random_range(0..3)],
        num_pairs,
        n_prune,
        max_steps: 3,
        ..Hyperparams::default()
    };
    let query: Vec<Vec<f32>> = (0..f).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let steps = rng.random_range(1..=3usize);

    let mut session = SearchSession::new(&fx.corpus, &Query::Vectors(query.clone()), params.clone(), seed).map_err(|e| e.to_string())?;
    let rows = fx.rows();
    let (prior, active) = scalar_prior(&rows, &query, params.init_temperature, n_prune);
    let mut worst = max_gap(session.state().probs(), &prior);
    ensure!(session.state().active_mask() == active.as_slice(), "active sets differ");
    let mut rounds = Vec::new();
    for _ in 0..steps {
        let display = session.next_display(&fx.corpus, Strategy::Greedy).map_err(|e| e.to_string())?.clone();
        let labels: Vec<Label> = (0..display.len()).map(|_| if rng.random_bool(0.5) { Label::First } else { Label::Second }).collect();
        let confidences: Vec<Vec<f64>> = (0..f)
            .map(|_| {
                (0..display.len())
                    .map(|_| match rng.random_range(0..4) {
                        0 => 0.0,
                        1 => 1.0,
                        _ => rng.random_range(0.0..=1.0),
                    })
                    .collect()
            })
            .collect();
        session
            .submit(&fx.corpus, &labels, Confidences::Given(&confidences))
            .map_err(|e| e.to_string())?;
        let judged = display
            .pairs
            .iter()
            .zip(&labels)
            .map(|(p, l)| match l {
                Label::First => (p.a, p.b),
                Label::Second => (p.b, p.a),
            })
            .collect();
        rounds.push(ScalarRound { judged, confidences });
        let expect = scalar_posterior(&rows, &prior, &active, &rounds, params.rho);
        worst = worst.max(max_gap(session.state().probs(), &expect));
    }
    Ok(worst)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- invariants ----

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.random_bool(0.5) {
        Label::First
    } else {
        Label::Second
    }
}

fn random_judgments(rng: &mut ChaCha8Rng, state: &SessionState, k: usize) -> Vec<Judgment> {
    let active = state.active_items();
    (0..k)
        .map(|_| {
            let a = active[rng.random_range(0..active.len())];
            let mut b = a;
            while b == a {
                b = active[rng.random_range(0..active.len())];
            }
            Judgment::new(a, b, random_label(rng))
        })
        .collect()
}

fn uniform_state(n: usize) -> SessionState {
    init_from_scores(&vec![0.0; n], &Hyperparams { n_prune: 0, ..Hyperparams::default() }).unwrap()
}

fn entry(judgments: &[Judgment]) -> HistoryEntry {
    HistoryEntry {
        display: Display {
            pairs: judgments.iter().map(|j| Pair { a: j.a, b: j.b }).collect(),
            strategy: Strategy::Greedy,
        },
        labels: judgments.iter().map(|j| j.label).collect(),
        state_embeddings: Vec::new(),
    }
}

/// Up to 7 soft updates with random confidences: `Σ P = 1 ± 1e-6`, `P ≥ 0`,
/// inactive items exactly 0, and step count equal to the history length.
pub fn check_normalization(fx: &Fixture, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = fx.n();
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n_prune = if n > 4 && rng.random_bool(0.5) { rng.random_range(2..n) } else { 0 };
    let mut state = init_from_scores(&scores, &Hyperparams { n_prune, ..Hyperparams::default() }).map_err(|e| e.to_string())?;
    let rho = rng.random_range(0.01..1.0);
    for _ in 0..7 {
        let k = rng.random_range(1..=5);
        let js = random_judgments(&mut rng, &state, k);
        let conf: Vec<Vec<f64>> = (0..fx.corpus.num_spaces())
            .map(|_| js.iter().map(|_| rng.random_range(0.0..=1.0)).collect())
            .collect();
        update_step(&mut state, &fx.corpus, &js, &conf, rho, entry(&js)).map_err(|e| e.to_string())?;
        let sum: f64 = state.probs().iter().sum();
        ensure!((sum - 1.0).abs() <= 1e-6, "probabilities sum to {sum}");
        ensure!(state.probs().iter().all(|&p| p >= 0.0), "negative probability");
        for i in 0..n {
            ensure!(state.is_active(i) || state.probs()[i] == 0.0, "inactive item {i} has mass");
        }
        ensure!(state.step() == state.history().len(), "step {} vs history {}", state.step(), state.history().len());
    }
    Ok(())
}

/// Swapping the pair members while flipping the label names the same
/// selected and rejected items, so `p̂` must be bit-identical. Flipping the
/// label alone on a single pair gives `1 − p̂` per item.
pub fn check_label_flip(fx: &Fixture, a: usize, b: usize, label: Label, c: f64, rho: f64) -> Check {
    let state = uniform_state(fx.n());
    for space in fx.corpus.spaces() {
        let one = temporal_soft(&state, &[Judgment::new(a, b, label)], &[c], space, rho).map_err(|e| e.to_string())?;
        let renamed = temporal_soft(&state, &[Judgment::new(b, a, label.flipped())], &[c], space, rho).map_err(|e| e.to_string())?;
        for i in 0..fx.n() {
            ensure!(one[i].to_bits() == renamed[i].to_bits(), "item {i}: {} vs {}", one[i], renamed[i]);
        }
        let flipped = temporal_soft(&state, &[Judgment::new(a, b, label.flipped())], &[c], space, rho).map_err(|e| e.to_string())?;
        for i in 0..fx.n() {
            ensure!((flipped[i] - (1.0 - one[i])).abs() <= 1e-12, "item {i}: flip gives {} not 1 − {}", flipped[i], one[i]);
        }
    }
    Ok(())
}

/// `c = 1` reproduces the hard update to 1e-12; `c = 0` leaves the ranking
/// after the update identical to the ranking before it.
pub fn check_soft_hard(fx: &Fixture, seed: u64, rho: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..fx.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut state = init_from_scores(&scores, &Hyperparams { n_prune: 0, ..Hyperparams::default() }).unwrap();
    let k = rng.random_range(1..=5);
        let js = random_judgments(&mut rng, &state, k);
    for space in fx.corpus.spaces() {
        let soft = temporal_soft(&state, &js, &vec![1.0; js.len()], space, rho).map_err(|e| e.to_string())?;
        let hard = temporal_hard(&state, &js, space, rho).map_err(|e| e.to_string())?;
        for i in 0..fx.n() {
            ensure!((soft[i] - hard[i]).abs() <= 1e-12, "item {i}: soft {} hard {}", soft[i], hard[i]);
        }
    }
    let before = state.top_k(fx.n());
    let zeros = vec![vec![0.0; js.len()]; fx.corpus.num_spaces()];
    update_step(&mut state, &fx.corpus, &js, &zeros, rho, entry(&js)).map_err(|e| e.to_string())?;
    ensure!(state.top_k(fx.n()) == before, "c = 0 changed the ranking");
    Ok(())
}

/// For one pair, a larger similarity gap never gives a smaller `p̂`, and a
/// strictly larger gap gives a strictly larger `p̂` unless the sigmoid is
/// within a few ulps of 1, where nearby arguments round to the same value.
pub fn check_monotonicity(fx: &Fixture, a: usize, b: usize, label: Label, c: f64, rho: f64) -> Check {
    let state = uniform_state(fx.n());
    let j = Judgment::new(a, b, label);
    for space in fx.corpus.spaces() {
        let p = temporal_soft(&state, &[j], &[c], space, rho).map_err(|e| e.to_string())?;
        let gap: Vec<f64> = (0..fx.n())
            .map(|i| space.similarity(j.selected(), i).unwrap() - space.similarity(j.rejected(), i).unwrap())
            .collect();
        for i in 0..fx.n() {
            for k in 0..fx.n() {
                if gap[i] > gap[k] + 1e-9 {
                    ensure!(p[i] >= p[k], "gap {} > {} but p̂ {} < {}", gap[i], gap[k], p[i], p[k]);
                    if c > 0.0 && 1.0 - p[i] > 1e-12 {
                        ensure!(p[i] > p[k], "gap {} > {} but p̂ equal at {}", gap[i], gap[k], p[i]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// With the label taken from the oracle of the same space, the target's
/// term is at least one half for every confidence in `[0, 1]`.
pub fn check_oracle_floor(fx: &Fixture, target: usize, pair: Pair, c: f64, rho: f64) -> Check {
    let state = uniform_state(fx.n());
    for f in 0..fx.corpus.num_spaces() {
        let label = oracle_choice(&fx.corpus, f, pair, target).map_err(|e| e.to_string())?;
        let j = Judgment::new(pair.a, pair.b, label);
        let space = fx.corpus.space(f);
        for conf in [c, 1.0] {
            let term = temporal_soft(&state, &[j], &[conf], space, rho).map_err(|e| e.to_string())?[target];
            // the engine forms (v+ − v−)·v_T while the oracle compares two dot
            // products; the two differ by rounding when the members tie
            ensure!(term >= 0.5 - 1e-12, "space {f}: target term {term} below 1/2");
        }
    }
    Ok(())
}

/// Every norm in `[0, 2]` lands in exactly one bin `k`, with `k = 0`
/// covering `[0, 0.02]` and `k > 0` covering `(0.02k, 0.02(k+1)]`.
pub fn check_bin_partition(norm: f64) -> Check {
    let k = dist_bin(norm) as usize;
    ensure!(k < DIST_BINS, "bin {k} out of range for {norm}");
    let width = 2.0 / DIST_BINS as f64;
    let (lo, hi) = (k as f64 * width, (k + 1) as f64 * width);
    ensure!(norm <= hi + 1e-12, "{norm} above bin {k} upper edge {hi}");
    ensure!(k == 0 || norm > lo - 1e-12, "{norm} below bin {k} lower edge {lo}");
    Ok(())
}

/// Greedy displays are exactly the top `2|D|` items; diverse displays pair
/// ranks 1–50 with ranks 51–100. No item repeats and every item is active.
pub fn check_display_bands(state: &SessionState, num_pairs: usize, seed: u64) -> Check {
    let greedy = greedy_display(state, num_pairs, seed).map_err(|e| e.to_string())?;
    let mut shown: Vec<usize> = greedy.items().collect();
    shown.sort_unstable();
    let mut top = state.top_k(2 * num_pairs);
    top.sort_unstable();
    ensure!(shown == top, "greedy display {shown:?} is not the top {top:?}");

    let n_display = 2 * DIVERSE_BAND;
    let diverse = diverse_display(state, num_pairs, n_display, seed).map_err(|e| e.to_string())?;
    let ranked = state.top_k(n_display);
    let rank = |i: usize| ranked.iter().position(|&x| x == i).map(|r| r + 1);
    let mut seen = Vec::new();
    for p in &diverse.pairs {
        let (ra, rb) = (rank(p.a), rank(p.b));
        let (hi, lo) = match (ra, rb) {
            (Some(x), Some(y)) => (x.min(y), x.max(y)),
            _ => return Err(format!("pair {p:?} outside the top {n_display}")),
        };
        ensure!(hi <= DIVERSE_BAND, "pair {p:?}: head rank {hi}");
        ensure!(lo > n_display - DIVERSE_BAND && lo <= n_display, "pair {p:?}: tail rank {lo}");
        seen.extend([p.a, p.b]);
    }
    for d in [&greedy, &diverse] {
        let items: Vec<usize> = d.items().collect();
        ensure!(items.iter().all(|&i| state.is_active(i)), "inactive item displayed");
        let mut dedup = items.clone();
        dedup.sort_unstable();
        dedup.dedup();
        ensure!(dedup.len() == items.len(), "repeated item in {:?} display", d.strategy);
    }
    Ok(())
}

/// Swapping the pair flips every per-space choice and the majority, and
/// leaves alignment unchanged (exact similarity ties excepted).
pub fn check_swap_symmetry(fx: &Fixture, target: usize, pair: Pair) -> Check {
    let tied = fx
        .corpus
        .spaces()
        .iter()
        .any(|s| s.similarity(pair.a, target).unwrap() == s.similarity(pair.b, target).unwrap());
    if tied {
        return Ok(());
    }
    let v = judge(&fx.corpus, pair, target).map_err(|e| e.to_string())?;
    let w = judge(&fx.corpus, Pair { a: pair.b, b: pair.a }, target).map_err(|e| e.to_string())?;
    ensure!(v.choices.iter().zip(&w.choices).all(|(x, y)| *x == y.flipped()), "choices did not flip");
    ensure!(v.majority == w.majority.flipped(), "majority did not flip");
    ensure!(v.alignment == w.alignment, "alignment changed under swap");
    let agree = v.alignment.iter().filter(|&&y| y).count();
    ensure!(2 * agree >= v.alignment.len(), "only {agree} spaces agree with the majority");
    Ok(())
}

/// An update with no judgments is rejected and leaves the state untouched.
pub fn check_empty_update(fx: &Fixture) -> Check {
    let mut state = uniform_state(fx.n());
    let before = state.clone();
    let conf = vec![Vec::new(); fx.corpus.num_spaces()];
    ensure!(update_step(&mut state, &fx.corpus, &[], &conf, 0.05, entry(&[])).is_err(), "empty update accepted");
    ensure!(state == before, "empty update changed the state");
    Ok(())
}

/// Runs every invariant over `cases` random fixtures derived from `seed`,
/// plus the display bands over 1,000 seeds. Returns the first failure.
pub fn invariant_sweep(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(4..=30usize);
        let f = rng.random_range(1..=3usize);
        let dim = rng.random_range(2..=8usize);
        let fx = Fixture::random(&mut rng, n, f, dim);
        let s = rng.random::<u64>();
        let (a, b) = two_distinct(&mut rng, n);
        let label = random_label(&mut rng);
        let c = rng.random_range(0.0..=1.0);
        let rho = rng.random_range(0.01..0.5);
        let target = rng.random_range(0..n);
        let ctx = |e: String| format!("case {case}: {e}");
        check_normalization(&fx, s).map_err(ctx)?;
        check_label_flip(&fx, a, b, label, c, rho).map_err(ctx)?;
        check_soft_hard(&fx, s, rho).map_err(ctx)?;
        check_monotonicity(&fx, a, b, label, c, rho).map_err(ctx)?;
        check_oracle_floor(&fx, target, Pair { a, b }, c, rho).map_err(ctx)?;
        check_swap_symmetry(&fx, target, Pair { a, b }).map_err(ctx)?;
        check_empty_update(&fx).map_err(ctx)?;
        check_bin_partition(rng.random_range(0.0..=2.0)).map_err(ctx)?;
    }
    for k in 0..=200 {
        check_bin_partition(k as f64 / 100.0)?;
    }
    let scores: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state = init_from_scores(&scores, &Hyperparams { n_prune: 200, ..Hyperparams::default() }).unwrap();
    for s in 0..1000u64 {
        check_display_bands(&state, 5, s).map_err(|e| format!("display seed {s}: {e}"))?;
    }
    Ok(())
}

pub fn two_distinct(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn token(rng: &mut impl Rng, dim: usize) -> JudgmentToken {
    let (a, b) = (unit(rng, dim), unit(rng, dim));
    let v_diff: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let norm = v_diff.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    JudgmentToken {
        v_diff,
        v_s: unit(rng, dim),
        dist_bin: dist_bin(norm),
    }
}

/// Random episode whose labels alternate, so every round is balanced.
pub fn episode(seed: u64, dim: usize, rounds: usize, pairs: usize) -> Episode {
    let mut rng = seeded(seed);
    let steps: Vec<Vec<JudgmentToken>> = (0..rounds).map(|_| (0..pairs).map(|_| token(&mut rng, dim)).collect()).collect();
    let labels = (0..rounds).map(|r| (0..pairs).map(|j| (r + j) % 2 == 0).collect()).collect();
    Episode {
        query: unit(&mut rng, dim),
        steps,
        labels,
    }
}
