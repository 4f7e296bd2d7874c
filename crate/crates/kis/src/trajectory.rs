//! Training trajectories: simulated sessions that reach the target within
//! the step budget, stored as JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kis_core::perception::{encode_pairs, Episode};
use kis_core::session::{RunOptions, StepLog, StrategyPlan};
use kis_core::{run_session, Corpus, Hyperparams, Judgment, Policy, Query};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::BenchQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub target: usize,
    pub initial_rank: usize,
    /// Query vector per space.
    pub query: Vec<Vec<f32>>,
    pub steps: Vec<StepLog>,
    /// Step at which the target reached rank 1.
    pub terminal_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub sessions: usize,
    pub kept: usize,
}

impl GenStats {
    pub fn kept_fraction(&self) -> f64 {
        if self.sessions == 0 {
            0.0
        } else {
            self.kept as f64 / self.sessions as f64
        }
    }
}

/// Runs one session per query with oracle-aligned confidences and both
/// display strategies, keeping sessions that hit rank 1 at some `1 ≤ t ≤
/// max_steps`.
pub fn generate_trajectories(
    corpus: &Corpus,
    queries: &[BenchQuery],
    params: &Hyperparams,
    seed: u64,
    plan: StrategyPlan,
) -> Result<(Vec<TrajectoryRecord>, GenStats)> {
    let mut options = RunOptions::new(Policy::PicHunter);
    options.oracle_confidences = true;
    options.strategy = plan;
    let results: Vec<Option<TrajectoryRecord>> = queries
        .par_iter()
        .enumerate()
        .map(|(k, q)| -> Result<Option<TrajectoryRecord>> {
            let session_seed = kis_core::rng::splitmix64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9));
            let trace = run_session(corpus, q.target, &Query::Vectors(q.vectors.clone()), params, session_seed, &options)?;
            Ok(match trace.hit_step() {
                Some(t) if t >= 1 && t <= params.max_steps => Some(TrajectoryRecord {
                    target: q.target,
                    initial_rank: trace.initial.rank,
                    query: q.vectors.clone(),
                    steps: trace.steps,
                    terminal_step: t,
                }),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    let stats = GenStats {
        sessions: queries.len(),
        kept: results.iter().flatten().count(),
    };
    Ok((results.into_iter().flatten().collect(), stats))
}

/// The records seen through space `f`: per-round judgment tokens and that
/// space's alignment labels.
pub fn episodes_for_space(corpus: &Corpus, records: &[TrajectoryRecord], f: usize) -> Result<Vec<Episode>> {
    if f >= corpus.num_spaces() {
        return Err(Error::Invalid(format!("space {f} out of range")));
    }
    let space = corpus.space(f);
    records
        .iter()
        .map(|r| {
            let mut steps = Vec::with_capacity(r.steps.len());
            let mut labels = Vec::with_capacity(r.steps.len());
            for s in &r.steps {
                let judgments: Vec<Judgment> = s
                    .display
                    .pairs
                    .iter()
                    .zip(&s.labels)
                    .map(|(p, &l)| Judgment::new(p.a, p.b, l))
                    .collect();
                for j in &judgments {
                    corpus.check_index(j.a)?;
                    corpus.check_index(j.b)?;
                }
                let v_s = s
                    .state_embeddings
                    .get(f)
                    .ok_or_else(|| Error::Invalid("record lacks a state embedding for this space".into()))?;
                steps.push(encode_pairs(space, v_s, &judgments));
                labels.push(
                    s.alignment
                        .iter()
                        .map(|a| a.get(f).copied().ok_or_else(|| Error::Invalid("record lacks alignment for this space".into())))
                        .collect::<Result<Vec<bool>>>()?,
                );
            }
            Ok(Episode {
                query: r.query[f].clone(),
                steps,
                labels,
            })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
