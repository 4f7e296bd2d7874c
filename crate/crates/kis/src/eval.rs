//! Step-wise Recall@k over a query set, stratified by initial-rank bucket.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use kis_core::perception::Predictor;
use kis_core::rng::splitmix64;
use kis_core::session::{RankTrace, RunOptions, StrategyPlan};
use kis_core::{run_session, Ablation, Corpus, Hyperparams, Policy, Query};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{paired_t_test, TTest};
use crate::synth::{bucket_label, BenchQuery, BUCKETS};

/// Cut-offs reported for Recall@k.
pub const RECALL_KS: [usize; 3] = [1, 10, 50];

/// One configuration to evaluate.
#[derive(Debug, Clone)]
pub struct Variant<'a> {
    pub policy: Policy,
    pub ablation: Ablation,
    pub prune: bool,
    /// Required for `Policy::Ours`.
    pub predictors: &'a [Predictor<f32>],
}

impl Variant<'_> {
    pub fn name(&self) -> String {
        let mut s = self.policy.name().to_string();
        if self.ablation != Ablation::None {
            s.push_str("-no-");
            s.push_str(self.ablation.name());
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub k: usize,
    /// Index `t` holds Recall@k after `t` rounds (`t = 0` is the initial query).
    pub by_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub bucket: String,
    pub queries: usize,
    pub recall: Vec<Recall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub policy: Policy,
    pub ablation: Ablation,
    pub prune: bool,
    pub overall: BucketResult,
    /// Buckets with at least one query, in interval order.
    pub buckets: Vec<BucketResult>,
    /// Per-query target rank after each step, same order as the query set.
    pub ranks: Vec<Vec<usize>>,
    pub runtime_per_iteration_ms: f64,
}

impl VariantResult {
    pub fn recall_at(&self, k: usize, step: usize) -> Option<f64> {
        self.overall
            .recall
            .iter()
            .find(|r| r.k == k)
            .and_then(|r| r.by_step.get(step).copied())
    }

    /// Recall@1 at `step` for each non-empty bucket.
    pub fn bucket_recall1(&self, step: usize) -> Vec<(String, f64)> {
        self.buckets
            .iter()
            .map(|b| (b.bucket.clone(), b.recall[0].by_step[step]))
            .collect()
    }

    /// Per-query hit indicator (rank 1) at `step`.
    pub fn hits(&self, step: usize) -> Vec<f64> {
        self.ranks.iter().map(|r| if r[step] == 1 { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub step: usize,
    /// Paired over per-bucket Recall@1.
    pub t_test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub variants: Vec<VariantResult>,
    pub comparisons: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
}

impl EvalReport {
    pub fn variant(&self, name: &str, prune: bool) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name && v.prune == prune)
    }
}

/// Seed of the session for query `k`; shared by all variants so runs pair up.
pub fn session_seed(seed: u64, k: usize) -> u64 {
    splitmix64(seed ^ splitmix64(k as u64))
}

fn recall_table(rank_rows: &[&Vec<usize>], steps: usize) -> Vec<Recall> {
    RECALL_KS
        .iter()
        .map(|&k| Recall {
            k,
            by_step: (0..=steps)
                .map(|t| {
                    let hit = rank_rows.iter().filter(|r| r[t] <= k).count();
                    hit as f64 / rank_rows.len() as f64
                })
                .collect(),
        })
        .collect()
}

/// Runs every query under one variant. Sessions are independent and run in
/// parallel; results keep query order.
pub fn run_variant(
    corpus: &Corpus,
    queries: &[BenchQuery],
    params: &Hyperparams,
    seed: u64,
    variant: &Variant<'_>,
) -> Result<VariantResult> {
    if queries.is_empty() {
        return Err(Error::Invalid("empty query set".into()));
    }
    let mut params = params.clone();
    if !variant.prune {
        params.n_prune = 0;
    }
    let mut options = RunOptions::new(variant.policy).with_predictors(variant.predictors);
    options.ablation = variant.ablation;
    options.strategy = StrategyPlan::Greedy;
    let start = Instant::now();
    let traces: Vec<RankTrace> = queries
        .par_iter()
        .enumerate()
        .map(|(k, q)| {
            run_session(corpus, q.target, &Query::Vectors(q.vectors.clone()), &params, session_seed(seed, k), &options)
                .map_err(Error::from)
        })
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let iterations: usize = traces.iter().map(|t| t.steps.len()).sum();
    let steps = params.max_steps;
    let ranks: Vec<Vec<usize>> = traces.iter().map(|t| (0..=steps).map(|s| t.rank_at(s)).collect()).collect();
    let all: Vec<&Vec<usize>> = ranks.iter().collect();
    let overall = BucketResult {
        bucket: "all".into(),
        queries: ranks.len(),
        recall: recall_table(&all, steps),
    };
    let buckets = (0..BUCKETS.len())
        .filter_map(|b| {
            let rows: Vec<&Vec<usize>> = ranks
                .iter()
                .zip(queries)
                .filter(|(_, q)| q.bucket == Some(b))
                .map(|(r, _)| r)
                .collect();
            (!rows.is_empty()).then(|| BucketResult {
                bucket: bucket_label(b),
                queries: rows.len(),
                recall: recall_table(&rows, steps),
            })
        })
        .collect();
    Ok(VariantResult {
        name: variant.name(),
        policy: variant.policy,
        ablation: variant.ablation,
        prune: variant.prune,
        overall,
        buckets,
        ranks,
        runtime_per_iteration_ms: if iterations == 0 { 0.0 } else { elapsed / iterations as f64 },
    })
}

/// Paired t-test of `a` against `b` over the buckets both populate.
pub fn compare(a: &VariantResult, b: &VariantResult, step: usize) -> Result<Comparison> {
    let rb = b.bucket_recall1(step);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (label, r) in a.bucket_recall1(step) {
        if let Some((_, s)) = rb.iter().find(|(l, _)| *l == label) {
            xa.push(r);
            xb.push(*s);
        }
    }
    Ok(Comparison {
        a: a.name.clone(),
        b: b.name.clone(),
        step,
        t_test: paired_t_test(&xa, &xb)?,
    })
}

pub fn evaluate(
    corpus: &Corpus,
    queries: &[BenchQuery],
    params: &Hyperparams,
    seed: u64,
    variants: &[Variant<'_>],
) -> Result<EvalReport> {
    let results = variants
        .iter()
        .map(|v| {
            let r = run_variant(corpus, queries, params, seed, v)?;
            log::info!(
                "{} (prune {}): step-{} Recall@1 {:.4}",
                r.name,
                r.prune,
                params.max_steps,
                r.recall_at(1, params.max_steps).unwrap_or(0.0)
            );
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for a in results.iter().filter(|r| r.policy == Policy::Ours) {
        for b in results.iter().filter(|r| r.policy == Policy::PicHunter && r.prune == a.prune) {
            comparisons.push(compare(a, b, params.max_steps)?);
        }
    }
    Ok(EvalReport {
        queries: queries.len(),
        max_steps: params.max_steps,
        seed,
        variants: results,
        comparisons,
        checkpoint_sha256: None,
    })
}

/// One row per (variant, bucket, step). Runtime is left out so that repeated
/// runs produce identical bytes.
pub fn write_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["variant".to_string(), "prune".into(), "bucket".into(), "queries".into(), "step".into()];
    header.extend(RECALL_KS.iter().map(|k| format!("recall@{k}")));
    out.write_record(&header)?;
    for v in &report.variants {
        for b in std::iter::once(&v.overall).chain(&v.buckets) {
            for t in 0..=report.max_steps {
                let mut row = vec![
                    v.name.clone(),
                    if v.prune { "on" } else { "off" }.to_string(),
                    b.bucket.clone(),
                    b.queries.to_string(),
                    t.to_string(),
                ];
                row.extend(b.recall.iter().map(|r| format!("{:.6}", r.by_step[t])));
                out.write_record(&row)?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_report(report: &EvalReport, csv_path: &Path, json_path: &Path) -> Result<()> {
    let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    write_csv(report, std::io::BufWriter::new(f))?;
    crate::format::write_json(json_path, report)
}
