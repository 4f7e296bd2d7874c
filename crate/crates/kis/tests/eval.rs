use kis::eval::{evaluate, run_variant, session_seed, write_csv, Variant, RECALL_KS};
use kis::stats::sign_test;
use kis::synth::{bucket_queries, random_queries, synth_corpus, SynthSpec};
use kis_core::{Ablation, Corpus, Hyperparams, Policy};

fn corpus(n: usize, seed: u64) -> Corpus {
    synth_corpus(&SynthSpec {
        n_items: n,
        num_spaces: 3,
        dim: 32,
        correlation: 0.7,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn variant(policy: Policy, prune: bool) -> Variant<'static> {
    Variant {
        policy,
        ablation: Ablation::None,
        prune,
        predictors: &[],
    }
}

fn csv_bytes(report: &kis::eval::EvalReport) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).unwrap();
    buf
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let c = corpus(6000, 1);
    let qs = bucket_queries(&c, 2, 3).unwrap();
    let params = Hyperparams {
        n_prune: 2000,
        ..Hyperparams::default()
    };
    let variants = [
        variant(Policy::Random, true),
        variant(Policy::PicHunter, true),
        variant(Policy::PicHunter, false),
    ];
    let a = evaluate(&c, &qs, &params, 42, &variants).unwrap();
    let b = evaluate(&c, &qs, &params, 42, &variants).unwrap();
    let (x, y) = (csv_bytes(&a), csv_bytes(&b));
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "variant,prune,bucket,queries,step,recall@1,recall@10,recall@50");
    // 3 variants × (overall + 5 buckets) × 8 steps
    assert_eq!(lines.count(), 3 * 6 * 8);
    assert_eq!(a.variant("pichunter", true).unwrap().ranks, b.variant("pichunter", true).unwrap().ranks);
}

#[test]
fn query_at_rank_one_is_a_hit_from_step_zero() {
    let c = corpus(1000, 2);
    let qs = random_queries(&c, 1, 0.0, 5).unwrap();
    assert_eq!(qs[0].initial_rank, 1);
    let r = run_variant(&c, &qs, &Hyperparams::default(), 0, &variant(Policy::PicHunter, true)).unwrap();
    for k in RECALL_KS {
        assert_eq!(r.recall_at(k, 0), Some(1.0));
        assert_eq!(r.recall_at(k, 7), Some(1.0));
    }
    // initial rank 1 lies in no bucket: buckets are absent, not zero
    assert!(r.buckets.is_empty());
    assert_eq!(r.overall.queries, 1);
}

#[test]
fn only_populated_buckets_are_reported() {
    let c = corpus(6000, 3);
    let mut qs = bucket_queries(&c, 2, 4).unwrap();
    qs.retain(|q| q.bucket == Some(0) || q.bucket == Some(3));
    let r = run_variant(&c, &qs, &Hyperparams::default(), 1, &variant(Policy::Random, true)).unwrap();
    let labels: Vec<&str> = r.buckets.iter().map(|b| b.bucket.as_str()).collect();
    assert_eq!(labels, ["(10,50]", "(500,1000]"]);
    assert!(r.buckets.iter().all(|b| b.queries == 2));
}

#[test]
fn recall_is_monotone_in_k_and_matches_ranks() {
    let c = corpus(6000, 4);
    let qs = bucket_queries(&c, 8, 6).unwrap();
    let r = run_variant(&c, &qs, &Hyperparams::default(), 2, &variant(Policy::PicHunter, true)).unwrap();
    for t in 0..=7 {
        let r1 = r.recall_at(1, t).unwrap();
        let r10 = r.recall_at(10, t).unwrap();
        let r50 = r.recall_at(50, t).unwrap();
        assert!(r1 <= r10 && r10 <= r50);
        let hits: f64 = r.hits(t).iter().sum();
        assert!((hits / qs.len() as f64 - r1).abs() < 1e-12);
    }
    for (row, q) in r.ranks.iter().zip(&qs) {
        assert_eq!(row[0], q.initial_rank);
        // once at rank 1 the session stops and the rank is carried forward
        if let Some(t) = row.iter().position(|&x| x == 1) {
            assert!(row[t..].iter().all(|&x| x == 1));
        }
    }
}

#[test]
fn session_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|k| session_seed(7, k)).collect();
    assert_eq!(seeds.len(), 1000);
}

#[test]
fn ours_comparisons_need_predictors() {
    let c = corpus(500, 5);
    let qs = random_queries(&c, 2, 1.0, 1).unwrap();
    assert!(run_variant(&c, &qs, &Hyperparams::default(), 0, &variant(Policy::Ours, true)).is_err());
    assert!(run_variant(&c, &[], &Hyperparams::default(), 0, &variant(Policy::Random, true)).is_err());
}

#[test]
fn pichunter_beats_random_by_sign_test() {
    let c = corpus(6000, 6);
    let qs = bucket_queries(&c, 100, 8).unwrap();
    assert_eq!(qs.len(), 500);
    let params = Hyperparams::default();
    let ph = run_variant(&c, &qs, &params, 3, &variant(Policy::PicHunter, true)).unwrap();
    let rnd = run_variant(&c, &qs, &params, 3, &variant(Policy::Random, true)).unwrap();
    // lower final rank is better
    let score = |r: &kis::eval::VariantResult| -> Vec<f64> { r.ranks.iter().map(|row| -(row[7] as f64)).collect() };
    let s = sign_test(&score(&ph), &score(&rnd)).unwrap();
    assert!(s.wins + s.losses >= 100, "{s:?}");
    assert!(s.p_value < 0.01, "{s:?}");
}
