mod common;

use common::*;
use kis_core::engine::init_from_scores;
use kis_core::{apply_update, Hyperparams, Query, SearchSession};

#[test]
fn engine_matches_scalar_oracle_on_small_corpora() {
    let mut worst: f64 = 0.0;
    for seed in 0..300 {
        worst = worst.max(oracle_equivalence(seed).unwrap());
    }
    assert!(worst <= 1e-9, "max posterior gap {worst:e}");
}

#[test]
fn prior_matches_oracle_on_a_four_item_fixture() {
    // 2-d unit rows at 0°, 60°, 90° and 180°; query along the x axis
    let s = 3f32.sqrt() / 2.0;
    let fx = Fixture::from_raw(2, vec![vec![1.0, 0.0, 0.5, s, 0.0, 1.0, -1.0, 0.0]]).unwrap();
    let query = vec![vec![1.0f32, 0.0]];
    let session = SearchSession::new(&fx.corpus, &Query::Vectors(query.clone()), Hyperparams::default(), 0).unwrap();
    let (prior, _) = scalar_prior(&fx.rows(), &query, 0.05, 0);
    // softmax of (1, 0.5, 0, −1) / 0.05 by hand
    let w = [20f64.exp(), 10f64.exp(), 1.0, (-20f64).exp()];
    let z: f64 = w.iter().sum();
    for i in 0..4 {
        assert!((prior[i] - w[i] / z).abs() < 1e-12);
        assert!((session.state().probs()[i] - w[i] / z).abs() < 1e-9);
    }
}

#[test]
fn two_updates_match_the_cumulative_product() {
    let params = Hyperparams { n_prune: 0, ..Hyperparams::default() };
    let mut state = init_from_scores(&[0.4, 0.1, 0.3, 0.2], &params).unwrap();
    let prior = state.probs().to_vec();
    let f1 = [0.9, 0.45, 0.7, 0.2];
    let f2 = [0.3, 0.8, 0.6, 0.5];
    for f in [f1, f2] {
        apply_update(&mut state, &[f.to_vec()], entry_stub()).unwrap();
    }
    let raw: Vec<f64> = (0..4).map(|i| prior[i] * f1[i] * f2[i]).collect();
    let z: f64 = raw.iter().sum();
    for i in 0..4 {
        assert!((state.probs()[i] - raw[i] / z).abs() < 1e-9);
    }
}

fn entry_stub() -> kis_core::engine::HistoryEntry {
    kis_core::engine::HistoryEntry {
        display: kis_core::Display { pairs: Vec::new(), strategy: kis_core::Strategy::Greedy },
        labels: Vec::new(),
        state_embeddings: Vec::new(),
    }
}
