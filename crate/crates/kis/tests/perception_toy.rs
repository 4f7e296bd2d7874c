//! A predictor pair trained on a two-space corpus must tell which space the
//! simulated user followed when the spaces disagree. With two spaces a split
//! vote goes to space 0, so the pair has to learn that asymmetry from the
//! trajectories alone.

use kis::synth::{calibrated_query, synth_corpus, SynthSpec};
use kis::trajectory::{episodes_for_space, generate_trajectories};
use kis_core::perception::{train, Predictor, PredictorConfig, TrainConfig};
use kis_core::session::StrategyPlan;
use kis_core::Hyperparams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn aligned_space_gets_higher_confidence() {
    let corpus = synth_corpus(&SynthSpec {
        n_items: 3000,
        num_spaces: 2,
        dim: 16,
        correlation: 0.5,
        seed: 12,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let queries: Vec<_> = (0..240)
        .filter_map(|k| calibrated_query(&corpus, (k * 11) % corpus.len(), 10, 200, &mut rng).ok())
        .collect();
    let params = Hyperparams {
        n_prune: 1500,
        ..Hyperparams::default()
    };
    let (records, stats) = generate_trajectories(&corpus, &queries, &params, 14, StrategyPlan::Alternate).unwrap();
    assert!(records.len() >= 60, "{stats:?}");
    let split = records.len() * 4 / 5;
    let (train_recs, test_recs) = records.split_at(split);

    let predictors: Vec<Predictor<f32>> = (0..2)
        .map(|f| {
            let cfg = PredictorConfig {
                input_dim: 16,
                model_dim: 16,
                layers: 1,
                heads: 2,
                ff_dim: 32,
                dropout: 0.0,
                ..PredictorConfig::default()
            };
            let mut p = Predictor::new(cfg, 20 + f as u64).unwrap();
            let episodes = episodes_for_space(&corpus, train_recs, f).unwrap();
            let tc = TrainConfig {
                epochs: 8,
                learning_rate: 3e-3,
                seed: f as u64,
                ..TrainConfig::default()
            };
            train(&mut p, &episodes, &tc).unwrap();
            p
        })
        .collect();

    let test: Vec<_> = (0..2).map(|f| episodes_for_space(&corpus, test_recs, f).unwrap()).collect();
    let (mut right, mut total) = (0usize, 0usize);
    for (e0, e1) in test[0].iter().zip(&test[1]) {
        for t in 0..e0.steps.len() {
            let c0 = predictors[0].forward(&e0.input(t + 1)).unwrap();
            let c1 = predictors[1].forward(&e1.input(t + 1)).unwrap();
            for j in 0..c0.len() {
                let (a0, a1) = (e0.labels[t][j], e1.labels[t][j]);
                if a0 == a1 {
                    continue;
                }
                total += 1;
                let (aligned, misaligned) = if a0 { (c0[j], c1[j]) } else { (c1[j], c0[j]) };
                right += usize::from(aligned > misaligned);
            }
        }
    }
    assert!(total >= 20, "only {total} disagreeing judgments held out");
    let rate = right as f64 / total as f64;
    eprintln!("aligned > misaligned on {right}/{total} held-out disagreements ({rate:.3})");
    assert!(rate >= 0.8, "aligned space ranked higher on {rate:.3} of {total} judgments");
}
