//! The frozen desk-scale reference benchmark: corpus recipe, query sets, and
//! the trajectory / training pipeline behind the `ours` policy.

use std::collections::HashSet;
use std::path::Path;

use kis_core::perception::{evaluate_episodes, train, EvalMetrics, Predictor, PredictorConfig, TrainConfig, TrainReport};
use kis_core::session::StrategyPlan;
use kis_core::{Ablation, Corpus, Hyperparams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{bucket_queries, synth_corpus, BenchQuery, SynthSpec};
use crate::trajectory::{episodes_for_space, generate_trajectories, GenStats, TrajectoryRecord};

/// Benchmark definition checked into the repository.
pub const REFERENCE: &str = include_str!("../../../benchmarks/reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub per_bucket: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    /// Training targets, drawn disjoint from the evaluation targets.
    pub queries: QuerySet,
    pub trajectory_seed: u64,
    pub strategy: StrategyPlan,
    /// Fraction of kept trajectories held out for the accuracy report.
    pub test_fraction: f64,
    /// `input_dim` is overwritten with each space's dimension.
    pub predictor: PredictorConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub corpus: SynthSpec,
    pub params: Hyperparams,
    pub eval: QuerySet,
    /// Session seed shared by every evaluated variant.
    pub session_seed: u64,
    pub training: TrainingPlan,
}

impl Benchmark {
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE).expect("reference benchmark is valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::format::read_json(path)
    }

    pub fn build_corpus(&self) -> Result<Corpus> {
        synth_corpus(&self.corpus)
    }

    pub fn eval_queries(&self, corpus: &Corpus) -> Result<Vec<BenchQuery>> {
        bucket_queries(corpus, self.eval.per_bucket, self.eval.seed)
    }

    /// Training queries whose targets do not occur in `exclude`.
    pub fn training_queries(&self, corpus: &Corpus, exclude: &[BenchQuery]) -> Result<Vec<BenchQuery>> {
        let q = &self.training.queries;
        let taken: HashSet<usize> = exclude.iter().map(|q| q.target).collect();
        let mut out = bucket_queries(corpus, q.per_bucket, q.seed)?;
        out.retain(|q| !taken.contains(&q.target));
        Ok(out)
    }

    pub fn trajectories(&self, corpus: &Corpus, queries: &[BenchQuery]) -> Result<(Vec<TrajectoryRecord>, GenStats)> {
        generate_trajectories(corpus, queries, &self.params, self.training.trajectory_seed, self.training.strategy)
    }
}

/// Predictor configuration for a model variant: StateRep and DistEmb
/// ablations are retrained with the matching input switched off.
pub fn ablated_config(base: &PredictorConfig, ablation: Ablation) -> PredictorConfig {
    let mut c = base.clone();
    match ablation {
        Ablation::StateRep => c.use_state_embedding = false,
        Ablation::DistEmb => c.use_distance_embedding = false,
        Ablation::None | Ablation::SoftUpd => {}
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTraining {
    pub space_id: String,
    pub report: TrainReport,
    /// Alignment prediction on the held-out trajectories.
    pub test: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub predictors: Vec<Predictor<f32>>,
    pub spaces: Vec<SpaceTraining>,
}

/// Splits `records` into train and test by position, then trains one
/// predictor per space.
pub fn train_predictors(
    corpus: &Corpus,
    records: &[TrajectoryRecord],
    plan: &TrainingPlan,
    config: &PredictorConfig,
) -> Result<TrainedModels> {
    if !(0.0..1.0).contains(&plan.test_fraction) {
        return Err(Error::Invalid("test_fraction must be in [0, 1)".into()));
    }
    let n_test = (records.len() as f64 * plan.test_fraction).round() as usize;
    let (train_recs, test_recs) = records.split_at(records.len() - n_test);
    let results: Vec<(Predictor<f32>, SpaceTraining)> = (0..corpus.num_spaces())
        .into_par_iter()
        .map(|f| -> Result<_> {
            let space = corpus.space(f);
            let cfg = PredictorConfig { input_dim: space.dim(), ..config.clone() };
            let seed = plan.train.seed.wrapping_add(f as u64);
            let mut predictor = Predictor::<f32>::new(cfg, seed)?;
            let episodes = episodes_for_space(corpus, train_recs, f)?;
            let tc = TrainConfig { seed, ..plan.train.clone() };
            let report = train(&mut predictor, &episodes, &tc)?;
            let test_eps = episodes_for_space(corpus, if test_recs.is_empty() { train_recs } else { test_recs }, f)?;
            let test = evaluate_episodes(&predictor, &test_eps)?;
            log::info!(
                "space {}: best epoch {:?}, held-out accuracy {:.3} (majority {:.3})",
                space.id(),
                report.best_epoch,
                test.accuracy,
                test.majority_rate
            );
            Ok((predictor, SpaceTraining { space_id: space.id().to_string(), report, test }))
        })
        .collect::<Result<_>>()?;
    let (predictors, spaces) = results.into_iter().unzip();
    Ok(TrainedModels { predictors, spaces })
}
