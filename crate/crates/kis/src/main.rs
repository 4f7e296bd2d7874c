use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use kis::bench::{ablated_config, train_predictors, Benchmark};
use kis::eval::{evaluate, save_report, Variant};
use kis::synth::{random_queries, SynthSpec};
use kis::{checkpoint, format, service, trajectory};
use kis_core::perception::{Predictor, PredictorConfig, TrainConfig};
use kis_core::session::RunOptions;
use kis_core::{run_session, Ablation, Corpus, Hyperparams, Policy, Query};

#[derive(Parser)]
#[command(name = "kis", version, about = "Known-item search with pairwise relevance feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Prune {
    On,
    Off,
    Both,
}

#[derive(clap::Args)]
struct CorpusArgs {
    /// Corpus manifest. Without it the reference benchmark corpus is generated.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Benchmark definition (JSON); defaults to the built-in reference.
    #[arg(long)]
    benchmark: Option<PathBuf>,
}

impl CorpusArgs {
    fn benchmark(&self) -> anyhow::Result<Benchmark> {
        Ok(match &self.benchmark {
            Some(p) => Benchmark::load(p)?,
            None => Benchmark::reference(),
        })
    }

    fn corpus(&self, bench: &Benchmark) -> anyhow::Result<Corpus> {
        let corpus = match &self.corpus {
            Some(p) => format::load_corpus(p)?,
            None => bench.build_corpus()?,
        };
        Ok(corpus)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it as a manifest plus KISE files.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        items: usize,
        #[arg(long, default_value_t = 3)]
        spaces: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.7)]
        correlation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a manifest and its embedding files.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Print per-space norm statistics.
        #[arg(long)]
        check: bool,
    },
    /// Simulate sessions for random targets and print their rank traces.
    Simulate {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long, default_value = "pichunter")]
        policy: Policy,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        sessions: usize,
        /// Query noise σ.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability of flipping each simulated label.
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
    },
    /// Generate training trajectories as JSON lines.
    GenTraj {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the benchmark's training queries per bucket.
        #[arg(long)]
        per_bucket: Option<usize>,
    },
    /// Train the perception predictor of one space.
    Train {
        #[command(flatten)]
        data: CorpusArgs,
        /// A JSON-lines file or a directory of them.
        #[arg(long)]
        trajectories: PathBuf,
        /// Space id.
        #[arg(long)]
        space: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train without the state embedding input.
        #[arg(long)]
        no_state: bool,
        /// Train without the distance embedding input.
        #[arg(long)]
        no_distance: bool,
    },
    /// Evaluate policies on the benchmark queries and write CSV and JSON reports.
    Evaluate {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long, value_delimiter = ',', default_value = "ours,pichunter,random")]
        policies: Vec<Policy>,
        #[arg(long, value_enum, default_value = "on")]
        prune: Prune,
        /// Ablations of `ours` to add, e.g. `softupd,staterep,distemb`.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<Ablation>,
        /// Directory holding `<space>.ckpt` checkpoints for the full model.
        /// Ablated models are read from `<dir>/no-staterep` and `<dir>/no-distemb`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        per_bucket: Option<usize>,
        #[arg(long, default_value = "report.csv")]
        csv: PathBuf,
        #[arg(long, default_value = "report.json")]
        json: PathBuf,
    },
    /// Serve interactive sessions over HTTP.
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory that relative `thumbnail_uri` paths resolve against.
        #[arg(long)]
        media: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { items, spaces, dim, correlation, seed, out } => {
            let spec = SynthSpec {
                n_items: items,
                num_spaces: spaces,
                dim,
                correlation,
                seed,
                ..SynthSpec::default()
            };
            let corpus = kis::synth::synth_corpus(&spec)?;
            let manifest = format::save_corpus(&corpus, &out)?;
            println!("{}", manifest.display());
        }
        Command::Ingest { manifest, check } => {
            let corpus = format::load_corpus(&manifest)?;
            warn_params(&corpus, &Hyperparams::default());
            if check {
                println!("{}", serde_json::to_string_pretty(&format::ingest_report(&corpus))?);
            } else {
                println!("{} items, {} spaces", corpus.len(), corpus.num_spaces());
            }
        }
        Command::Simulate { data, policy, checkpoints, sessions, noise, seed, label_noise } => {
            let bench = data.benchmark()?;
            let corpus = data.corpus(&bench)?;
            warn_params(&corpus, &bench.params);
            let predictors = load_predictors(checkpoints.as_deref(), &corpus, policy == Policy::Ours)?;
            let mut options = RunOptions::new(policy).with_predictors(&predictors);
            options.label_noise = label_noise;
            for (k, q) in random_queries(&corpus, sessions, noise, seed)?.iter().enumerate() {
                let trace = run_session(
                    &corpus,
                    q.target,
                    &Query::Vectors(q.vectors.clone()),
                    &bench.params,
                    kis::eval::session_seed(seed, k),
                    &options,
                )?;
                println!("{}", serde_json::to_string(&serde_json::json!({
                    "target": q.target,
                    "ranks": trace.ranks(),
                    "hit_step": trace.hit_step(),
                }))?);
            }
        }
        Command::GenTraj { data, out, per_bucket } => {
            let mut bench = data.benchmark()?;
            if let Some(n) = per_bucket {
                bench.training.queries.per_bucket = n;
            }
            let corpus = data.corpus(&bench)?;
            warn_params(&corpus, &bench.params);
            let eval = bench.eval_queries(&corpus)?;
            let queries = bench.training_queries(&corpus, &eval)?;
            let (records, stats) = bench.trajectories(&corpus, &queries)?;
            trajectory::write_jsonl(&out, &records)?;
            log::info!("kept {} of {} sessions ({:.3})", stats.kept, stats.sessions, stats.kept_fraction());
        }
        Command::Train { data, trajectories, space, out, epochs, no_state, no_distance } => {
            let bench = data.benchmark()?;
            let corpus = data.corpus(&bench)?;
            let records = read_trajectories(&trajectories)?;
            let f = corpus.space_index(&space).with_context(|| format!("unknown space {space}"))?;
            let mut plan = bench.training.clone();
            if let Some(e) = epochs {
                plan.train = TrainConfig { epochs: e, ..plan.train };
            }
            let config = PredictorConfig {
                use_state_embedding: !no_state,
                use_distance_embedding: !no_distance,
                ..plan.predictor.clone()
            };
            let only = single_space(&corpus, f)?;
            let models = train_predictors(&only, &records_for(&records, f), &plan, &config)?;
            let path = if out.extension().is_some() {
                let bytes = checkpoint::encode(&space, &models.predictors[0], Some(&models.spaces[0].report));
                std::fs::write(&out, bytes).with_context(|| out.display().to_string())?;
                out
            } else {
                checkpoint::save(&out, &space, &models.predictors[0], Some(&models.spaces[0].report))?
            };
            println!("{}", serde_json::to_string_pretty(&models.spaces[0])?);
            log::info!("wrote {}", path.display());
        }
        Command::Evaluate { data, policies, prune, ablate, checkpoints, per_bucket, csv, json } => {
            let mut bench = data.benchmark()?;
            if let Some(n) = per_bucket {
                bench.eval.per_bucket = n;
            }
            let corpus = data.corpus(&bench)?;
            warn_params(&corpus, &bench.params);
            let queries = bench.eval_queries(&corpus)?;
            let needs_ours = policies.contains(&Policy::Ours) || !ablate.is_empty();
            let full = load_predictors(checkpoints.as_deref(), &corpus, needs_ours)?;
            let load_ablated = |a: Ablation| -> anyhow::Result<Vec<Predictor<f32>>> {
                match (a, checkpoints.as_deref()) {
                    (Ablation::StateRep | Ablation::DistEmb, Some(dir)) => {
                        let models = checkpoint::load_all(&dir.join(format!("no-{}", a.name())), &corpus)?;
                        for p in &models {
                            if *p.config() != ablated_config(p.config(), a) {
                                bail!("checkpoints under no-{} still use the ablated input", a.name());
                            }
                        }
                        Ok(models)
                    }
                    _ => Ok(full.clone()),
                }
            };
            let ablated: Vec<(Ablation, Vec<Predictor<f32>>)> =
                ablate.iter().map(|&a| Ok((a, load_ablated(a)?))).collect::<anyhow::Result<_>>()?;
            let prunes: &[bool] = match prune {
                Prune::On => &[true],
                Prune::Off => &[false],
                Prune::Both => &[true, false],
            };
            let mut variants = Vec::new();
            for &p in prunes {
                for &policy in &policies {
                    variants.push(Variant { policy, ablation: Ablation::None, prune: p, predictors: &full });
                }
                for (a, preds) in &ablated {
                    variants.push(Variant { policy: Policy::Ours, ablation: *a, prune: p, predictors: preds });
                }
            }
            let mut report = evaluate(&corpus, &queries, &bench.params, bench.session_seed, &variants)?;
            if needs_ours {
                report.checkpoint_sha256 = Some(checkpoint::fingerprint(&full));
            }
            save_report(&report, &csv, &json)?;
            for v in &report.variants {
                println!(
                    "{:24} prune={:3} step-{} recall@1 {:.4}",
                    v.name,
                    if v.prune { "on" } else { "off" },
                    report.max_steps,
                    v.recall_at(1, report.max_steps).unwrap_or(0.0)
                );
            }
            for c in &report.comparisons {
                println!("{} vs {}: t={:?} p={:?}", c.a, c.b, c.t_test.t, c.t_test.p_value);
            }
        }
        Command::Serve { corpus, checkpoints, port, host, media } => {
            let corpus = format::load_corpus(&corpus)?;
            let defaults = Hyperparams::default();
            warn_params(&corpus, &defaults);
            let predictors = load_predictors(checkpoints.as_deref(), &corpus, false)?;
            let state = service::AppState::new(Arc::new(corpus), predictors, defaults)
                .with_media_root(media)
                .with_log_dir(std::env::var_os("KIS_LOG_DIR").map(PathBuf::from));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(state, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}

fn warn_params(corpus: &Corpus, params: &Hyperparams) {
    if params.n_prune >= corpus.len() {
        log::warn!("n_prune {} ≥ corpus size {}: pruning keeps every item", params.n_prune, corpus.len());
    }
    if corpus.num_spaces() % 2 == 0 {
        log::warn!("{} spaces: majority votes can tie, ties go to the first item", corpus.num_spaces());
    }
}

fn load_predictors(dir: Option<&Path>, corpus: &Corpus, required: bool) -> anyhow::Result<Vec<Predictor<f32>>> {
    match dir {
        Some(d) => Ok(checkpoint::load_all(d, corpus)?),
        None if required => bail!("policy `ours` needs --checkpoints"),
        None => Ok(Vec::new()),
    }
}

fn read_trajectories(path: &Path) -> anyhow::Result<Vec<trajectory::TrajectoryRecord>> {
    if !path.is_dir() {
        return Ok(trajectory::read_jsonl(path)?);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(trajectory::read_jsonl(&f)?);
    }
    if out.is_empty() {
        bail!("no trajectories under {}", path.display());
    }
    Ok(out)
}

/// Corpus view holding only space `f`, so training touches one space.
fn single_space(corpus: &Corpus, f: usize) -> anyhow::Result<Corpus> {
    Ok(Corpus::from_spaces(vec![corpus.space(f).clone()])?)
}

/// Records restricted to space `f`.
fn records_for(records: &[trajectory::TrajectoryRecord], f: usize) -> Vec<trajectory::TrajectoryRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.query = vec![r.query[f].clone()];
            for s in &mut r.steps {
                s.state_embeddings = vec![s.state_embeddings[f].clone()];
                for a in &mut s.alignment {
                    *a = vec![a[f]];
                }
            }
            r
        })
        .collect()
}
