//! A trained model together with its clips, masks and shared noise: the
//! common starting point for attribution runs, oracles and ablations.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{influence_matrix, influence_pair};
use crate::dataset::{Category, Corpus, CorpusConfig, VideoClip};
use crate::error::Result;
use crate::genmodel::{
    checkpoint_hash, train, LatentClip, Model, ModelConfig, ModelParams, TrainConfig, TrainExample,
};
use crate::gradients::{
    batch_gradients, make_noise_pair, Fingerprint, GradInput, GradVector, NoisePair, Weighting,
};
use crate::motion::{MotionConfig, MotionWeights};
use crate::oracle::{spearman, LooModels, QueryLoss};
use crate::rng;
use crate::selection::{budget, majority_vote, percentile, ThresholdScope, DEFAULT_K_FRAC, DEFAULT_TAU};
use crate::sketch::{FastfoodState, DEFAULT_SKETCH_DIM};

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub counts: Vec<(Category, usize)>,
    pub seed: u64,
    pub variable_length: bool,
    pub train: TrainConfig,
    pub motion: MotionConfig,
    pub t_hat: Option<u32>,
}

impl FixtureConfig {
    pub fn new(counts: &[(Category, usize)], seed: u64) -> Self {
        FixtureConfig {
            counts: counts.to_vec(),
            seed,
            variable_length: false,
            train: TrainConfig {
                seed: rng::derive(seed, "train"),
                ..TrainConfig::default()
            },
            motion: MotionConfig::default(),
            t_hat: None,
        }
    }

    /// `per_category` clips of every category.
    pub fn balanced(per_category: usize, seed: u64) -> Self {
        let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, per_category)).collect();
        Self::new(&counts, seed)
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            variable_length: self.variable_length,
            ..CorpusConfig::with_counts(&self.counts, rng::derive(self.seed, "corpus"))
        }
    }
}

/// Everything needed to compute gradients for a fixed set of clips.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub model: Model,
    pub params: ModelParams,
    pub clips: Vec<VideoClip>,
    pub latents: Vec<LatentClip>,
    pub weights: Vec<MotionWeights>,
    pub checkpoint_hash: [u8; 32],
    pub pair: NoisePair,
    pub fingerprint: Fingerprint,
}

impl Workbench {
    /// Generates the corpus and trains a model on it from scratch.
    pub fn build(config: &FixtureConfig) -> Result<Self> {
        let corpus = Corpus::generate(&config.corpus_config())?;
        let clips = if config.variable_length {
            corpus.clips
        } else {
            corpus.standardized()
        };
        let model = Model::new(ModelConfig::default())?;
        let init = ModelParams::init(model.config.arch, rng::derive(config.seed, "init"));
        let examples = encode_examples(&model, &clips)?;
        let mut params = train(&model, &init, &examples, &config.train)?.params;
        params.round_to_f32();
        Self::from_parts(model, params, clips, &config.motion, config.seed, config.t_hat)
    }

    /// Wraps an existing model and parameter vector.
    pub fn from_parts(
        model: Model,
        params: ModelParams,
        clips: Vec<VideoClip>,
        motion: &MotionConfig,
        seed: u64,
        t_hat: Option<u32>,
    ) -> Result<Self> {
        let latents = clips.par_iter().map(|c| model.encode(c)).collect::<Result<Vec<_>>>()?;
        let weights = clips
            .par_iter()
            .map(|c| MotionWeights::for_clip(c, motion))
            .collect::<Result<Vec<_>>>()?;
        let checkpoint_hash = checkpoint_hash(&model.config, &params)?;
        let canonical = clips.iter().map(|c| c.frame_count).max().unwrap_or(8).min(8);
        let pair = make_noise_pair(&model, rng::derive(seed, "attribution"), t_hat, canonical)?;
        let fingerprint = Fingerprint::for_run(&pair, &checkpoint_hash);
        Ok(Workbench {
            model,
            params,
            clips,
            latents,
            weights,
            checkpoint_hash,
            pair,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.clips.iter().map(|c| c.clip_id).collect()
    }

    pub fn input(&self, i: usize, weighting: Weighting) -> GradInput<'_> {
        GradInput {
            clip_id: self.clips[i].clip_id,
            label: self.clips[i].category_label,
            latent: &self.latents[i],
            weights: match weighting {
                Weighting::Uniform => None,
                Weighting::Motion => Some(&self.weights[i].latent_weights),
            },
        }
    }

    pub fn inputs(&self, weighting: Weighting) -> Vec<GradInput<'_>> {
        (0..self.len()).map(|i| self.input(i, weighting)).collect()
    }

    pub fn examples(&self) -> Vec<TrainExample> {
        self.clips
            .iter()
            .zip(&self.latents)
            .map(|(c, z)| TrainExample::new(c.clip_id, c.category_label, z.clone()))
            .collect()
    }

    pub fn gradients(&self, weighting: Weighting) -> Vec<Result<GradVector>> {
        batch_gradients(&self.model, &self.params, &self.inputs(weighting), &self.pair, self.fingerprint)
    }

    /// Same model and noise, different clips.
    pub fn with_clips(&self, clips: Vec<VideoClip>, motion: &MotionConfig) -> Result<Self> {
        let latents = clips.par_iter().map(|c| self.model.encode(c)).collect::<Result<Vec<_>>>()?;
        let weights = clips
            .par_iter()
            .map(|c| MotionWeights::for_clip(c, motion))
            .collect::<Result<Vec<_>>>()?;
        Ok(Workbench {
            clips,
            latents,
            weights,
            ..self.clone()
        })
    }
}

pub fn encode_examples(model: &Model, clips: &[VideoClip]) -> Result<Vec<TrainExample>> {
    clips
        .par_iter()
        .map(|c| Ok(TrainExample::new(c.clip_id, c.category_label, model.encode(c)?)))
        .collect()
}

/// One run of the four-arm fine-tuning comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrialConfig {
    pub pool_per_category: usize,
    pub target: Category,
    pub queries: usize,
    pub base: TrainConfig,
    pub finetune: TrainConfig,
    pub tau: f64,
    pub k_frac: f64,
    pub sketch_dim: usize,
    pub eval_draws: usize,
    pub seed: u64,
}

impl SelectionTrialConfig {
    pub fn new(target: Category, seed: u64) -> Self {
        SelectionTrialConfig {
            pool_per_category: 10,
            target,
            queries: 4,
            base: TrainConfig {
                seed: rng::derive(seed, "base-train"),
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                steps: 60,
                seed: rng::derive(seed, "finetune"),
                ..TrainConfig::default()
            },
            tau: DEFAULT_TAU,
            k_frac: DEFAULT_K_FRAC,
            sketch_dim: DEFAULT_SKETCH_DIM,
            eval_draws: 10,
            seed,
        }
    }
}

/// Held-out query loss after fine-tuning on each arm's subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmLosses {
    pub base: f64,
    pub random: f64,
    pub uniform: f64,
    pub motion: f64,
    pub random_ids: Vec<u64>,
    pub uniform_ids: Vec<u64>,
    pub motion_ids: Vec<u64>,
}

pub fn selection_trial(config: &SelectionTrialConfig) -> Result<ArmLosses> {
    let seed = config.seed;
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, config.pool_per_category)).collect();
    let pool_cfg = CorpusConfig::with_counts(&counts, rng::derive(seed, "pool"));
    let pool = Corpus::generate(&pool_cfg)?.standardized();
    let query_cfg = CorpusConfig {
        first_id: pool.len() as u64,
        ..CorpusConfig::with_counts(&[(config.target, config.queries)], rng::derive(seed, "queries"))
    };
    let queries = Corpus::generate(&query_cfg)?.standardized();

    let model = Model::new(ModelConfig::default())?;
    let init = ModelParams::init(model.config.arch, rng::derive(seed, "init"));
    let pool_examples = encode_examples(&model, &pool)?;
    let mut base = train(&model, &init, &pool_examples, &config.base)?.params;
    base.round_to_f32();

    let n = pool.len();
    let mut clips = pool;
    clips.extend(queries);
    let bench = Workbench::from_parts(model, base, clips, &MotionConfig::default(), seed, None)?;
    let projector = FastfoodState::new(bench.params.len(), config.sketch_dim, rng::derive(seed, "projection"))?;
    let k = budget(n, config.k_frac);

    let mut picks = Vec::new();
    for weighting in [Weighting::Uniform, Weighting::Motion] {
        let sketches = bench
            .gradients(weighting)
            .into_iter()
            .map(|g| projector.project(&g?))
            .collect::<Result<Vec<_>>>()?;
        let matrix = influence_matrix(&sketches[..n], &sketches[n..])?;
        picks.push(majority_vote(&matrix, config.tau, k, ThresholdScope::PerQuery)?.selected);
    }
    let motion_ids = picks.pop().unwrap_or_default();
    let uniform_ids = picks.pop().unwrap_or_default();
    let mut ids: Vec<u64> = (0..n as u64).collect();
    ids.shuffle(&mut rng::chacha(rng::derive(seed, "random-arm")));
    ids.truncate(k);
    ids.sort_unstable();
    let random_ids = ids;

    let query_losses: Vec<QueryLoss> = (n..bench.len())
        .map(|i| {
            QueryLoss::new(
                &bench.model,
                bench.latents[i].clone(),
                bench.clips[i].category_label,
                Some(bench.weights[i].latent_weights.clone()),
                config.eval_draws,
                rng::derive(seed, "eval"),
            )
        })
        .collect();
    let examples = bench.examples();
    let finetuned = |subset: &[u64]| -> Result<f64> {
        let data: Vec<TrainExample> = subset.iter().map(|&id| examples[id as usize].clone()).collect();
        let params = train(&bench.model, &bench.params, &data, &config.finetune)?.params;
        QueryLoss::eval_all(&query_losses, &bench.model, &params)
    };
    Ok(ArmLosses {
        base: QueryLoss::eval_all(&query_losses, &bench.model, &bench.params)?,
        random: finetuned(&random_ids)?,
        uniform: finetuned(&uniform_ids)?,
        motion: finetuned(&motion_ids)?,
        random_ids,
        uniform_ids,
        motion_ids,
    })
}

/// 64 clips across every category: ten static, nine of each moving one.
pub fn attribution_fixture(seed: u64) -> FixtureConfig {
    let mut cfg = FixtureConfig::balanced(9, seed);
    cfg.counts[0].1 = 10;
    cfg
}

/// Nine clips per category with lengths drawn from `{4, 8, 16}`.
pub fn frame_length_fixture(seed: u64) -> FixtureConfig {
    FixtureConfig {
        variable_length: true,
        ..FixtureConfig::balanced(9, seed)
    }
}

/// Every `stride`-th clip index.
pub fn strided(n: usize, stride: usize) -> Vec<usize> {
    (0..n).step_by(stride.max(1)).collect()
}

/// Queries for the frame-length study: every clip of the longest length.
/// Frame `k` of every clip shares noise with frame `k` of the query, so a
/// query at least as long as any training clip overlaps every clip on all
/// of its frames.
pub fn longest_clips(bench: &Workbench) -> Vec<usize> {
    let longest = bench.latents.iter().map(|z| z.frames).max().unwrap_or(0);
    (0..bench.len()).filter(|&i| bench.latents[i].frames == longest).collect()
}

/// Leave-one-out retraining against sketch influence on a small corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooStudy {
    pub train_ids: Vec<u64>,
    pub query_ids: Vec<u64>,
    /// `[query][train]` influence scores.
    pub scores: Vec<Vec<f64>>,
    /// `[query][train]` loss change when the clip is removed.
    pub deltas: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub mean_rho: f64,
    /// Mean per-query rho of each random-score draw.
    pub null: Vec<f64>,
    pub null_p95: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooConfig {
    pub counts: Vec<(Category, usize)>,
    pub queries: Vec<(Category, usize)>,
    pub train: TrainConfig,
    pub query_draws: usize,
    pub sketch_dim: usize,
    pub null_draws: usize,
    pub seed: u64,
}

impl LooConfig {
    /// Sixteen training clips, full-batch training, six held-out queries.
    pub fn new(seed: u64) -> Self {
        LooConfig {
            counts: vec![
                (Category::Static, 2),
                (Category::Slide, 3),
                (Category::Bounce, 2),
                (Category::Spin, 2),
                (Category::FreeFall, 3),
                (Category::FloatOsc, 2),
                (Category::Roll, 2),
            ],
            queries: vec![(Category::Slide, 2), (Category::Spin, 2), (Category::FreeFall, 2)],
            train: TrainConfig {
                steps: 100,
                batch_size: 16,
                seed: rng::derive(seed, "train"),
                ..TrainConfig::default()
            },
            query_draws: 10,
            sketch_dim: DEFAULT_SKETCH_DIM,
            null_draws: 100,
            seed,
        }
    }
}

/// Correlates unmasked single-sample influence at the trained model with
/// the unmasked query-loss change under leave-one-out retraining.
pub fn loo_study(config: &LooConfig) -> Result<LooStudy> {
    let seed = config.seed;
    let model = Model::new(ModelConfig::default())?;
    let clips = Corpus::generate(&CorpusConfig::with_counts(&config.counts, rng::derive(seed, "corpus")))?.standardized();
    let n = clips.len();
    let query_cfg = CorpusConfig {
        first_id: n as u64,
        ..CorpusConfig::with_counts(&config.queries, rng::derive(seed, "queries"))
    };
    let queries = Corpus::generate(&query_cfg)?.standardized();
    let data = encode_examples(&model, &clips)?;
    let init = ModelParams::init(model.config.arch, rng::derive(seed, "init"));
    let loo = LooModels::train(&model, &init, &data, &config.train)?;

    let mut all = clips;
    all.extend(queries);
    let bench = Workbench::from_parts(model, loo.full.clone(), all, &MotionConfig::default(), seed, None)?;
    let projector = FastfoodState::new(bench.params.len(), config.sketch_dim, rng::derive(seed, "projection"))?;
    let sketches = bench
        .gradients(Weighting::Uniform)
        .into_iter()
        .map(|g| projector.project(&g?))
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::new();
    let mut deltas = Vec::new();
    let mut rho = Vec::new();
    for q in n..bench.len() {
        let query = QueryLoss::new(
            &bench.model,
            bench.latents[q].clone(),
            bench.clips[q].category_label,
            None,
            config.query_draws,
            rng::derive(seed, "eval"),
        );
        let d = loo.deltas(&bench.model, &query)?;
        let s: Vec<f64> = (0..n)
            .map(|i| influence_pair(&sketches[q], &sketches[i]))
            .collect::<Result<_>>()?;
        rho.push(spearman(&s, &d)?);
        scores.push(s);
        deltas.push(d);
    }
    let mean_rho = rho.iter().sum::<f64>() / rho.len() as f64;

    let mut r = rng::chacha(rng::derive(seed, "null"));
    let mut null = Vec::with_capacity(config.null_draws);
    for _ in 0..config.null_draws {
        let mut total = 0.0;
        for d in &deltas {
            let random: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            total += spearman(&random, d)?;
        }
        null.push(total / deltas.len() as f64);
    }
    Ok(LooStudy {
        train_ids: bench.ids()[..n].to_vec(),
        query_ids: bench.ids()[n..].to_vec(),
        scores,
        deltas,
        rho,
        mean_rho,
        null_p95: percentile(&null, 95.0),
        null,
    })
}
