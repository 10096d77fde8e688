//! End-to-end run: data, masks, base model, sketches, attribution,
//! selection, fine-tuning and evaluation, with content-hash stage caching.
//!
//! Each stage records a hash of its parameters and input files in
//! `run_manifest.json`. A rerun skips a stage whose input hash is unchanged
//! and whose outputs still match their recorded hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{influence_matrix, InfluenceMatrix};
use crate::config::RunConfig;
use crate::dataset::{build_corpus, CorpusConfig, CorpusManifest, VideoClip};
use crate::error::{Error, Result};
use crate::genmodel::{
    load_checkpoint, save_checkpoint, train, Model, ModelConfig, ModelParams, TrainConfig, TrainExample,
};
use crate::gradients::{make_noise_pair, per_example_gradient, Fingerprint, GradInput, Weighting};
use crate::motion::{MaskCache, MotionConfig, MotionWeights};
use crate::oracle::QueryLoss;
use crate::report;
use crate::rng;
use crate::selection::{budget, majority_vote, SelectionReport, ThresholdScope};
use crate::sketch::{load_sketches, FastfoodState, SketchStore};

pub fn load_standardized(manifest: &CorpusManifest) -> Result<Vec<VideoClip>> {
    Ok(manifest.load_corpus()?.standardized())
}

/// Generates and persists a corpus.
pub fn gen_data(config: &CorpusConfig, out: &Path) -> Result<CorpusManifest> {
    build_corpus(config, out)
}

/// Motion masks for every clip of a corpus, written to a fresh cache.
pub fn estimate_flow(manifest: &CorpusManifest, motion: &MotionConfig, out: &Path) -> Result<usize> {
    if out.exists() {
        fs::remove_file(out).map_err(|e| Error::io(out, e))?;
    }
    let clips = load_standardized(manifest)?;
    let weights = clips
        .par_iter()
        .map(|c| MotionWeights::for_clip(c, motion))
        .collect::<Result<Vec<_>>>()?;
    let mut cache = MaskCache::open(out)?;
    for (clip, w) in clips.iter().zip(&weights) {
        if w.uniform_fallback {
            log::info!("clip {} has no detectable motion; using a uniform mask", clip.clip_id);
        }
        cache.append(clip.clip_id, w)?;
    }
    Ok(cache.len())
}

fn examples(model: &Model, clips: &[VideoClip]) -> Result<Vec<TrainExample>> {
    crate::experiment::encode_examples(model, clips)
}

/// Trains from a seeded initialization; returns the checkpoint hash.
pub fn train_model(
    model_config: &ModelConfig,
    manifest: &CorpusManifest,
    config: &TrainConfig,
    init_seed: u64,
    out: &Path,
) -> Result<String> {
    let model = Model::new(*model_config)?;
    let data = examples(&model, &load_standardized(manifest)?)?;
    let init = ModelParams::init(model.config.arch, init_seed);
    let outcome = train(&model, &init, &data, config)?;
    if let (Some(first), Some(last)) = (outcome.step_losses.first(), outcome.step_losses.last()) {
        log::info!("training loss {first:.4} -> {last:.4} over {} steps", outcome.step_losses.len());
    }
    save_checkpoint(out, model_config, &outcome.params)
}

/// Continues training a checkpoint on the clips named by a selection.
pub fn finetune(
    checkpoint: &Path,
    manifest: &CorpusManifest,
    selection: &SelectionReport,
    config: &TrainConfig,
    out: &Path,
) -> Result<String> {
    let (model_config, params) = load_checkpoint(checkpoint)?;
    let model = Model::new(model_config)?;
    let subset = crate::selection::export_subset(selection, manifest)?;
    let data = examples(&model, &load_standardized(&subset)?)?;
    let outcome = train(&model, &params, &data, config)?;
    save_checkpoint(out, &model_config, &outcome.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradsSummary {
    pub written: usize,
    pub skipped: Vec<(u64, String)>,
    pub fingerprint: String,
}

/// Per-example gradients at the shared draw for `seed`, projected and
/// appended to a new sketch store. Motion-weighted when `masks` is given.
/// Clips with a zero gradient are skipped and logged.
pub fn compute_sketches(
    checkpoint: &Path,
    manifest: &CorpusManifest,
    masks: Option<&Path>,
    seed: u64,
    t_hat: Option<u32>,
    sketch_dim: usize,
    out: &Path,
) -> Result<GradsSummary> {
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let (model_config, params) = crate::genmodel::checkpoint::decode_checkpoint(&bytes)?;
    let ckpt_hash: [u8; 32] = Sha256::digest(&bytes).into();
    let model = Model::new(model_config)?;
    let clips = load_standardized(manifest)?;
    let latents = clips.par_iter().map(|c| model.encode(c)).collect::<Result<Vec<_>>>()?;
    let cache = masks.map(MaskCache::open).transpose()?;
    let weighting = if cache.is_some() { Weighting::Motion } else { Weighting::Uniform };
    let canonical = manifest.canonical_f;
    let pair = make_noise_pair(&model, rng::derive(seed, "attribution"), t_hat, canonical)?;
    let run_fp = Fingerprint::for_run(&pair, &ckpt_hash);
    let projector = FastfoodState::new(params.len(), sketch_dim, rng::derive(seed, "projection"))?;
    let store_fp = run_fp.with_projection(projector.seed, sketch_dim);

    let mut inputs = Vec::with_capacity(clips.len());
    for (clip, latent) in clips.iter().zip(&latents) {
        let weights = match &cache {
            Some(c) => Some(
                c.get(clip.clip_id)
                    .ok_or(Error::UnknownClip(clip.clip_id))?
                    .latent_weights
                    .as_slice(),
            ),
            None => None,
        };
        inputs.push(GradInput {
            clip_id: clip.clip_id,
            label: clip.category_label,
            latent,
            weights,
        });
    }
    let results: Vec<Result<_>> = inputs
        .par_iter()
        .map(|i| projector.project(&per_example_gradient(&model, &params, i, &pair, run_fp)?))
        .collect();
    let mut store = SketchStore::create(out, sketch_dim, store_fp, weighting)?;
    let mut sketches = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => sketches.push(s),
            Err(e @ (Error::ZeroGradient(id) | Error::NonFiniteGradient(id))) => {
                log::warn!("skipping clip {id}: {e}");
                skipped.push((id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    store.append_all(&sketches)?;
    Ok(GradsSummary {
        written: sketches.len(),
        skipped,
        fingerprint: store_fp.to_hex(),
    })
}

/// Scores every query sketch against every training sketch.
pub fn attribute(train_store: &Path, query_store: &Path, out: &Path) -> Result<InfluenceMatrix> {
    let (_, train) = load_sketches(train_store)?;
    let (_, queries) = load_sketches(query_store)?;
    let matrix = influence_matrix(&train, &queries)?;
    matrix.save_csv(out)?;
    Ok(matrix)
}

pub fn select(matrix: &InfluenceMatrix, tau: f64, k_frac: f64, scope: ThresholdScope) -> Result<SelectionReport> {
    majority_vote(matrix, tau, budget(matrix.cols(), k_frac), scope)
}

/// A seeded uniform sample of `k` ids in the same report format.
pub fn random_selection(ids: &[u64], k: usize, seed: u64) -> SelectionReport {
    let mut pool = ids.to_vec();
    pool.shuffle(&mut rng::chacha(rng::derive(seed, "random-arm")));
    pool.truncate(k);
    pool.sort_unstable();
    SelectionReport {
        selected: pool,
        k,
        tau: 0.0,
        scope: ThresholdScope::PerQuery,
        votes: Vec::new(),
        cutoffs: Vec::new(),
        degenerate_queries: Vec::new(),
        truncated: k > ids.len(),
        trace: Vec::new(),
        fingerprint: String::new(),
    }
}

/// Mean query loss of a checkpoint over fixed draws; motion-weighted when
/// masks are given.
pub fn evaluate(checkpoint: &Path, queries: &CorpusManifest, masks: Option<&Path>, draws: usize, seed: u64) -> Result<f64> {
    let (model_config, params) = load_checkpoint(checkpoint)?;
    let model = Model::new(model_config)?;
    let cache = masks.map(MaskCache::open).transpose()?;
    let losses = load_standardized(queries)?
        .iter()
        .map(|clip| {
            let weights = match &cache {
                Some(c) => Some(c.get(clip.clip_id).ok_or(Error::UnknownClip(clip.clip_id))?.latent_weights.clone()),
                None => None,
            };
            Ok(QueryLoss::new(
                &model,
                model.encode(clip)?,
                clip.category_label,
                weights,
                draws,
                rng::derive(seed, "eval"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    QueryLoss::eval_all(&losses, &model, &params)
}

/// Fixed file layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    pub fn pool(&self) -> PathBuf {
        self.root.join("data/pool")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("data/queries")
    }

    pub fn masks(&self, role: &str) -> PathBuf {
        self.root.join(format!("masks/{role}.bin"))
    }

    pub fn base_checkpoint(&self) -> PathBuf {
        self.root.join("models/base.ckpt")
    }

    pub fn store(&self, weighting: Weighting, role: &str) -> PathBuf {
        self.root.join(format!("sketches/{}_{role}.bin", weighting_name(weighting)))
    }

    pub fn matrix(&self, weighting: Weighting) -> PathBuf {
        self.root.join(format!("attribution/{}.csv", weighting_name(weighting)))
    }

    pub fn selection(&self, arm: &str) -> PathBuf {
        self.root.join(format!("selection/{arm}.json"))
    }

    pub fn finetuned(&self, arm: &str) -> PathBuf {
        self.root.join(format!("models/{arm}.ckpt"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Uniform => "uniform",
        Weighting::Motion => "motion",
    }
}

fn corpus_files(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join(crate::dataset::MANIFEST_FILE), dir.join(crate::dataset::CONTAINER_FILE)]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_seconds: f64,
    pub ran: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub master_seed: u64,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path).map_err(|e| Error::io(path, e))?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub base: f64,
    pub random: f64,
    pub uniform: f64,
    pub motion: f64,
}

/// Deterministic summary of a run; timing lives in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub master_seed: u64,
    pub config_hash: String,
    pub fingerprint: String,
    pub pool_size: usize,
    pub k: usize,
    pub query_ids: Vec<u64>,
    /// Motion-weighted held-out query loss after fine-tuning on each arm.
    pub query_motion_loss: ArmReport,
    pub selected: BTreeMap<String, Vec<u64>>,
    pub skipped: Vec<(u64, String)>,
}

struct Runner<'a> {
    paths: &'a RunPaths,
    manifest: RunManifest,
    force: bool,
}

impl Runner<'_> {
    /// Runs `body` unless the recorded stage matches `params` and `inputs`
    /// and every output still hashes to its recorded value.
    fn stage(
        &mut self,
        name: &'static str,
        params: &impl Serialize,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<bool> {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(serde_json::to_vec(params)?);
        for p in inputs {
            h.update(file_hash(p).map_err(|e| e.in_stage(name))?.as_bytes());
        }
        let input_hash = hex::encode(h.finalize());
        if !self.force {
            if let Some(rec) = self.manifest.stages.get(name) {
                let fresh = rec.input_hash == input_hash
                    && outputs.iter().all(|p| {
                        rec.outputs.get(&self.rel(p)).is_some_and(|want| file_hash(p).is_ok_and(|got| &got == want))
                    });
                if fresh {
                    log::info!("stage {name}: inputs unchanged, skipping");
                    if let Some(r) = self.manifest.stages.get_mut(name) {
                        r.ran = false;
                    }
                    return Ok(false);
                }
            }
        }
        log::info!("stage {name}: running");
        let start = Instant::now();
        for p in outputs {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        body().map_err(|e| e.in_stage(name))?;
        let mut record = StageRecord {
            input_hash,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            ran: true,
            ..StageRecord::default()
        };
        for p in outputs {
            record.outputs.insert(self.rel(p), file_hash(p).map_err(|e| e.in_stage(name))?);
        }
        self.manifest.stages.insert(name.to_string(), record);
        self.save()?;
        Ok(true)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.paths.root).unwrap_or(p).display().to_string()
    }

    fn save(&self) -> Result<()> {
        let path = self.paths.manifest();
        fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?).map_err(|e| Error::io(&path, e))
    }
}

/// Clips present in a corpus but missing from its sketch stores.
fn skipped_clips(paths: &RunPaths, pool: &CorpusManifest, queries: &CorpusManifest) -> Result<Vec<(u64, String)>> {
    let mut out = Vec::new();
    for w in [Weighting::Uniform, Weighting::Motion] {
        for (role, manifest) in [("train", pool), ("query", queries)] {
            let (_, sketches) = load_sketches(&paths.store(w, role))?;
            let present: std::collections::BTreeSet<u64> = sketches.iter().map(|s| s.clip_id).collect();
            for id in manifest.ids().into_iter().filter(|id| !present.contains(id)) {
                out.push((id, format!("no {} gradient", weighting_name(w))));
            }
        }
    }
    Ok(out)
}

/// Hash of every setting except the output directory, so identical runs
/// in different places report the same hash.
pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.out_dir = PathBuf::new();
    hex::encode(Sha256::digest(c.to_text().as_bytes()))
}

/// Runs every stage under `config.out_dir`. With `force`, cached stages
/// are recomputed.
pub fn run_pipeline(config: &RunConfig, force: bool) -> Result<PipelineReport> {
    config.validate()?;
    let paths = RunPaths::new(&config.out_dir);
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    fs::write(paths.config(), config.to_text()).map_err(|e| Error::io(paths.config(), e))?;
    let previous = fs::read(paths.manifest())
        .ok()
        .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
        .filter(|m| m.master_seed == config.seed)
        .unwrap_or_default();
    let mut runner = Runner {
        paths: &paths,
        manifest: RunManifest {
            master_seed: config.seed,
            config_hash: config_hash(config),
            stages: previous.stages,
        },
        force,
    };

    let pool_files = corpus_files(&paths.pool());
    let query_files = corpus_files(&paths.queries());
    let corpus_outputs: Vec<PathBuf> = pool_files.iter().chain(&query_files).cloned().collect();
    let (pool_cfg, query_cfg) = (config.pool_config(), config.query_config());
    runner.stage("gen-data", &(&pool_cfg, &query_cfg), &[], &corpus_outputs, || {
        gen_data(&pool_cfg, &paths.pool())?;
        gen_data(&query_cfg, &paths.queries())?;
        Ok(())
    })?;
    let pool = CorpusManifest::open(&paths.pool())?;
    let queries = CorpusManifest::open(&paths.queries())?;

    let motion = config.motion();
    let masks = [paths.masks("pool"), paths.masks("queries")];
    runner.stage("estimate-flow", &motion, &corpus_outputs, &masks, || {
        estimate_flow(&pool, &motion, &masks[0])?;
        estimate_flow(&queries, &motion, &masks[1])?;
        Ok(())
    })?;

    let model_config = config.model_config();
    let base_train = config.base_training();
    let base = paths.base_checkpoint();
    runner.stage("train", &(&model_config, &base_train), &pool_files, std::slice::from_ref(&base), || {
        train_model(&model_config, &pool, &base_train, rng::derive(config.seed, "init"), &base).map(drop)
    })?;

    let weightings = [Weighting::Uniform, Weighting::Motion];
    let stores: Vec<PathBuf> = weightings
        .iter()
        .flat_map(|&w| [paths.store(w, "train"), paths.store(w, "query")])
        .collect();
    let mut grad_inputs = vec![base.clone()];
    grad_inputs.extend(corpus_outputs.iter().cloned());
    grad_inputs.extend(masks.iter().cloned());
    let grad_params = (config.seed, config.t_hat, config.sketch_dim);
    runner.stage("grads", &grad_params, &grad_inputs, &stores, || {
        for w in weightings {
            let (pm, qm) = match w {
                Weighting::Uniform => (None, None),
                Weighting::Motion => (Some(masks[0].as_path()), Some(masks[1].as_path())),
            };
            let t_hat = Some(config.t_hat);
            compute_sketches(&base, &pool, pm, config.seed, t_hat, config.sketch_dim, &paths.store(w, "train"))?;
            compute_sketches(&base, &queries, qm, config.seed, t_hat, config.sketch_dim, &paths.store(w, "query"))?;
        }
        Ok(())
    })?;

    let matrices: Vec<PathBuf> = weightings.iter().map(|&w| paths.matrix(w)).collect();
    let matrix_outputs: Vec<PathBuf> = matrices
        .iter()
        .flat_map(|m| [m.clone(), crate::attribution::sidecar_path(m)])
        .collect();
    runner.stage("attribute", &(), &stores, &matrix_outputs, || {
        for w in weightings {
            attribute(&paths.store(w, "train"), &paths.store(w, "query"), &paths.matrix(w))?;
        }
        Ok(())
    })?;

    let arms = ["random", "uniform", "motion"];
    let selections: Vec<PathBuf> = arms.iter().map(|a| paths.selection(a)).collect();
    let select_params = (config.seed, config.tau, config.k_frac, config.threshold_scope());
    let mut select_inputs = matrix_outputs.clone();
    select_inputs.push(pool_files[0].clone());
    runner.stage("select", &select_params, &select_inputs, &selections, || {
        let k = budget(pool.entries.len(), config.k_frac);
        random_selection(&pool.ids(), k, config.seed).save(&paths.selection("random"))?;
        for w in weightings {
            let m = InfluenceMatrix::load_csv(&paths.matrix(w))?;
            select(&m, config.tau, config.k_frac, config.threshold_scope())?.save(&paths.selection(weighting_name(w)))?;
        }
        Ok(())
    })?;

    let finetune_cfg = config.finetuning();
    let tuned: Vec<PathBuf> = arms.iter().map(|a| paths.finetuned(a)).collect();
    let mut ft_inputs = vec![base.clone()];
    ft_inputs.extend(pool_files.iter().cloned());
    ft_inputs.extend(selections.iter().cloned());
    runner.stage("finetune", &finetune_cfg, &ft_inputs, &tuned, || {
        for arm in arms {
            let sel = SelectionReport::load(&paths.selection(arm))?;
            finetune(&base, &pool, &sel, &finetune_cfg, &paths.finetuned(arm))?;
        }
        Ok(())
    })?;

    let report_path = paths.report();
    let mut eval_inputs = vec![base.clone()];
    eval_inputs.extend(tuned.iter().cloned());
    eval_inputs.extend(query_files.iter().cloned());
    eval_inputs.extend(selections.iter().cloned());
    eval_inputs.push(masks[1].clone());
    eval_inputs.extend(stores.iter().cloned());
    let eval_params = (config.seed, config.eval_draws, config_hash(config));
    runner.stage("evaluate", &eval_params, &eval_inputs, std::slice::from_ref(&report_path), || {
        let loss = |ckpt: &Path| evaluate(ckpt, &queries, Some(&masks[1]), config.eval_draws, config.seed);
        let mut selected = BTreeMap::new();
        for arm in arms {
            selected.insert(arm.to_string(), SelectionReport::load(&paths.selection(arm))?.selected);
        }
        let (header, _) = load_sketches(&paths.store(Weighting::Motion, "train"))?;
        let report = PipelineReport {
            master_seed: config.seed,
            config_hash: config_hash(config),
            fingerprint: header.fingerprint.to_hex(),
            pool_size: pool.entries.len(),
            k: budget(pool.entries.len(), config.k_frac),
            query_ids: queries.ids(),
            query_motion_loss: ArmReport {
                base: loss(&base)?,
                random: loss(&paths.finetuned("random"))?,
                uniform: loss(&paths.finetuned("uniform"))?,
                motion: loss(&paths.finetuned("motion"))?,
            },
            selected,
            skipped: skipped_clips(&paths, &pool, &queries)?,
        };
        fs::write(&report_path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&report_path, e))
    })?;

    let report_dir = paths.report_dir();
    let report_outputs = [
        report_dir.join("query_overlap.csv"),
        report_dir.join("selection_overlap.csv"),
        report_dir.join("votes.csv"),
    ];
    let mut report_inputs = matrix_outputs.clone();
    report_inputs.extend(selections.iter().cloned());
    runner.stage("report", &(), &report_inputs, &report_outputs, || {
        let m = InfluenceMatrix::load_csv(&paths.matrix(Weighting::Motion))?;
        let sel = SelectionReport::load(&paths.selection("motion"))?;
        let others = vec![
            ("uniform".to_string(), SelectionReport::load(&paths.selection("uniform"))?.selected),
            ("random".to_string(), SelectionReport::load(&paths.selection("random"))?.selected),
        ];
        report::write_report(&m, &sel, &others, &report_dir).map(drop)
    })?;

    runner.save()?;
    let bytes = fs::read(&report_path).map_err(|e| Error::io(&report_path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
