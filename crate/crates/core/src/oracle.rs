//! Brute-force references for the attribution estimators: full-gradient
//! cosines, multi-timestep averages, leave-one-out retraining and rank
//! correlation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{dot, evenly_spaced_timesteps};
use crate::error::{Error, Result};
use crate::experiment::Workbench;
use crate::genmodel::{train, LatentClip, Model, ModelParams, Reduction, TrainConfig, TrainExample};
use crate::gradients::{
    per_example_gradient, raw_gradient, Fingerprint, GradInput, NoisePair, Weighting,
};
use crate::rng;
use crate::sketch::FastfoodState;

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidParam(format!("need at least 3 points, got {}", x.len())));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Exact cosines between the query gradient and every training gradient.
pub fn full_gradient_influence(
    model: &Model,
    params: &ModelParams,
    train: &[GradInput<'_>],
    query: &GradInput<'_>,
    pair: &NoisePair,
) -> Result<Vec<f64>> {
    let fp = Fingerprint([0; 32]);
    let q = per_example_gradient(model, params, query, pair, fp)?.unit();
    train
        .par_iter()
        .map(|t| Ok(dot(&q, &per_example_gradient(model, params, t, pair, fp)?.unit())))
        .collect()
}

/// One sweep of an ablation: a rank correlation per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub config_hash: String,
    /// `(estimate, reference)` pairs behind each correlation.
    pub pairs: Vec<Vec<(f64, f64)>>,
}

impl AblationResult {
    pub fn new(name: &str, config: &impl Serialize) -> Result<Self> {
        let digest = Sha256::digest(serde_json::to_vec(config)?);
        Ok(AblationResult {
            name: name.into(),
            x: Vec::new(),
            rho: Vec::new(),
            config_hash: hex::encode(digest),
            pairs: Vec::new(),
        })
    }

    pub fn push(&mut self, x: f64, pairs: Vec<(f64, f64)>) -> Result<()> {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        self.rho.push(spearman(&a, &b)?);
        self.x.push(x);
        self.pairs.push(pairs);
        Ok(())
    }

    pub fn rho_at(&self, x: f64) -> Option<f64> {
        self.x.iter().position(|v| *v == x).map(|i| self.rho[i])
    }
}

/// Off-diagonal `(query, train)` cells of two `Q x N` matrices over the
/// same clips, with query `q` sitting at train position `query_idx[q]`.
fn off_diagonal(est: &[Vec<f64>], reference: &[Vec<f64>], query_idx: &[usize]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (q, (e, r)) in est.iter().zip(reference).enumerate() {
        for (n, (a, b)) in e.iter().zip(r).enumerate() {
            if n != query_idx[q] {
                out.push((*a, *b));
            }
        }
    }
    out
}

fn unit_gradients(bench: &Workbench, weighting: Weighting, pair: &NoisePair) -> Result<Vec<Vec<f64>>> {
    let inputs = bench.inputs(weighting);
    inputs
        .par_iter()
        .map(|i| Ok(per_example_gradient(&bench.model, &bench.params, i, pair, bench.fingerprint)?.unit()))
        .collect()
}

fn score_rows(units: &[Vec<f64>], query_idx: &[usize]) -> Vec<Vec<f64>> {
    query_idx
        .par_iter()
        .map(|&q| units.iter().map(|t| dot(&units[q], t)).collect())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct ProjectionAblationConfig<'a> {
    fingerprint: String,
    weighting: Weighting,
    dims: &'a [usize],
    seed: u64,
    queries: &'a [usize],
}

/// Spearman correlation between projected and full-gradient scores for
/// each sketch dimension, over all query/train pairs except self-pairs.
pub fn projection_ablation(
    bench: &Workbench,
    query_idx: &[usize],
    dims: &[usize],
    weighting: Weighting,
    seed: u64,
) -> Result<AblationResult> {
    let mut result = AblationResult::new(
        "projection",
        &ProjectionAblationConfig {
            fingerprint: bench.fingerprint.to_hex(),
            weighting,
            dims,
            seed,
            queries: query_idx,
        },
    )?;
    let grads = bench
        .gradients(weighting)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let units: Vec<Vec<f64>> = grads.iter().map(|g| g.unit()).collect();
    let full = score_rows(&units, query_idx);
    let d = bench.params.len();
    for &out_dim in dims {
        let state = FastfoodState::new(d, out_dim, seed)?;
        let sketches: Vec<Vec<f64>> = grads
            .par_iter()
            .map(|g| Ok(state.project(g)?.values.iter().map(|v| f64::from(*v)).collect()))
            .collect::<Result<_>>()?;
        let projected = score_rows(&sketches, query_idx);
        result.push(out_dim as f64, off_diagonal(&projected, &full, query_idx))?;
    }
    Ok(result)
}

/// Paired `(t, eps)` draws at evenly spaced timesteps, each with its own
/// noise.
pub fn timestep_sample_set(bench: &Workbench, count: usize, seed: u64) -> Vec<NoisePair> {
    let total = bench.model.config.schedule.total();
    evenly_spaced_timesteps(total, count)
        .into_iter()
        .enumerate()
        .map(|(j, t)| {
            NoisePair::new(
                rng::splitmix(rng::derive(seed, "oracle-samples"), j as u64),
                t,
                total,
                bench.pair.latent_shape,
                bench.pair.canonical_frames,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct TimestepAblationConfig<'a> {
    fingerprint: String,
    weighting: Weighting,
    candidates: &'a [u32],
    samples: usize,
    seed: u64,
    queries: &'a [usize],
    sketch_dim: Option<usize>,
}

/// Agreement between single-timestep scores at each candidate `t_hat`
/// and the averaged estimator over `samples` evenly spaced timesteps.
/// With `sketch_dim`, the single-timestep scores come from projected
/// sketches as in production; otherwise from full gradients.
pub fn timestep_ablation(
    bench: &Workbench,
    query_idx: &[usize],
    candidates: &[u32],
    samples: usize,
    weighting: Weighting,
    sketch_dim: Option<usize>,
    seed: u64,
) -> Result<AblationResult> {
    let mut result = AblationResult::new(
        "timestep",
        &TimestepAblationConfig {
            fingerprint: bench.fingerprint.to_hex(),
            weighting,
            candidates,
            samples,
            seed,
            queries: query_idx,
            sketch_dim,
        },
    )?;
    let set = timestep_sample_set(bench, samples, seed);
    let mut averaged = vec![vec![0.0; bench.len()]; query_idx.len()];
    for pair in &set {
        let rows = score_rows(&unit_gradients(bench, weighting, pair)?, query_idx);
        for (acc, row) in averaged.iter_mut().zip(rows) {
            for (a, s) in acc.iter_mut().zip(row) {
                *a += s / set.len() as f64;
            }
        }
    }
    let projector = match sketch_dim {
        Some(k) => Some(FastfoodState::new(bench.params.len(), k, seed)?),
        None => None,
    };
    for &t in candidates {
        let pair = NoisePair {
            t_hat: t,
            boundary: t == 0 || t == bench.model.config.schedule.total(),
            ..bench.pair.clone()
        };
        let inputs = bench.inputs(weighting);
        let units: Vec<Vec<f64>> = inputs
            .par_iter()
            .map(|i| {
                let g = per_example_gradient(&bench.model, &bench.params, i, &pair, bench.fingerprint)?;
                Ok(match &projector {
                    Some(p) => p.project(&g)?.values.iter().map(|v| f64::from(*v)).collect(),
                    None => g.unit(),
                })
            })
            .collect::<Result<_>>()?;
        let single = score_rows(&units, query_idx);
        result.push(f64::from(t), off_diagonal(&single, &averaged, query_idx))?;
    }
    Ok(result)
}

/// Outcome of the frame-length study on one set of gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLengthStudy {
    pub frame_counts: Vec<usize>,
    pub raw_scores: Vec<f64>,
    pub fixed_scores: Vec<f64>,
    /// `rho(score, F)` without the `1/F` fix.
    pub rho_raw: f64,
    /// `rho(score, F)` with it.
    pub rho_fixed: f64,
}

impl FrameLengthStudy {
    /// `1 - |rho_fixed| / |rho_raw|`.
    pub fn reduction(&self) -> f64 {
        1.0 - self.rho_fixed.abs() / self.rho_raw.abs()
    }

    pub fn to_ablation(&self) -> Result<AblationResult> {
        let mut r = AblationResult::new("framelen", &self.frame_counts)?;
        let f: Vec<f64> = self.frame_counts.iter().map(|&f| f as f64).collect();
        r.push(0.0, self.raw_scores.iter().copied().zip(f.iter().copied()).collect())?;
        r.push(1.0, self.fixed_scores.iter().copied().zip(f).collect())?;
        Ok(r)
    }
}

/// Influence of each clip on a set of queries as the gradient inner
/// product of the frame-summed loss, with and without dividing by frame
/// count. Cosine scores ignore gradient scale entirely, so the length
/// effect is measured on the unnormalized product.
pub fn frame_length_bias_study(bench: &Workbench, query_idx: &[usize]) -> Result<FrameLengthStudy> {
    let inputs = bench.inputs(Weighting::Uniform);
    let raw: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|i| {
            let eps = bench.pair.eps_for(i.latent.frames);
            raw_gradient(&bench.model, &bench.params, i, bench.pair.t(), &eps, Reduction::FrameSum)
        })
        .collect::<Result<_>>()?;
    let frame_counts: Vec<usize> = bench.latents.iter().map(|z| z.frames).collect();
    let mut raw_scores = vec![0.0; bench.len()];
    for &q in query_idx {
        let qg = &raw[q];
        for (n, g) in raw.iter().enumerate() {
            if n != q {
                raw_scores[n] += dot(qg, g) / frame_counts[q] as f64;
            }
        }
    }
    let keep: Vec<usize> = (0..bench.len()).filter(|n| !query_idx.contains(n)).collect();
    let fc: Vec<usize> = keep.iter().map(|&n| frame_counts[n]).collect();
    let rs: Vec<f64> = keep.iter().map(|&n| raw_scores[n]).collect();
    let fs: Vec<f64> = keep.iter().map(|&n| raw_scores[n] / frame_counts[n] as f64).collect();
    let f: Vec<f64> = fc.iter().map(|&v| v as f64).collect();
    Ok(FrameLengthStudy {
        rho_raw: spearman(&rs, &f)?,
        rho_fixed: spearman(&fs, &f)?,
        frame_counts: fc,
        raw_scores: rs,
        fixed_scores: fs,
    })
}

/// Fixed evaluation draws for a query clip's loss.
#[derive(Debug, Clone)]
pub struct QueryLoss {
    pub latent: LatentClip,
    pub label: u32,
    pub weights: Option<Vec<f32>>,
    pub draws: Vec<(f64, Vec<f64>)>,
}

impl QueryLoss {
    /// `draws` evenly spaced timesteps with seeded noise.
    pub fn new(model: &Model, latent: LatentClip, label: u32, weights: Option<Vec<f32>>, draws: usize, seed: u64) -> Self {
        let total = model.config.schedule.total();
        let mut r = rng::chacha(rng::derive(seed, "query-loss"));
        let draws = evenly_spaced_timesteps(total, draws)
            .into_iter()
            .map(|t| (f64::from(t), rng::gaussian_vec(&mut r, latent.z.len())))
            .collect();
        QueryLoss {
            latent,
            label,
            weights,
            draws,
        }
    }

    /// Mean loss over the draws; motion-weighted when weights are set.
    pub fn eval(&self, model: &Model, params: &ModelParams) -> Result<f64> {
        let reduction = match &self.weights {
            Some(w) => Reduction::Weighted(w),
            None => Reduction::Mean,
        };
        let mut total = 0.0;
        for (t, eps) in &self.draws {
            total += model.loss(params, &self.latent, self.label, *t, eps, reduction)?;
        }
        Ok(total / self.draws.len() as f64)
    }

    pub fn eval_all(queries: &[QueryLoss], model: &Model, params: &ModelParams) -> Result<f64> {
        let losses = queries.par_iter().map(|q| q.eval(model, params)).collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// `L_q(without idx) - L_q(full)` after retraining from `init` with the
/// same seeds and step count. The removed clip keeps its slot with zero
/// weight, so every other clip sees identical noise.
pub fn loo_retrain_influence(
    model: &Model,
    init: &ModelParams,
    data: &[TrainExample],
    config: &TrainConfig,
    query: &QueryLoss,
    idx: usize,
) -> Result<f64> {
    let without = retrain_without(model, init, data, config, idx)?;
    let full = train(model, init, data, config)?.params;
    Ok(query.eval(model, &without)? - query.eval(model, &full)?)
}

fn retrain_without(
    model: &Model,
    init: &ModelParams,
    data: &[TrainExample],
    config: &TrainConfig,
    idx: usize,
) -> Result<ModelParams> {
    if idx >= data.len() {
        return Err(Error::InvalidParam(format!(
            "removal index {idx} out of range for {} clips",
            data.len()
        )));
    }
    let mut reduced = data.to_vec();
    reduced[idx].weight = 0.0;
    Ok(train(model, init, &reduced, config)?.params)
}

/// The full-data model and one leave-one-out model per clip, retrained in
/// parallel. Query-independent, so one set serves many queries.
#[derive(Debug, Clone)]
pub struct LooModels {
    pub full: ModelParams,
    pub without: Vec<ModelParams>,
}

impl LooModels {
    pub fn train(model: &Model, init: &ModelParams, data: &[TrainExample], config: &TrainConfig) -> Result<Self> {
        let full = train(model, init, data, config)?.params;
        let without = (0..data.len())
            .into_par_iter()
            .map(|i| retrain_without(model, init, data, config, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(LooModels { full, without })
    }

    pub fn deltas(&self, model: &Model, query: &QueryLoss) -> Result<Vec<f64>> {
        let base = query.eval(model, &self.full)?;
        self.without
            .par_iter()
            .map(|p| Ok(query.eval(model, p)? - base))
            .collect()
    }
}

/// Leave-one-out deltas for every training clip.
pub fn loo_all(
    model: &Model,
    init: &ModelParams,
    data: &[TrainExample],
    config: &TrainConfig,
    query: &QueryLoss,
) -> Result<Vec<f64>> {
    LooModels::train(model, init, data, config)?.deltas(model, query)
}

/// Spearman correlations of `draws` seeded random score vectors with
/// `target`.
pub fn random_null(target: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::chacha(rng::derive(seed, "null"));
    (0..draws)
        .map(|_| {
            let scores: Vec<f64> = (0..target.len()).map(|_| r.random::<f64>()).collect();
            spearman(&scores, target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman(&x, &[1.0, 2.0]), Err(Error::LengthMismatch(4, 2))));
        assert!(matches!(spearman(&x, &[2.0; 4]), Err(Error::ConstantVector)));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn null_is_seeded() {
        let target: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(random_null(&target, 5, 1).unwrap(), random_null(&target, 5, 1).unwrap());
    }
}
