//! Momentum SGD on the unmasked objective.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::LatentClip;
use super::network::ModelParams;
use super::objective::{Model, Reduction};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            lr: 0.5,
            momentum: 0.9,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// One encoded training clip.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub clip_id: u64,
    pub label: u32,
    pub latent: LatentClip,
    /// Multiplies this example's loss; 0 removes it without changing the
    /// batch normalization.
    pub weight: f64,
}

impl TrainExample {
    pub fn new(clip_id: u64, label: u32, latent: LatentClip) -> Self {
        TrainExample {
            clip_id,
            label,
            latent,
            weight: 1.0,
        }
    }
}

/// The `(t, eps)` a given example sees at a given step. Keyed by clip id,
/// so removing one example leaves every other example's draws unchanged.
pub fn training_draw(model: &Model, seed: u64, step: usize, example: &TrainExample) -> (f64, Vec<f64>) {
    let mut r = rng::chacha_stream(rng::splitmix(rng::derive(seed, "train-noise"), step as u64), example.clip_id);
    let t = f64::from(r.random_range(1..=model.config.schedule.total()));
    (t, rng::gaussian_vec(&mut r, example.latent.z.len()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub step_losses: Vec<f64>,
}

/// Trains `params` in place of a copy. Minibatch order and noise are pure
/// functions of `config.seed`.
pub fn train(model: &Model, params: &ModelParams, data: &[TrainExample], config: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be positive".into()));
    }
    let mut params = params.clone();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut step_losses = Vec::with_capacity(config.steps);
    let full_batch = config.batch_size >= data.len();

    for step in 0..config.steps {
        let batch: Vec<usize> = if full_batch {
            (0..data.len()).collect()
        } else {
            let mut b = Vec::with_capacity(config.batch_size);
            while b.len() < config.batch_size {
                if cursor == order.len() {
                    order = (0..data.len()).collect();
                    order.shuffle(&mut rng::chacha(rng::splitmix(rng::derive(config.seed, "epoch"), epoch)));
                    epoch += 1;
                    cursor = 0;
                }
                b.push(order[cursor]);
                cursor += 1;
            }
            b
        };

        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|&i| {
                let ex = &data[i];
                let mut grad = vec![0.0; params.len()];
                if ex.weight == 0.0 {
                    return Ok((0.0, grad));
                }
                let (t, eps) = training_draw(model, config.seed, step, ex);
                let loss = model.accumulate_grad(
                    &params,
                    &ex.latent,
                    ex.label,
                    t,
                    &eps,
                    Reduction::Mean,
                    ex.weight * scale,
                    &mut grad,
                )?;
                Ok((ex.weight * loss * scale, grad))
            })
            .collect();

        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part.map_err(|e| match e {
                Error::NonFiniteActivation => Error::DivergedLoss { step },
                other => other,
            })?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedLoss { step });
        }
        step_losses.push(loss);
        for ((p, v), g) in params.values.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = config.momentum * *v + g;
            *p -= config.lr * *v;
        }
    }
    Ok(TrainOutcome { params, step_losses })
}

/// Mean unmasked loss over `data`, each clip evaluated at `draws` fixed
/// `(t, eps)` samples derived from `seed`.
pub fn evaluate_loss(model: &Model, params: &ModelParams, data: &[TrainExample], seed: u64, draws: usize) -> Result<f64> {
    let losses: Vec<Result<f64>> = data
        .par_iter()
        .map(|ex| {
            let mut total = 0.0;
            for d in 0..draws {
                let (t, eps) = training_draw(model, seed, d, ex);
                total += model.loss(params, &ex.latent, ex.label, t, &eps, Reduction::Mean)?;
            }
            Ok(total / draws as f64)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}
