//! Per-example gradients at one shared `(t_hat, eps_hat)` draw.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genmodel::{LatentClip, Model, ModelParams, Reduction};
use crate::rng;

/// Default attribution timestep on a 1000-step schedule.
pub const DEFAULT_T_HAT: u32 = 751;
pub const ZERO_GRADIENT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Motion,
}

impl Weighting {
    pub fn code(self) -> u8 {
        match self {
            Weighting::Uniform => 0,
            Weighting::Motion => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Weighting::Uniform),
            1 => Some(Weighting::Motion),
            _ => None,
        }
    }
}

/// The shared timestep and noise used for every gradient in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePair {
    pub t_hat: u32,
    pub master_seed: u64,
    /// Latent frame shape `(h, w, c)`.
    pub latent_shape: (usize, usize, usize),
    pub canonical_frames: usize,
    /// Noise at the canonical shape `[F][h][w][c]`.
    pub eps: Vec<f64>,
    /// `t_hat` sits on a schedule endpoint.
    pub boundary: bool,
}

impl NoisePair {
    pub fn new(
        master_seed: u64,
        t_hat: u32,
        total_steps: u32,
        latent_shape: (usize, usize, usize),
        canonical_frames: usize,
    ) -> Self {
        let eps = noise_frames(master_seed, latent_shape, canonical_frames);
        NoisePair {
            t_hat,
            master_seed,
            latent_shape,
            canonical_frames,
            eps,
            boundary: t_hat == 0 || t_hat == total_steps,
        }
    }

    pub fn t(&self) -> f64 {
        f64::from(self.t_hat)
    }

    /// Noise for a clip of `frames` frames. Frame `k` is always the same
    /// draw, so clips of any length share noise on their common frames.
    pub fn eps_for(&self, frames: usize) -> std::borrow::Cow<'_, [f64]> {
        if frames == self.canonical_frames {
            std::borrow::Cow::Borrowed(&self.eps)
        } else {
            std::borrow::Cow::Owned(noise_frames(self.master_seed, self.latent_shape, frames))
        }
    }

    pub fn eps_bytes(&self) -> Vec<u8> {
        self.eps.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn noise_frames(master_seed: u64, (h, w, c): (usize, usize, usize), frames: usize) -> Vec<f64> {
    let seed = rng::derive(master_seed, "eps-hat");
    let mut eps = Vec::with_capacity(frames * h * w * c);
    for k in 0..frames {
        eps.extend(rng::gaussian_vec(&mut rng::chacha_stream(seed, k as u64), h * w * c));
    }
    eps
}

/// Shared `(t_hat, eps_hat)` for a model: `t_hat` defaults to 751.
pub fn make_noise_pair(model: &Model, master_seed: u64, t_hat: Option<u32>, canonical_frames: usize) -> Result<NoisePair> {
    let total = model.config.schedule.total();
    let t_hat = t_hat.unwrap_or(DEFAULT_T_HAT);
    if t_hat > total {
        return Err(Error::InvalidParam(format!("t_hat {t_hat} exceeds schedule length {total}")));
    }
    if t_hat == 0 || t_hat == total {
        log::warn!("t_hat = {t_hat} is a schedule boundary");
    }
    Ok(NoisePair::new(
        master_seed,
        t_hat,
        total,
        model.encoder.latent_dims(),
        canonical_frames,
    ))
}

/// SHA-256 identifying the `(t_hat, eps_hat, checkpoint)` triple a gradient
/// was computed under.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn for_run(pair: &NoisePair, checkpoint_hash: &[u8; 32]) -> Self {
        let mut h = Sha256::new();
        h.update(pair.t_hat.to_le_bytes());
        h.update(pair.eps_bytes());
        h.update(checkpoint_hash);
        Fingerprint(h.finalize().into())
    }

    /// Extends a run fingerprint with the projection that produced a sketch.
    pub fn with_projection(&self, seed: u64, out_dim: usize) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(seed.to_le_bytes());
        h.update((out_dim as u64).to_le_bytes());
        Fingerprint(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..16])
    }
}

/// Frame-normalized gradient of one clip's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub clip_id: u64,
    pub weighting: Weighting,
    pub frame_count: usize,
    /// `||g||` after the `1/F` scaling.
    pub norm: f64,
    pub fingerprint: Fingerprint,
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn unit(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / self.norm).collect()
    }
}

/// One clip to differentiate.
#[derive(Debug, Clone, Copy)]
pub struct GradInput<'a> {
    pub clip_id: u64,
    pub label: u32,
    pub latent: &'a LatentClip,
    /// Latent motion weights `[F][h][w]`; `None` for the unmasked loss.
    pub weights: Option<&'a [f32]>,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Raw `dL/dtheta` at `(t, eps)` with no frame normalization.
pub fn raw_gradient(
    model: &Model,
    params: &ModelParams,
    input: &GradInput<'_>,
    t: f64,
    eps: &[f64],
    reduction: Reduction<'_>,
) -> Result<Vec<f64>> {
    let (_, grad) = model.loss_and_grad(params, input.latent, input.label, t, eps, reduction)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(input.clip_id));
    }
    Ok(grad)
}

/// Gradient of the motion-weighted loss when weights are given, else of
/// the unmasked loss, divided by the frame count.
pub fn per_example_gradient(
    model: &Model,
    params: &ModelParams,
    input: &GradInput<'_>,
    pair: &NoisePair,
    fingerprint: Fingerprint,
) -> Result<GradVector> {
    let frames = input.latent.frames;
    let eps = pair.eps_for(frames);
    let reduction = match input.weights {
        Some(w) => Reduction::Weighted(w),
        None => Reduction::Mean,
    };
    let mut values = raw_gradient(model, params, input, pair.t(), &eps, reduction)?;
    let inv = 1.0 / frames as f64;
    for v in &mut values {
        *v *= inv;
    }
    let norm = l2_norm(&values);
    if !norm.is_finite() {
        return Err(Error::NonFiniteGradient(input.clip_id));
    }
    if norm < ZERO_GRADIENT_NORM {
        return Err(Error::ZeroGradient(input.clip_id));
    }
    Ok(GradVector {
        clip_id: input.clip_id,
        weighting: if input.weights.is_some() {
            Weighting::Motion
        } else {
            Weighting::Uniform
        },
        frame_count: frames,
        norm,
        fingerprint,
        values,
    })
}

/// Gradients for many clips in parallel, returned in input order.
pub fn batch_gradients(
    model: &Model,
    params: &ModelParams,
    inputs: &[GradInput<'_>],
    pair: &NoisePair,
    fingerprint: Fingerprint,
) -> Vec<Result<GradVector>> {
    inputs
        .par_iter()
        .map(|input| per_example_gradient(model, params, input, pair, fingerprint))
        .collect()
}
