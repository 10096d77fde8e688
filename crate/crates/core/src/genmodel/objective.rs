//! Diffusion and flow-matching objectives, per-location errors and the
//! motion-weighted loss.

use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, LatentClip, PatchEncoder};
use super::network::{self, Architecture, ModelParams};
use super::schedule::{forward_noise, Schedule};
use crate::dataset::{Dims, VideoClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Regress the velocity of the interpolant (`eps - z` when linear).
    #[default]
    FlowMatching,
    /// Regress the injected noise.
    Diffusion,
}

/// How per-location errors are reduced to a scalar loss.
#[derive(Debug, Clone, Copy)]
pub enum Reduction<'a> {
    /// Mean over every latent location: the plain training objective.
    Mean,
    /// Sum over frames of the per-frame spatial mean. Grows with `F`.
    FrameSum,
    /// `(1/F) * mean(W * delta)` with latent weights `W` laid out `[F][h][w]`.
    Weighted(&'a [f32]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub objective: Objective,
    pub schedule: Schedule,
    pub encoder: EncoderConfig,
    pub pixel_dims: Dims,
}


impl ModelConfig {
    /// Default config with the frame dimension derived from the encoder.
    pub fn for_dims(pixel_dims: Dims, encoder: EncoderConfig) -> Self {
        let f = encoder.factor;
        let arch = Architecture {
            frame_dim: (pixel_dims.height / f) * (pixel_dims.width / f) * encoder.channels,
            ..Architecture::default()
        };
        ModelConfig {
            arch,
            encoder,
            pixel_dims,
            ..Default::default()
        }
    }
}

/// Encoder, schedule and objective around a parameter vector.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: PatchEncoder,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        let encoder = PatchEncoder::new(config.encoder, config.pixel_dims)?;
        let (h, w, c) = encoder.latent_dims();
        if h * w * c != config.arch.frame_dim {
            return Err(Error::DimensionMismatch(format!(
                "encoder frame size {} != architecture frame size {}",
                h * w * c,
                config.arch.frame_dim
            )));
        }
        Ok(Model { config, encoder })
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentClip> {
        self.encoder.encode(clip)
    }

    pub fn with_objective(&self, objective: Objective) -> Model {
        let mut m = self.clone();
        m.config.objective = objective;
        m
    }

    /// Regression target at `t`: `eps` for diffusion, the interpolant
    /// velocity for flow matching.
    pub fn target(&self, z: &LatentClip, t: f64, eps: &[f64]) -> Vec<f64> {
        match self.config.objective {
            Objective::Diffusion => eps.to_vec(),
            Objective::FlowMatching => {
                let (da, db) = self.config.schedule.velocity_coeffs(t);
                z.z.iter().zip(eps).map(|(z, e)| da * z + db * e).collect()
            }
        }
    }

    pub fn predict(&self, params: &ModelParams, x_t: &[f64], frames: usize, label: u32, t: f64) -> Result<Vec<f64>> {
        Ok(network::forward(params, x_t, frames, label, t)?.output)
    }

    fn check(&self, z: &LatentClip, eps: &[f64]) -> Result<()> {
        if eps.len() != z.z.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise has {} values, latent has {}",
                eps.len(),
                z.z.len()
            )));
        }
        Ok(())
    }

    /// Squared prediction error averaged over the channel axis, `[F][h][w]`.
    pub fn per_location_error(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        t: f64,
        eps: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(z, eps)?;
        let x_t = forward_noise(&z.z, t, eps, &self.config.schedule);
        let pred = self.predict(params, &x_t, z.frames, label, t)?;
        let target = self.target(z, t, eps);
        Ok(channel_mean_sq(&pred, &target, z.channels))
    }

    /// Loss under `reduction`.
    pub fn loss(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        t: f64,
        eps: &[f64],
        reduction: Reduction<'_>,
    ) -> Result<f64> {
        let delta = self.per_location_error(params, z, label, t, eps)?;
        reduce(&delta, z, reduction)
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        t: f64,
        eps: &[f64],
        reduction: Reduction<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let loss = self.accumulate_grad(params, z, label, t, eps, reduction, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds `scale * dL/dtheta` into `grad` and returns `L`.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_grad(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        t: f64,
        eps: &[f64],
        reduction: Reduction<'_>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(z, eps)?;
        let x_t = forward_noise(&z.z, t, eps, &self.config.schedule);
        let acts = network::forward(params, &x_t, z.frames, label, t)?;
        let target = self.target(z, t, eps);
        let delta = channel_mean_sq(&acts.output, &target, z.channels);
        let loss = reduce(&delta, z, reduction)?;

        let c = z.channels;
        let cells = z.cells() as f64;
        let plane = (z.height * z.width) as f64;
        let base = match reduction {
            Reduction::Mean => 1.0 / cells,
            Reduction::FrameSum => 1.0 / plane,
            Reduction::Weighted(_) => 1.0 / (cells * z.frames as f64),
        };
        let mut d_out = vec![0.0; acts.output.len()];
        for cell in 0..z.cells() {
            let w = match reduction {
                Reduction::Weighted(weights) => f64::from(weights[cell]),
                _ => 1.0,
            };
            let k = scale * base * w * 2.0 / c as f64;
            for ch in 0..c {
                let i = cell * c + ch;
                d_out[i] = k * (acts.output[i] - target[i]);
            }
        }
        network::backward(params, &acts, &d_out, grad);
        Ok(loss)
    }

    /// Noise-prediction MSE regardless of the configured objective.
    pub fn diffusion_loss(&self, params: &ModelParams, z: &LatentClip, label: u32, t: f64, eps: &[f64]) -> Result<f64> {
        self.with_objective(Objective::Diffusion)
            .loss(params, z, label, t, eps, Reduction::Mean)
    }

    /// Velocity-regression MSE regardless of the configured objective.
    pub fn flow_matching_loss(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        t: f64,
        eps: &[f64],
    ) -> Result<f64> {
        self.with_objective(Objective::FlowMatching)
            .loss(params, z, label, t, eps, Reduction::Mean)
    }

    pub fn motion_weighted_loss(
        &self,
        params: &ModelParams,
        z: &LatentClip,
        label: u32,
        weights: &[f32],
        t: f64,
        eps: &[f64],
    ) -> Result<f64> {
        self.loss(params, z, label, t, eps, Reduction::Weighted(weights))
    }
}

fn channel_mean_sq(pred: &[f64], target: &[f64], channels: usize) -> Vec<f64> {
    pred.chunks_exact(channels)
        .zip(target.chunks_exact(channels))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / channels as f64)
        .collect()
}

/// Reduces per-location errors `delta` (`[F][h][w]`) to a scalar.
pub fn reduce(delta: &[f64], z: &LatentClip, reduction: Reduction<'_>) -> Result<f64> {
    let cells = delta.len() as f64;
    match reduction {
        Reduction::Mean => Ok(delta.iter().sum::<f64>() / cells),
        Reduction::FrameSum => Ok(delta.iter().sum::<f64>() / (z.height * z.width) as f64),
        Reduction::Weighted(weights) => {
            if weights.len() != delta.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} motion weights for {} latent locations",
                    weights.len(),
                    delta.len()
                )));
            }
            let weighted: f64 = weights.iter().zip(delta).map(|(w, d)| f64::from(*w) * d).sum();
            Ok(weighted / cells / z.frames as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn latent(frames: usize) -> LatentClip {
        LatentClip {
            frames,
            height: 8,
            width: 8,
            channels: 4,
            z: rng::gaussian_vec(&mut rng::chacha(9), frames * 256),
        }
    }

    #[test]
    fn reductions_by_hand() {
        let z = latent(2);
        let delta: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let mean = reduce(&delta, &z, Reduction::Mean).unwrap();
        assert_eq!(mean, 63.5);
        assert_eq!(reduce(&delta, &z, Reduction::FrameSum).unwrap(), 127.0);
        let ones = vec![1f32; 128];
        let weighted = reduce(&delta, &z, Reduction::Weighted(&ones)).unwrap();
        assert!((weighted * 2.0 - mean).abs() <= 1e-12 * mean);
        assert_eq!(reduce(&delta, &z, Reduction::Weighted(&[0.0; 128])).unwrap(), 0.0);
        let mut one_hot = vec![0f32; 128];
        one_hot[37] = 1.0;
        // (1/F) * delta[37] / #cells
        assert_eq!(reduce(&delta, &z, Reduction::Weighted(&one_hot)).unwrap(), 37.0 / 128.0 / 2.0);
        assert!(matches!(
            reduce(&delta, &z, Reduction::Weighted(&ones[..10])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stubbed_predictions() {
        let z = latent(2);
        let eps = rng::gaussian_vec(&mut rng::chacha(3), z.z.len());
        let plus_one: Vec<f64> = eps.iter().map(|e| e + 1.0).collect();
        assert_eq!(channel_mean_sq(&eps, &eps, 4).iter().sum::<f64>(), 0.0);
        let d = channel_mean_sq(&plus_one, &eps, 4);
        assert_eq!(reduce(&d, &z, Reduction::Mean).unwrap(), 1.0);
    }

    #[test]
    fn flow_target_is_interpolant_derivative() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let z = latent(2);
        let eps = rng::gaussian_vec(&mut rng::chacha(5), z.z.len());
        let target = model.target(&z, 400.0, &eps);
        let sched = model.config.schedule;
        let h = 1e-3;
        let plus = forward_noise(&z.z, 400.0 + h * 1000.0, &eps, &sched);
        let minus = forward_noise(&z.z, 400.0 - h * 1000.0, &eps, &sched);
        for i in 0..target.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            assert!((fd - target[i]).abs() < 1e-6);
            assert_eq!(target[i], eps[i] - z.z[i]);
        }
        // z == eps: zero velocity, so the zero predictor is exact.
        let same = LatentClip { z: eps.clone(), ..z.clone() };
        let zero = ModelParams::zeros(model.config.arch);
        let loss = model.flow_matching_loss(&zero, &same, 0, 300.0, &eps).unwrap();
        assert_eq!(loss, 0.0);
    }
}
