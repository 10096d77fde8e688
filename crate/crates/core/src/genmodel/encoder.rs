use serde::{Deserialize, Serialize};

use crate::dataset::{Dims, VideoClip};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Spatial downsampling factor `f`.
    pub factor: usize,
    /// Latent channels `c`.
    pub channels: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            factor: 4,
            channels: 4,
            seed: 0x00e5_c0de,
        }
    }
}

/// Latent video laid out `[F][h][w][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub z: Vec<f64>,
}

impl LatentClip {
    pub fn frame_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn cells(&self) -> usize {
        self.frames * self.height * self.width
    }
}

/// Frozen linear patch encoder: each `f x f x C` patch is projected onto
/// `c` seeded orthonormal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub config: EncoderConfig,
    pub pixel_dims: Dims,
    /// Row-major `c x (f*f*C)`.
    basis: Vec<f64>,
}

impl PatchEncoder {
    pub fn new(config: EncoderConfig, pixel_dims: Dims) -> Result<Self> {
        let f = config.factor;
        if f == 0 || !pixel_dims.height.is_multiple_of(f) || !pixel_dims.width.is_multiple_of(f) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} canvas is not divisible by factor {f}",
                pixel_dims.height, pixel_dims.width
            )));
        }
        let patch = f * f * pixel_dims.channels;
        if config.channels == 0 || config.channels > patch {
            return Err(Error::InvalidParam(format!(
                "cannot take {} orthonormal directions in dimension {patch}",
                config.channels
            )));
        }
        let mut r = rng::chacha(config.seed);
        let mut basis: Vec<f64> = Vec::with_capacity(config.channels * patch);
        for row in 0..config.channels {
            let mut v = rng::gaussian_vec(&mut r, patch);
            for prev in 0..row {
                let p = &basis[prev * patch..(prev + 1) * patch];
                let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(p) {
                    *a -= dot * b;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            basis.extend(v.iter().map(|a| a / norm));
        }
        Ok(PatchEncoder {
            config,
            pixel_dims,
            basis,
        })
    }

    pub fn latent_dims(&self) -> (usize, usize, usize) {
        let f = self.config.factor;
        (self.pixel_dims.height / f, self.pixel_dims.width / f, self.config.channels)
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentClip> {
        if clip.dims != self.pixel_dims {
            return Err(Error::DimensionMismatch(format!(
                "clip is {:?}, encoder expects {:?}",
                clip.dims, self.pixel_dims
            )));
        }
        let f = self.config.factor;
        let (lh, lw, c) = self.latent_dims();
        let pc = clip.dims.channels;
        let patch = f * f * pc;
        let mut z = Vec::with_capacity(clip.frame_count * lh * lw * c);
        let mut buf = vec![0.0; patch];
        for k in 0..clip.frame_count {
            for i in 0..lh {
                for j in 0..lw {
                    let mut n = 0;
                    for dy in 0..f {
                        for dx in 0..f {
                            for ch in 0..pc {
                                buf[n] = f64::from(clip.pixel(k, i * f + dy, j * f + dx, ch));
                                n += 1;
                            }
                        }
                    }
                    for row in self.basis.chunks_exact(patch) {
                        z.push(row.iter().zip(&buf).map(|(a, b)| a * b).sum());
                    }
                }
            }
        }
        Ok(LatentClip {
            frames: clip.frame_count,
            height: lh,
            width: lw,
            channels: c,
            z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_with(values: impl Fn(usize) -> f32) -> VideoClip {
        let dims = Dims::default();
        let frames = (0..8 * dims.frame_len()).map(values).collect();
        VideoClip::new(0, 0, dims, frames).unwrap()
    }

    #[test]
    fn shape_zero_and_linearity() {
        let enc = PatchEncoder::new(EncoderConfig::default(), Dims::default()).unwrap();
        let zero = enc.encode(&clip_with(|_| 0.0)).unwrap();
        assert_eq!((zero.frames, zero.height, zero.width, zero.channels), (8, 8, 8, 4));
        assert!(zero.z.iter().all(|&v| v == 0.0));

        let x = clip_with(|i| ((i * 7919) % 101) as f32 / 200.0);
        let x2 = clip_with(|i| 2.0 * ((i * 7919) % 101) as f32 / 200.0);
        let (a, b) = (enc.encode(&x).unwrap(), enc.encode(&x2).unwrap());
        for (u, v) in a.z.iter().zip(&b.z) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let enc = PatchEncoder::new(EncoderConfig::default(), Dims::default()).unwrap();
        let rows: Vec<&[f64]> = enc.basis().chunks_exact(16).collect();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }
}
