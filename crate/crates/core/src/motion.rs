//! Dense optical flow and motion weight masks.
//!
//! Flow comes from exhaustive SSD block matching. Any `(F-1) x H x W x 2`
//! displacement field can be fed to [`MotionWeights::from_field`] instead,
//! so a learned tracker can replace the estimator without touching the
//! rest of the pipeline.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::VideoClip;
use crate::error::{Error, Result};

pub const MASK_MAGIC: &[u8; 8] = b"MVMASK01";
/// Bias in the min-max denominator.
pub const NORMALIZE_EPS: f64 = 1e-6;

/// Per-transition displacements, `flow` laid out `[F-1][H][W][2]` as (dw, dh).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub transitions: usize,
    pub height: usize,
    pub width: usize,
    pub flow: Vec<f32>,
    pub confidence: Option<Vec<f32>>,
}

impl MotionField {
    pub fn new(transitions: usize, height: usize, width: usize, flow: Vec<f32>) -> Result<Self> {
        if flow.len() != transitions * height * width * 2 {
            return Err(Error::DimensionMismatch(format!(
                "flow has {} values, expected {}x{}x{}x2",
                flow.len(),
                transitions,
                height,
                width
            )));
        }
        if flow.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite flow".into()));
        }
        Ok(MotionField {
            transitions,
            height,
            width,
            flow,
            confidence: None,
        })
    }

    pub fn at(&self, t: usize, y: usize, x: usize) -> [f32; 2] {
        let i = ((t * self.height + y) * self.width + x) * 2;
        [self.flow[i], self.flow[i + 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    #[default]
    Global,
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub block: usize,
    pub radius: usize,
    /// Latent downsampling factor.
    pub factor: usize,
    pub scope: NormalizeScope,
    pub use_confidence: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            block: 5,
            radius: 4,
            factor: 4,
            scope: NormalizeScope::Global,
            use_confidence: false,
        }
    }
}

fn grayscale(clip: &VideoClip) -> Vec<f32> {
    let c = clip.dims.channels;
    clip.frames
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f32>() / c as f32)
        .collect()
}

/// Exhaustive block matching from each frame to the next.
///
/// Ties in SSD go to the smaller displacement, so flat regions report zero
/// motion. Block windows clamp at the canvas border.
pub fn estimate_flow(clip: &VideoClip, radius: usize, block: usize) -> Result<MotionField> {
    if clip.frame_count < 2 {
        return Err(Error::ClipTooShort(clip.frame_count));
    }
    if radius == 0 {
        return Err(Error::InvalidParam("search radius must be >= 1".into()));
    }
    if block.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!("block size {block} must be odd")));
    }
    let (h, w) = (clip.dims.height, clip.dims.width);
    let gray = grayscale(clip);
    let frame = |k: usize| &gray[k * h * w..(k + 1) * h * w];
    let half = (block / 2) as isize;
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let transitions = clip.frame_count - 1;
    let mut flow = vec![0f32; transitions * h * w * 2];
    let mut confidence = vec![0f32; transitions * h * w];
    let mut candidates: Vec<(isize, isize)> = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            candidates.push((dy, dx));
        }
    }
    candidates.sort_by_key(|&(dy, dx)| dy * dy + dx * dx);

    for t in 0..transitions {
        let (a, b) = (frame(t), frame(t + 1));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut best = f32::INFINITY;
                let mut best_d = (0isize, 0isize);
                for &(dy, dx) in &candidates {
                    let mut ssd = 0f32;
                    for i in -half..=half {
                        let ya = clamp(y + i, h);
                        let yb = clamp(y + i + dy, h);
                        for j in -half..=half {
                            let diff = a[ya * w + clamp(x + j, w)] - b[yb * w + clamp(x + j + dx, w)];
                            ssd += diff * diff;
                        }
                        if ssd >= best {
                            break;
                        }
                    }
                    if ssd < best {
                        best = ssd;
                        best_d = (dy, dx);
                    }
                }
                let cell = (t * h + y as usize) * w + x as usize;
                flow[cell * 2] = best_d.1 as f32;
                flow[cell * 2 + 1] = best_d.0 as f32;
                let residual = best / (block * block) as f32;
                confidence[cell] = (-residual / 0.01).exp();
            }
        }
    }
    let mut field = MotionField::new(transitions, h, w, flow)?;
    field.confidence = Some(confidence);
    Ok(field)
}

/// Euclidean norm of every displacement, `[F-1][H][W]`.
pub fn motion_magnitude(field: &MotionField) -> Vec<f64> {
    field
        .flow
        .chunks_exact(2)
        .map(|d| f64::from(d[0]).hypot(f64::from(d[1])))
        .collect()
}

/// Min-max normalization of per-transition magnitudes into per-frame weights.
///
/// Frame `k` takes transition `k`; the last frame repeats the last
/// transition. Returns the `[F][H][W]` weights and whether the uniform
/// fallback was taken because every magnitude was equal.
pub fn normalize_weights(
    magnitude: &[f64],
    transitions: usize,
    plane: usize,
    scope: NormalizeScope,
) -> (Vec<f64>, bool) {
    assert_eq!(magnitude.len(), transitions * plane, "magnitude shape");
    let frames = transitions + 1;
    let range = |vals: &[f64]| {
        vals.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let (gmin, gmax) = range(magnitude);
    if gmax - gmin == 0.0 {
        return (vec![1.0; frames * plane], true);
    }
    let mut weights = Vec::with_capacity(frames * plane);
    for k in 0..frames {
        let t = k.min(transitions - 1);
        let slice = &magnitude[t * plane..(t + 1) * plane];
        let (lo, hi) = match scope {
            NormalizeScope::Global => (gmin, gmax),
            NormalizeScope::PerFrame => range(slice),
        };
        let denom = hi - lo + NORMALIZE_EPS;
        weights.extend(slice.iter().map(|&m| (m - lo) / denom));
    }
    (weights, false)
}

/// Separable triangle-filter taps for shrinking `n` samples by `factor`.
/// The filter is widened to the output pitch so every input pixel
/// contributes, and taps falling outside the input are dropped and the
/// rest renormalized.
fn resample_taps(n: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let out = n / factor;
    let f = factor as f64;
    (0..out)
        .map(|j| {
            let centre = (j as f64 + 0.5) * f;
            let lo = (centre - f).floor().max(0.0) as usize;
            let hi = ((centre + f).ceil() as usize).min(n);
            let mut taps: Vec<(usize, f64)> = (lo..hi)
                .map(|i| (i, (1.0 - ((i as f64 + 0.5) - centre).abs() / f).max(0.0)))
                .filter(|&(_, wt)| wt > 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Antialiased bilinear downsampling of `[F][H][W]` weights by `factor`.
pub fn downsample_to_latent(
    pixel_weights: &[f64],
    frames: usize,
    height: usize,
    width: usize,
    factor: usize,
) -> Result<Vec<f64>> {
    if factor == 0 || !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width} is not divisible by factor {factor}"
        )));
    }
    if pixel_weights.len() != frames * height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {frames}x{height}x{width}",
            pixel_weights.len()
        )));
    }
    let (lh, lw) = (height / factor, width / factor);
    let rows = resample_taps(height, factor);
    let cols = resample_taps(width, factor);
    let mut out = Vec::with_capacity(frames * lh * lw);
    let mut tmp = vec![0.0; height * lw];
    for k in 0..frames {
        let plane = &pixel_weights[k * height * width..(k + 1) * height * width];
        for y in 0..height {
            for (j, taps) in cols.iter().enumerate() {
                tmp[y * lw + j] = taps.iter().map(|&(x, wt)| wt * plane[y * width + x]).sum();
            }
        }
        for taps in &rows {
            for j in 0..lw {
                let v: f64 = taps.iter().map(|&(y, wt)| wt * tmp[y * lw + j]).sum();
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Motion weights for one clip at pixel and latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWeights {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub pixel_weights: Vec<f64>,
    /// Stored at f32 precision so cached masks match recomputation exactly.
    pub latent_weights: Vec<f32>,
    pub uniform_fallback: bool,
}

impl MotionWeights {
    /// All-ones mask; the motion-weighted loss then reduces to the plain one.
    pub fn uniform(frames: usize, height: usize, width: usize, factor: usize) -> Self {
        let (lh, lw) = (height / factor, width / factor);
        MotionWeights {
            frames,
            height,
            width,
            latent_height: lh,
            latent_width: lw,
            pixel_weights: vec![1.0; frames * height * width],
            latent_weights: vec![1.0; frames * lh * lw],
            uniform_fallback: true,
        }
    }

    pub fn from_field(field: &MotionField, config: &MotionConfig) -> Result<Self> {
        let (h, w) = (field.height, field.width);
        let mut magnitude = motion_magnitude(field);
        if config.use_confidence {
            if let Some(conf) = &field.confidence {
                for (m, c) in magnitude.iter_mut().zip(conf) {
                    *m *= f64::from(*c);
                }
            }
        }
        let (pixel_weights, uniform_fallback) =
            normalize_weights(&magnitude, field.transitions, h * w, config.scope);
        let frames = field.transitions + 1;
        let latent = downsample_to_latent(&pixel_weights, frames, h, w, config.factor)?;
        Ok(MotionWeights {
            frames,
            height: h,
            width: w,
            latent_height: h / config.factor,
            latent_width: w / config.factor,
            pixel_weights,
            latent_weights: latent.into_iter().map(|v| v as f32).collect(),
            uniform_fallback,
        })
    }

    pub fn for_clip(clip: &VideoClip, config: &MotionConfig) -> Result<Self> {
        let field = estimate_flow(clip, config.radius, config.block)?;
        Self::from_field(&field, config)
    }

    /// Latent-only weights as read back from a mask cache.
    pub fn from_latent(frames: usize, latent_height: usize, latent_width: usize, weights: Vec<f32>) -> Self {
        let uniform_fallback = weights.iter().all(|&w| w == 1.0);
        MotionWeights {
            frames,
            height: 0,
            width: 0,
            latent_height,
            latent_width,
            pixel_weights: Vec::new(),
            latent_weights: weights,
            uniform_fallback,
        }
    }
}

/// Append-only file of latent masks keyed by clip id.
#[derive(Debug)]
pub struct MaskCache {
    path: PathBuf,
    index: BTreeMap<u64, MotionWeights>,
}

impl MaskCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut index = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = BufReader::new(file);
            let mut bytes = Vec::new();
            reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
            if bytes.len() < 8 || &bytes[..8] != MASK_MAGIC {
                return Err(Error::CorruptRecord("bad mask cache magic".into()));
            }
            let mut pos = 8;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = bytes
                    .get(*pos..*pos + n)
                    .ok_or_else(|| Error::CorruptRecord("mask record truncated".into()))?;
                *pos += n;
                Ok(s)
            };
            while pos < bytes.len() {
                let id = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                let frames = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                let lh = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                let lw = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                let raw = take(&mut pos, frames * lh * lw * 4)?;
                let weights = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                index.insert(id, MotionWeights::from_latent(frames, lh, lw, weights));
            }
        }
        Ok(MaskCache {
            path: path.to_path_buf(),
            index,
        })
    }

    pub fn get(&self, clip_id: u64) -> Option<&MotionWeights> {
        self.index.get(&clip_id)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn append(&mut self, clip_id: u64, weights: &MotionWeights) -> Result<()> {
        let fresh = !self.path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = Vec::with_capacity(28 + weights.latent_weights.len() * 4);
        if fresh {
            buf.extend_from_slice(MASK_MAGIC);
        }
        buf.extend_from_slice(&clip_id.to_le_bytes());
        for v in [weights.frames, weights.latent_height, weights.latent_width] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for w in &weights.latent_weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        let cached = MotionWeights::from_latent(
            weights.frames,
            weights.latent_height,
            weights.latent_width,
            weights.latent_weights.clone(),
        );
        self.index.insert(clip_id, cached);
        Ok(())
    }
}
