//! Synthetic rigid-motion video corpora.
//!
//! Every clip is a pure function of its [`MotionSpec`], frame count and
//! canvas size, so ground-truth motion is known exactly. Corpora are stored
//! as one little-endian float32 container plus a JSON manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const CLIP_MAGIC: &[u8; 8] = b"MVCLIP01";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONTAINER_FILE: &str = "clips.bin";
pub const FORMAT_VERSION: u32 = 1;
const CONTAINER_HEADER_LEN: u64 = 8 + 4 * 3 + 8;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Static,
    Slide,
    Bounce,
    Spin,
    FreeFall,
    FloatOsc,
    Roll,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Static,
        Category::Slide,
        Category::Bounce,
        Category::Spin,
        Category::FreeFall,
        Category::FloatOsc,
        Category::Roll,
    ];

    pub fn label(self) -> u32 {
        self as u32
    }

    pub fn from_label(label: u32) -> Option<Category> {
        Self::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Static => "static",
            Category::Slide => "slide",
            Category::Bounce => "bounce",
            Category::Spin => "spin",
            Category::FreeFall => "free_fall",
            Category::FloatOsc => "float_osc",
            Category::Roll => "roll",
        }
    }

    pub fn parse(name: &str) -> Option<Category> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    fn rotates(self) -> bool {
        matches!(self, Category::Spin | Category::Roll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disc,
}

/// Canvas size of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Dims {
            height,
            width,
            channels,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::new(32, 32, 1)
    }
}

/// Kinematic description of one rigid object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub category: Category,
    pub shape: Shape,
    pub size_px: u32,
    /// px/frame as (x, y).
    pub velocity: [f64; 2],
    /// px/frame², applied along +y.
    pub gravity: f64,
    /// radians/frame.
    pub angular_rate: f64,
    pub seed: u64,
}

impl MotionSpec {
    pub fn new(
        category: Category,
        shape: Shape,
        size_px: u32,
        velocity: [f64; 2],
        gravity: f64,
        angular_rate: f64,
        seed: u64,
    ) -> Self {
        let mut spec = MotionSpec {
            category,
            shape,
            size_px,
            velocity,
            gravity,
            angular_rate,
            seed,
        };
        spec.canonicalize();
        spec
    }

    /// Zeroes the kinematic fields a category does not use.
    fn canonicalize(&mut self) {
        match self.category {
            Category::Static => {
                self.velocity = [0.0, 0.0];
                self.gravity = 0.0;
                self.angular_rate = 0.0;
            }
            Category::Slide | Category::Bounce => {
                self.gravity = 0.0;
                self.angular_rate = 0.0;
            }
            Category::FreeFall => self.angular_rate = 0.0,
            Category::Spin => {
                self.velocity = [0.0, 0.0];
                self.gravity = 0.0;
            }
            Category::FloatOsc => self.gravity = 0.0,
            Category::Roll => {
                self.velocity[1] = 0.0;
                self.gravity = 0.0;
                self.angular_rate = self.velocity[0] / (f64::from(self.size_px) / 2.0);
            }
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        let limit = dims.height.min(dims.width) / 2;
        if self.size_px < 2 || self.size_px as usize > limit {
            return Err(Error::InvalidSpec(format!(
                "size {} px outside [2, {limit}]",
                self.size_px
            )));
        }
        let finite = self.velocity.iter().all(|v| v.is_finite())
            && self.gravity.is_finite()
            && self.angular_rate.is_finite();
        if !finite {
            return Err(Error::InvalidSpec("non-finite kinematics".into()));
        }
        if self.category == Category::FloatOsc && self.angular_rate == 0.0 {
            return Err(Error::InvalidSpec("float_osc needs a nonzero angular rate".into()));
        }
        Ok(())
    }

    fn half_extent(&self) -> f64 {
        let half = f64::from(self.size_px) / 2.0;
        if self.shape == Shape::Square && self.category.rotates() {
            half * std::f64::consts::SQRT_2
        } else {
            half
        }
    }

    /// Displacement from the origin and rotation at frame `t`, before any
    /// wall reflection.
    fn free_pose(&self, t: f64) -> ([f64; 2], f64) {
        let [vx, vy] = self.velocity;
        match self.category {
            Category::Static => ([0.0, 0.0], 0.0),
            Category::Slide | Category::Bounce => ([vx * t, vy * t], 0.0),
            Category::FreeFall => ([vx * t, vy * t + 0.5 * self.gravity * t * t], 0.0),
            Category::Spin => ([0.0, 0.0], self.angular_rate * t),
            Category::FloatOsc => {
                let amplitude = vx.hypot(vy) / self.angular_rate.abs();
                ([0.0, amplitude * (self.angular_rate * t).sin()], 0.0)
            }
            Category::Roll => ([vx * t, 0.0], self.angular_rate * t),
        }
    }
}

/// Reflects `x` into `[lo, hi]` as a perfectly elastic bounce would.
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let y = (x - lo).rem_euclid(2.0 * span);
    lo + if y > span { 2.0 * span - y } else { y }
}

/// Object centre and angle for every frame, fully inside the canvas.
pub fn trajectory(spec: &MotionSpec, frames: usize, dims: Dims) -> Result<Vec<([f64; 2], f64)>> {
    spec.validate(dims)?;
    let extent = spec.half_extent() + 1.0;
    let canvas = [dims.width as f64, dims.height as f64];
    let mut origin_rng = rng::chacha(rng::derive(spec.seed, "origin"));
    let draw: [f64; 2] = [origin_rng.random(), origin_rng.random()];

    if spec.category == Category::Bounce {
        let mut origin = [0.0; 2];
        for axis in 0..2 {
            let (lo, hi) = (extent, canvas[axis] - extent);
            origin[axis] = lo + draw[axis] * (hi - lo);
        }
        return Ok((0..frames)
            .map(|t| {
                let (d, angle) = spec.free_pose(t as f64);
                let mut c = [0.0; 2];
                for axis in 0..2 {
                    c[axis] = fold(origin[axis] + d[axis], extent, canvas[axis] - extent);
                }
                (c, angle)
            })
            .collect());
    }

    let poses: Vec<_> = (0..frames).map(|t| spec.free_pose(t as f64)).collect();
    let mut origin = [0.0; 2];
    for axis in 0..2 {
        let min = poses.iter().map(|p| p.0[axis]).fold(f64::INFINITY, f64::min);
        let max = poses.iter().map(|p| p.0[axis]).fold(f64::NEG_INFINITY, f64::max);
        let lo = extent - min;
        let hi = canvas[axis] - extent - max;
        if lo > hi {
            return Err(Error::InvalidSpec(format!(
                "{} trajectory over {frames} frames leaves the canvas",
                spec.category.name()
            )));
        }
        origin[axis] = lo + draw[axis] * (hi - lo);
    }
    Ok(poses
        .into_iter()
        .map(|(d, angle)| ([origin[0] + d[0], origin[1] + d[1]], angle))
        .collect())
}

fn texture(u: f64, v: f64, phase: f64) -> f64 {
    0.55 + 0.25 * (1.3 * u + phase).sin() * (1.1 * v - 0.4 + 0.5 * phase).cos()
        + 0.15 * (0.9 * (u + v) + 2.0 * phase).sin()
}

/// A rendered clip, `frames` laid out as `[F][H][W][C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: u64,
    pub category_label: u32,
    pub frame_count: usize,
    pub dims: Dims,
    pub frames: Vec<f32>,
}

impl VideoClip {
    pub fn new(clip_id: u64, category_label: u32, dims: Dims, frames: Vec<f32>) -> Result<Self> {
        let frame_len = dims.frame_len();
        if frame_len == 0 || !frames.len().is_multiple_of(frame_len) {
            return Err(Error::DimensionMismatch(format!(
                "{} values is not a whole number of {}x{}x{} frames",
                frames.len(),
                dims.height,
                dims.width,
                dims.channels
            )));
        }
        let frame_count = frames.len() / frame_len;
        if frame_count < 2 {
            return Err(Error::ClipTooShort(frame_count));
        }
        if frames.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParam("intensities must lie in [0, 1]".into()));
        }
        Ok(VideoClip {
            clip_id,
            category_label,
            frame_count,
            dims,
            frames,
        })
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.frames[k * n..(k + 1) * n]
    }

    pub fn pixel(&self, k: usize, y: usize, x: usize, c: usize) -> f32 {
        let d = self.dims;
        self.frames[((k * d.height + y) * d.width + x) * d.channels + c]
    }

    /// Uniform temporal resampling to `target` frames: frame `k` copies
    /// source frame `floor(k * F / target)`.
    pub fn standardized(&self, target: usize) -> VideoClip {
        if target == self.frame_count {
            return self.clone();
        }
        let mut frames = Vec::with_capacity(target * self.dims.frame_len());
        for k in 0..target {
            frames.extend_from_slice(self.frame(k * self.frame_count / target));
        }
        VideoClip {
            frames,
            frame_count: target,
            ..self.clone()
        }
    }
}

/// Renders `spec` for `frames` frames on a `dims` canvas.
pub fn generate_clip(spec: &MotionSpec, frames: usize, dims: Dims) -> Result<VideoClip> {
    if frames < 2 {
        return Err(Error::ClipTooShort(frames));
    }
    let poses = trajectory(spec, frames, dims)?;
    let phase = rng::chacha(rng::derive(spec.seed, "texture")).random::<f64>() * std::f64::consts::TAU;
    let half = f64::from(spec.size_px) / 2.0;
    let extent = spec.half_extent() + 1.0;
    let (h, w, c) = (dims.height, dims.width, dims.channels);
    let mut out = vec![0f32; frames * dims.frame_len()];
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;

    for (k, &(centre, angle)) in poses.iter().enumerate() {
        let (sin, cos) = (-angle).sin_cos();
        let y0 = (centre[1] - extent).floor().max(0.0) as usize;
        let y1 = ((centre[1] + extent).ceil() as usize).min(h);
        let x0 = (centre[0] - extent).floor().max(0.0) as usize;
        let x1 = ((centre[0] + extent).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut acc = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - centre[0];
                        let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - centre[1];
                        let u = cos * px - sin * py;
                        let v = sin * px + cos * py;
                        let inside = match spec.shape {
                            Shape::Square => u.abs() <= half && v.abs() <= half,
                            Shape::Disc => u * u + v * v <= half * half,
                        };
                        if inside {
                            acc += texture(u, v, phase);
                        }
                    }
                }
                let value = (acc * inv).clamp(0.0, 1.0) as f32;
                let base = ((k * h + y) * w + x) * c;
                out[base..base + c].fill(value);
            }
        }
    }
    VideoClip::new(0, spec.category.label(), dims, out)
}

/// Per-category clip counts plus everything needed to regenerate a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub counts: BTreeMap<Category, usize>,
    pub master_seed: u64,
    pub dims: Dims,
    pub canonical_f: usize,
    /// Draw each clip's length from `length_choices` instead of using
    /// `canonical_f`.
    pub variable_length: bool,
    pub length_choices: Vec<usize>,
    /// First clip id; lets query and training corpora use disjoint ids.
    pub first_id: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            counts: BTreeMap::new(),
            master_seed: 0,
            dims: Dims::default(),
            canonical_f: 8,
            variable_length: false,
            length_choices: vec![4, 8, 16],
            first_id: 0,
        }
    }
}

impl CorpusConfig {
    pub fn with_counts(counts: &[(Category, usize)], master_seed: u64) -> Self {
        CorpusConfig {
            counts: counts.iter().copied().collect(),
            master_seed,
            ..Default::default()
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Category and length of every clip in id order.
    fn plan(&self) -> Vec<(u64, Category, usize)> {
        let mut plan = Vec::with_capacity(self.total());
        for (&category, &n) in &self.counts {
            for _ in 0..n {
                let index = plan.len() as u64;
                let seed = rng::splitmix(self.master_seed, index);
                let frames = if self.variable_length {
                    let pick = rng::mix64(seed ^ 0x5eed) as usize % self.length_choices.len();
                    self.length_choices[pick]
                } else {
                    self.canonical_f
                };
                plan.push((seed, category, frames));
            }
        }
        plan
    }
}

/// Draws a random spec for `category` that fits `frames` frames.
pub fn sample_spec(category: Category, seed: u64, frames: usize, dims: Dims) -> Result<MotionSpec> {
    let mut r = rng::chacha(rng::derive(seed, "spec"));
    let shape = if r.random::<bool>() { Shape::Square } else { Shape::Disc };
    let max_size = (dims.height.min(dims.width) / 2).min(10) as u32;
    let size = r.random_range(6.min(max_size)..=max_size);
    let dir = r.random::<f64>() * std::f64::consts::TAU;
    let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
    let speed = r.random_range(0.6..1.6);
    let spin = sign * r.random_range(0.25..0.5);
    let gravity = r.random_range(0.12..0.3);
    let osc = r.random_range(0.6..1.1);

    let mut scale = 1.0;
    for _ in 0..32 {
        let spec = match category {
            Category::Static => MotionSpec::new(category, shape, size, [0.0; 2], 0.0, 0.0, seed),
            Category::Slide | Category::Bounce => MotionSpec::new(
                category,
                shape,
                size,
                [scale * speed * dir.cos(), scale * speed * dir.sin()],
                0.0,
                0.0,
                seed,
            ),
            Category::FreeFall => MotionSpec::new(
                category,
                shape,
                size,
                [scale * 0.4 * speed * dir.cos(), 0.0],
                scale * gravity,
                0.0,
                seed,
            ),
            Category::Spin => MotionSpec::new(category, shape, size, [0.0; 2], 0.0, spin, seed),
            Category::FloatOsc => {
                MotionSpec::new(category, shape, size, [0.0, scale * 2.0 * speed], 0.0, osc, seed)
            }
            Category::Roll => {
                MotionSpec::new(category, shape, size, [sign * scale * speed, 0.0], 0.0, 0.0, seed)
            }
        };
        match trajectory(&spec, frames, dims) {
            Ok(_) => return Ok(spec),
            Err(Error::InvalidSpec(_)) => scale *= 0.8,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidSpec(format!(
        "no feasible {} spec for {frames} frames",
        category.name()
    )))
}

/// An in-memory corpus: clips in ascending id order with their specs.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dims: Dims,
    pub canonical_f: usize,
    pub specs: Vec<MotionSpec>,
    pub clips: Vec<VideoClip>,
}

impl Corpus {
    pub fn generate(config: &CorpusConfig) -> Result<Corpus> {
        if config.total() == 0 {
            return Err(Error::EmptyCorpus);
        }
        if config.variable_length && config.length_choices.is_empty() {
            return Err(Error::InvalidParam("variable_length needs length choices".into()));
        }
        let plan = config.plan();
        let generated: Vec<Result<(MotionSpec, VideoClip)>> = plan
            .par_iter()
            .enumerate()
            .map(|(i, &(seed, category, frames))| {
                let spec = sample_spec(category, seed, frames, config.dims)?;
                let mut clip = generate_clip(&spec, frames, config.dims)?;
                clip.clip_id = config.first_id + i as u64;
                Ok((spec, clip))
            })
            .collect();
        let mut specs = Vec::with_capacity(plan.len());
        let mut clips = Vec::with_capacity(plan.len());
        for item in generated {
            let (spec, clip) = item?;
            specs.push(spec);
            clips.push(clip);
        }
        Ok(Corpus {
            dims: config.dims,
            canonical_f: config.canonical_f,
            specs,
            clips,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, clip_id: u64) -> Option<&VideoClip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    /// Clips resampled to the canonical frame count.
    pub fn standardized(&self) -> Vec<VideoClip> {
        self.clips.iter().map(|c| c.standardized(self.canonical_f)).collect()
    }

    pub fn subset(&self, ids: &[u64]) -> Result<Corpus> {
        let mut specs = Vec::new();
        let mut clips = Vec::new();
        for &id in ids {
            let idx = self
                .clips
                .iter()
                .position(|c| c.clip_id == id)
                .ok_or(Error::UnknownClip(id))?;
            specs.push(self.specs[idx].clone());
            clips.push(self.clips[idx].clone());
        }
        Ok(Corpus {
            dims: self.dims,
            canonical_f: self.canonical_f,
            specs,
            clips,
        })
    }

    /// Writes the container and manifest under `dir`.
    pub fn save(&self, dir: &Path) -> Result<CorpusManifest> {
        if self.clips.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONTAINER_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let d = self.dims;
        let mut header = Vec::with_capacity(CONTAINER_HEADER_LEN as usize);
        header.extend_from_slice(CLIP_MAGIC);
        for v in [d.height, d.width, d.channels] {
            header.extend_from_slice(&(v as u32).to_le_bytes());
        }
        header.extend_from_slice(&(self.clips.len() as u64).to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(&path, e))?;

        let mut offset = CONTAINER_HEADER_LEN;
        let mut entries = Vec::with_capacity(self.clips.len());
        for (spec, clip) in self.specs.iter().zip(&self.clips) {
            let bytes: Vec<u8> = clip.frames.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestEntry {
                clip_id: clip.clip_id,
                offset,
                frame_count: clip.frame_count,
                category_label: clip.category_label,
                spec: spec.clone(),
                checksum: hex::encode(Sha256::digest(&bytes)),
            });
            offset += bytes.len() as u64;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        entries.sort_by_key(|e| e.clip_id);

        let manifest = CorpusManifest {
            format_version: FORMAT_VERSION,
            container: CONTAINER_FILE.to_string(),
            height: d.height,
            width: d.width,
            channels: d.channels,
            canonical_f: self.canonical_f,
            entries,
            root: dir.to_path_buf(),
        };
        manifest.write(&dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: u64,
    pub offset: u64,
    #[serde(rename = "F")]
    pub frame_count: usize,
    pub category_label: u32,
    pub spec: MotionSpec,
    pub checksum: String,
}

/// JSON sidecar describing a clip container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    /// Container path relative to the manifest's directory.
    pub container: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub canonical_f: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width, self.channels)
    }

    pub fn open(dir: &Path) -> Result<CorpusManifest> {
        Self::open_file(&dir.join(MANIFEST_FILE))
    }

    pub fn open_file(path: &Path) -> Result<CorpusManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest = serde_json::from_str(&text)?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn container_path(&self) -> PathBuf {
        self.root.join(&self.container)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.clip_id).collect()
    }

    pub fn entry(&self, clip_id: u64) -> Result<&ManifestEntry> {
        self.entries
            .binary_search_by_key(&clip_id, |e| e.clip_id)
            .map(|i| &self.entries[i])
            .map_err(|_| Error::UnknownClip(clip_id))
    }

    pub fn load_clip(&self, clip_id: u64) -> Result<VideoClip> {
        let entry = self.entry(clip_id)?;
        let dims = self.dims();
        let path = self.container_path();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;

        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| Error::CorruptRecord("container header truncated".into()))?;
        if &magic != CLIP_MAGIC {
            return Err(Error::CorruptRecord("bad container magic".into()));
        }

        let len = entry.frame_count * dims.frame_len() * 4;
        let mut bytes = vec![0u8; len];
        file.seek(SeekFrom::Start(entry.offset)).map_err(|e| Error::io(&path, e))?;
        file.read_exact(&mut bytes)
            .map_err(|_| Error::CorruptRecord(format!("clip {clip_id} truncated")))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.checksum {
            return Err(Error::CorruptRecord(format!("clip {clip_id} checksum mismatch")));
        }
        let frames = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        VideoClip::new(clip_id, entry.category_label, dims, frames)
    }

    /// Loads every clip into memory.
    pub fn load_corpus(&self) -> Result<Corpus> {
        let clips = self
            .entries
            .iter()
            .map(|e| self.load_clip(e.clip_id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            dims: self.dims(),
            canonical_f: self.canonical_f,
            specs: self.entries.iter().map(|e| e.spec.clone()).collect(),
            clips,
        })
    }

    /// A manifest over a subset of clips that still points at this container.
    pub fn subset(&self, ids: &[u64]) -> Result<CorpusManifest> {
        if ids.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut entries = ids
            .iter()
            .map(|&id| self.entry(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.clip_id);
        entries.dedup_by_key(|e| e.clip_id);
        Ok(CorpusManifest {
            entries,
            ..self.clone()
        })
    }
}

/// Generates and persists a corpus under `out`.
pub fn build_corpus(config: &CorpusConfig, out: &Path) -> Result<CorpusManifest> {
    Corpus::generate(config)?.save(out)
}
