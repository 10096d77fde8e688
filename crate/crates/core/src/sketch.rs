//! Fastfood Johnson-Lindenstrauss sketches and the on-disk sketch store.
//!
//! The operator is `P = 1/(sigma sqrt(d')) S H G Pi H B` applied to the
//! zero-padded input, keeping the first `d'` coordinates. `H` is the
//! unnormalized Walsh-Hadamard transform, `B` random signs, `Pi` a random
//! permutation, `G` a Gaussian diagonal and `S` a chi-distributed row
//! rescaling.

use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gradients::{l2_norm, Fingerprint, GradVector, Weighting, ZERO_GRADIENT_NORM};
use crate::rng;

pub const SKETCH_MAGIC: &[u8; 8] = b"MVSKCH01";
pub const STORE_HEADER_LEN: u64 = 8 + 4 + 8 + 32 + 1;
pub const DEFAULT_SKETCH_DIM: usize = 512;
const CALIBRATION_PROBES: usize = 64;

/// In-place unnormalized Walsh-Hadamard transform.
pub fn fwht(values: &mut [f64]) -> Result<()> {
    let n = values.len();
    if !n.is_power_of_two() {
        return Err(Error::BadLength(n));
    }
    let mut half = 1;
    while half < n {
        for block in values.chunks_exact_mut(2 * half) {
            let (left, right) = block.split_at_mut(half);
            for (x, y) in left.iter_mut().zip(right.iter_mut()) {
                let (a, b) = (*x, *y);
                *x = a + b;
                *y = a - b;
            }
        }
        half *= 2;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FastfoodState {
    pub input_dim: usize,
    pub padded_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    signs: Vec<f64>,
    perm: Vec<u32>,
    gauss: Vec<f64>,
    rescale: Vec<f64>,
    pub sigma: f64,
}

impl FastfoodState {
    pub fn new(input_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidParam("projection dimensions must be positive".into()));
        }
        let padded_dim = input_dim.next_power_of_two();
        if out_dim > padded_dim {
            return Err(Error::InvalidParam(format!(
                "output dim {out_dim} exceeds padded dim {padded_dim}"
            )));
        }
        let mut r = rng::chacha(rng::derive(seed, "fastfood"));
        let signs = (0..padded_dim)
            .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut perm: Vec<u32> = (0..padded_dim as u32).collect();
        perm.shuffle(&mut r);
        let gauss: Vec<f64> = (0..padded_dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let frob = l2_norm(&gauss);
        let chi = ChiSquared::new(padded_dim as f64).expect("positive degrees of freedom");
        let rescale = (0..padded_dim).map(|_| chi.sample(&mut r).sqrt() / frob).collect();
        let mut state = FastfoodState {
            input_dim,
            padded_dim,
            out_dim,
            seed,
            signs,
            perm,
            gauss,
            rescale,
            sigma: 1.0,
        };
        state.sigma = state.calibrate();
        Ok(state)
    }

    /// `sqrt(mean ||P x||^2 / ||x||^2)` over seeded Gaussian probes with
    /// `sigma = 1`; dividing by it makes the operator isometric on average.
    fn calibrate(&self) -> f64 {
        let mut r = rng::chacha(rng::derive(self.seed, "fastfood-calibration"));
        let mut total = 0.0;
        for _ in 0..CALIBRATION_PROBES {
            let x = rng::gaussian_vec(&mut r, self.input_dim);
            let y = self.apply_unscaled(&x);
            total += y.iter().map(|v| v * v).sum::<f64>() / x.iter().map(|v| v * v).sum::<f64>();
        }
        (total / CALIBRATION_PROBES as f64).sqrt()
    }

    fn apply_unscaled(&self, input: &[f64]) -> Vec<f64> {
        let n = self.padded_dim;
        let mut buf = vec![0.0; n];
        for (b, (x, s)) in buf.iter_mut().zip(input.iter().zip(&self.signs)) {
            *b = x * s;
        }
        fwht(&mut buf).expect("power of two");
        let mut permuted: Vec<f64> = self.perm.iter().map(|&p| buf[p as usize]).collect();
        for (v, g) in permuted.iter_mut().zip(&self.gauss) {
            *v *= g;
        }
        fwht(&mut permuted).expect("power of two");
        let norm = 1.0 / (self.out_dim as f64).sqrt();
        permuted.truncate(self.out_dim);
        for (v, s) in permuted.iter_mut().zip(&self.rescale) {
            *v *= s * norm;
        }
        permuted
    }

    /// `P x` without normalization.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "projection expects {} inputs, got {}",
                self.input_dim,
                input.len()
            )));
        }
        let inv = 1.0 / self.sigma;
        Ok(self.apply_unscaled(input).into_iter().map(|v| v * inv).collect())
    }

    /// `P g / ||P g||` as a sketch.
    pub fn project(&self, grad: &GradVector) -> Result<GradSketch> {
        let y = self.apply(&grad.values)?;
        let norm = l2_norm(&y);
        if norm < ZERO_GRADIENT_NORM || grad.norm < ZERO_GRADIENT_NORM {
            return Err(Error::ZeroGradient(grad.clip_id));
        }
        Ok(GradSketch {
            clip_id: grad.clip_id,
            weighting: grad.weighting,
            fingerprint: grad.fingerprint.with_projection(self.seed, self.out_dim),
            values: y.iter().map(|v| (v / norm) as f32).collect(),
        })
    }
}

/// Unit-norm projected gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSketch {
    pub clip_id: u64,
    pub weighting: Weighting,
    pub fingerprint: Fingerprint,
    pub values: Vec<f32>,
}

impl GradSketch {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreHeader {
    pub out_dim: usize,
    pub count: u64,
    pub fingerprint: Fingerprint,
    pub weighting: Weighting,
}

impl StoreHeader {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(STORE_HEADER_LEN as usize);
        out.extend_from_slice(SKETCH_MAGIC);
        out.extend_from_slice(&(self.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.0);
        out.push(self.weighting.code());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < STORE_HEADER_LEN as usize || &bytes[..8] != SKETCH_MAGIC {
            return Err(Error::CorruptRecord("bad sketch store header".into()));
        }
        let weighting = Weighting::from_code(bytes[52])
            .ok_or_else(|| Error::CorruptRecord("unknown weighting code".into()))?;
        Ok(StoreHeader {
            out_dim: u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
            count: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            fingerprint: Fingerprint(bytes[20..52].try_into().unwrap()),
            weighting,
        })
    }

    pub fn record_len(&self) -> u64 {
        8 + 4 * self.out_dim as u64
    }
}

/// Append-only sketch file; a single writer at a time.
#[derive(Debug)]
pub struct SketchStore {
    path: PathBuf,
    header: StoreHeader,
}

impl SketchStore {
    pub fn create(path: &Path, out_dim: usize, fingerprint: Fingerprint, weighting: Weighting) -> Result<Self> {
        let header = StoreHeader {
            out_dim,
            count: 0,
            fingerprint,
            weighting,
        };
        fs::write(path, header.encode()).map_err(|e| Error::io(path, e))?;
        Ok(SketchStore {
            path: path.to_path_buf(),
            header,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let header = StoreHeader::decode(&bytes)?;
        Ok(SketchStore {
            path: path.to_path_buf(),
            header,
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn append(&mut self, sketch: &GradSketch) -> Result<()> {
        self.append_all(std::slice::from_ref(sketch))
    }

    pub fn append_all(&mut self, sketches: &[GradSketch]) -> Result<()> {
        let mut buf = Vec::new();
        for s in sketches {
            if s.fingerprint != self.header.fingerprint {
                return Err(Error::FingerprintMismatch);
            }
            if s.dim() != self.header.out_dim {
                return Err(Error::LengthMismatch(s.dim(), self.header.out_dim));
            }
            if s.weighting != self.header.weighting {
                return Err(Error::InvalidParam(format!(
                    "store holds {:?} sketches, got {:?}",
                    self.header.weighting, s.weighting
                )));
            }
            buf.extend_from_slice(&s.clip_id.to_le_bytes());
            for v in &s.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let io = |e| Error::io(&self.path, e);
        let mut file = OpenOptions::new().write(true).open(&self.path).map_err(io)?;
        let end = STORE_HEADER_LEN + self.header.count * self.header.record_len();
        file.seek(SeekFrom::Start(end)).map_err(io)?;
        file.write_all(&buf).map_err(io)?;
        self.header.count += sketches.len() as u64;
        file.seek(SeekFrom::Start(0)).map_err(io)?;
        file.write_all(&self.header.encode()).map_err(io)?;
        Ok(())
    }
}

/// Reads a store; sketches come back sorted by clip id.
pub fn load_sketches(path: &Path) -> Result<(StoreHeader, Vec<GradSketch>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = StoreHeader::decode(&bytes)?;
    let expected = STORE_HEADER_LEN + header.count * header.record_len();
    if bytes.len() as u64 != expected {
        return Err(Error::CorruptRecord(format!(
            "store is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut sketches: Vec<GradSketch> = bytes[STORE_HEADER_LEN as usize..]
        .chunks_exact(header.record_len() as usize)
        .map(|rec| GradSketch {
            clip_id: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            weighting: header.weighting,
            fingerprint: header.fingerprint,
            values: rec[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        })
        .collect();
    sketches.sort_by_key(|s| s.clip_id);
    Ok((header, sketches))
}
