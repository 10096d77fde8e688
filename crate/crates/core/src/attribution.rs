//! Influence scores between query and training gradients.
//!
//! The production path scores unit-norm sketches by dot product. The
//! averaged estimator works on full gradients over a set of paired
//! `(t, eps)` draws and is used as a reference.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{Model, ModelParams};
use crate::gradients::{per_example_gradient, Fingerprint, GradInput, NoisePair, Weighting};
use crate::sketch::GradSketch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Single,
    Averaged,
    FullGrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub fingerprint: String,
    pub weighting: Weighting,
    pub estimator: Estimator,
    pub t_hat: Option<u32>,
    pub sketch_dim: Option<usize>,
    pub seed: Option<u64>,
    /// `(clip_id, reason)` for clips whose column or row is NaN.
    #[serde(default)]
    pub skipped: Vec<(u64, String)>,
}

/// `Q x N` cosine scores, row-major by query.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub query_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub provenance: Provenance,
}

impl InfluenceMatrix {
    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.train_ids.len()
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let n = self.cols();
        &self.scores[q * n..(q + 1) * n]
    }

    pub fn get(&self, q: usize, n: usize) -> f64 {
        self.scores[q * self.cols() + n]
    }

    pub fn is_complete(&self) -> bool {
        self.scores.iter().all(|s| s.is_finite())
    }

    /// Writes the CSV and a `<path>.provenance.json` sidecar.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query_id");
        for id in &self.train_ids {
            out.push_str(&format!(",{id}"));
        }
        out.push('\n');
        for (q, id) in self.query_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for s in self.row(q) {
                if s.is_nan() {
                    out.push_str(",nan");
                } else {
                    // `{:e}` round-trips f64 exactly.
                    out.push_str(&format!(",{s:e}"));
                }
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec_pretty(&self.provenance)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::CorruptRecord(format!("{}: {msg}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty matrix file"))?;
        let train_ids = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad("bad train id")))
            .collect::<Result<Vec<_>>>()?;
        let mut query_ids = Vec::new();
        let mut scores = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut cells = line.split(',');
            let id = cells.next().unwrap_or_default();
            query_ids.push(id.trim().parse::<u64>().map_err(|_| bad("bad query id"))?);
            let before = scores.len();
            for cell in cells {
                scores.push(cell.trim().parse::<f64>().map_err(|_| bad("bad score"))?);
            }
            if scores.len() - before != train_ids.len() {
                return Err(bad("ragged row"));
            }
        }
        let side = sidecar_path(path);
        let provenance = serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
        Ok(InfluenceMatrix {
            query_ids,
            train_ids,
            scores,
            provenance,
        })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn sketch_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub fn influence_pair(a: &GradSketch, b: &GradSketch) -> Result<f64> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::FingerprintMismatch);
    }
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch(a.dim(), b.dim()));
    }
    Ok(sketch_dot(&a.values, &b.values))
}

pub fn influence_matrix(train: &[GradSketch], queries: &[GradSketch]) -> Result<InfluenceMatrix> {
    let first = train.first().ok_or(Error::EmptyStore)?;
    if queries.is_empty() {
        return Err(Error::EmptyStore);
    }
    for s in train.iter().chain(queries) {
        if s.fingerprint != first.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        if s.dim() != first.dim() {
            return Err(Error::LengthMismatch(s.dim(), first.dim()));
        }
    }
    let scores: Vec<f64> = queries
        .par_iter()
        .flat_map_iter(|q| train.iter().map(move |t| sketch_dot(&q.values, &t.values)))
        .collect();
    Ok(InfluenceMatrix {
        query_ids: queries.iter().map(|q| q.clip_id).collect(),
        train_ids: train.iter().map(|t| t.clip_id).collect(),
        scores,
        provenance: Provenance {
            fingerprint: first.fingerprint.to_hex(),
            weighting: first.weighting,
            estimator: Estimator::Single,
            t_hat: None,
            sketch_dim: Some(first.dim()),
            seed: None,
            skipped: Vec::new(),
        },
    })
}

/// Scores from unit-norm full gradients. `None` entries are skipped clips
/// and produce NaN.
pub fn full_matrix(
    train_ids: &[u64],
    train: &[Option<Vec<f64>>],
    query_ids: &[u64],
    queries: &[Option<Vec<f64>>],
    provenance: Provenance,
) -> InfluenceMatrix {
    let scores = queries
        .par_iter()
        .flat_map_iter(|q| {
            train.iter().map(move |t| match (q, t) {
                (Some(q), Some(t)) => dot(q, t),
                _ => f64::NAN,
            })
        })
        .collect();
    InfluenceMatrix {
        query_ids: query_ids.to_vec(),
        train_ids: train_ids.to_vec(),
        scores,
        provenance,
    }
}

/// `round((j + 0.5) T / count)` for `j < count`.
pub fn evenly_spaced_timesteps(total: u32, count: usize) -> Vec<u32> {
    (0..count)
        .map(|j| ((j as f64 + 0.5) * f64::from(total) / count as f64).round() as u32)
        .collect()
}

/// One `(t, eps)` draw shared between train and query clips.
pub type SampleSet = [NoisePair];

/// Unit gradients of one clip at each draw.
pub fn unit_gradients(
    model: &Model,
    params: &ModelParams,
    input: &GradInput<'_>,
    samples: &SampleSet,
) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::InvalidParam("sample set is empty".into()));
    }
    samples
        .iter()
        .map(|pair| per_example_gradient(model, params, input, pair, Fingerprint([0; 32])).map(|g| g.unit()))
        .collect()
}

/// Mean over paired draws of the cosine between train and query gradients.
pub fn averaged_influence(
    model: &Model,
    params: &ModelParams,
    train: &GradInput<'_>,
    query: &GradInput<'_>,
    samples: &SampleSet,
) -> Result<f64> {
    let a = unit_gradients(model, params, train, samples)?;
    let b = unit_gradients(model, params, query, samples)?;
    Ok(mean_paired_dot(&a, &b))
}

pub fn mean_paired_dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dot(x, y)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sk(id: u64, values: Vec<f32>) -> GradSketch {
        GradSketch {
            clip_id: id,
            weighting: Weighting::Uniform,
            fingerprint: Fingerprint([1; 32]),
            values,
        }
    }

    #[test]
    fn pair_scores() {
        let a = sk(0, vec![0.6, 0.8]);
        let neg = sk(1, vec![-0.6, -0.8]);
        assert!((influence_pair(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        assert!((influence_pair(&a, &neg).unwrap() + 1.0).abs() < 1e-7);
        assert_eq!(influence_pair(&sk(0, vec![1.0, 0.0]), &sk(1, vec![0.0, 1.0])).unwrap(), 0.0);
        let mut other = sk(2, vec![1.0, 0.0]);
        other.fingerprint = Fingerprint([2; 32]);
        assert!(matches!(influence_pair(&a, &other), Err(Error::FingerprintMismatch)));
    }

    #[test]
    fn matrix_self_retrieval_and_empty() {
        let train = vec![sk(0, vec![1.0, 0.0]), sk(1, vec![0.6, 0.8]), sk(2, vec![0.0, 1.0])];
        let m = influence_matrix(&train, &train[1..2]).unwrap();
        assert_eq!(m.row(0)[1], sketch_dot(&[0.6, 0.8], &[0.6, 0.8]));
        assert!(matches!(influence_matrix(&[], &train), Err(Error::EmptyStore)));
    }

    #[test]
    fn timesteps() {
        assert_eq!(
            evenly_spaced_timesteps(1000, 10),
            vec![50, 150, 250, 350, 450, 550, 650, 750, 850, 950]
        );
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let train = vec![sk(4, vec![1.0, 0.0]), sk(9, vec![0.6, 0.8])];
        let mut m = influence_matrix(&train, &train).unwrap();
        m.scores[1] = f64::NAN;
        let path = dir.path().join("m.csv");
        m.save_csv(&path).unwrap();
        let back = InfluenceMatrix::load_csv(&path).unwrap();
        assert_eq!(back.train_ids, m.train_ids);
        assert!(back.scores[1].is_nan());
        assert_eq!(back.scores[3], m.scores[3]);
        assert_eq!(back.provenance, m.provenance);
    }
}
