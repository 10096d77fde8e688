//! Plot-ready outputs: selection overlap tables, per-category selection
//! counts and mask overlays as PGM images.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attribution::InfluenceMatrix;
use crate::dataset::{Category, VideoClip};
use crate::error::{Error, Result};
use crate::motion::MotionWeights;
use crate::selection::{top_k, SelectionReport};

/// `overlap[i][j] = 100 |S_i ∩ S_j| / |S_i|`.
pub fn overlap_table(sets: &[Vec<u64>]) -> Vec<Vec<f64>> {
    let sets: Vec<BTreeSet<u64>> = sets.iter().map(|s| s.iter().copied().collect()).collect();
    sets.iter()
        .map(|a| {
            sets.iter()
                .map(|b| {
                    if a.is_empty() {
                        0.0
                    } else {
                        100.0 * a.intersection(b).count() as f64 / a.len() as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Top-`k` train ids of every query row.
pub fn per_query_topk(matrix: &InfluenceMatrix, k: usize) -> Vec<Vec<u64>> {
    (0..matrix.rows())
        .map(|q| top_k(matrix.row(q), k).into_iter().map(|j| matrix.train_ids[j]).collect())
        .collect()
}

pub fn overlap_csv(labels: &[String], table: &[Vec<f64>]) -> String {
    let mut out = String::from("set");
    for l in labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(table) {
        out.push_str(l);
        for v in row {
            let _ = write!(out, ",{v:.2}");
        }
        out.push('\n');
    }
    out
}

/// Selected-clip counts per category label.
pub fn category_counts(selected: &[u64], label_of: impl Fn(u64) -> Option<u32>) -> Vec<(Category, usize)> {
    let mut counts = vec![0usize; Category::ALL.len()];
    for &id in selected {
        if let Some(l) = label_of(id) {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
    }
    Category::ALL.iter().copied().zip(counts).collect()
}

/// Binary PGM (P5) of `values` in `[0, 1]`.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Frame `k` of the clip blended half and half with its pixel motion
/// weights.
pub fn mask_overlay(clip: &VideoClip, weights: &MotionWeights, k: usize) -> Result<Vec<u8>> {
    let (h, w) = (clip.dims.height, clip.dims.width);
    if weights.height != h || weights.width != w || weights.pixel_weights.is_empty() {
        return Err(Error::DimensionMismatch("overlay needs pixel weights at clip resolution".into()));
    }
    let c = clip.dims.channels;
    let frame = clip.frame(k);
    let mask = &weights.pixel_weights[k * h * w..(k + 1) * h * w];
    let values: Vec<f64> = (0..h * w)
        .map(|i| {
            let intensity = frame[i * c..(i + 1) * c].iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64;
            0.5 * intensity + 0.5 * mask[i]
        })
        .collect();
    Ok(pgm_bytes(w, h, &values))
}

/// Writes overlap tables for the selection and the per-query top-K sets.
/// Returns the written paths.
pub fn write_report(
    matrix: &InfluenceMatrix,
    selection: &SelectionReport,
    others: &[(String, Vec<u64>)],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: Vec<u8>| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };

    let k = selection.k;
    let per_query = per_query_topk(matrix, k);
    let labels: Vec<String> = matrix.query_ids.iter().map(|id| format!("q{id}")).collect();
    write("query_overlap.csv", overlap_csv(&labels, &overlap_table(&per_query)).into_bytes())?;

    let mut names = vec!["selected".to_string()];
    let mut sets = vec![selection.selected.clone()];
    for (name, ids) in others {
        names.push(name.clone());
        sets.push(ids.clone());
    }
    write("selection_overlap.csv", overlap_csv(&names, &overlap_table(&sets)).into_bytes())?;

    let mut votes = String::from("clip_id,votes\n");
    for (id, v) in &selection.votes {
        let _ = writeln!(votes, "{id},{v}");
    }
    write("votes.csv", votes.into_bytes())?;
    Ok(written)
}
