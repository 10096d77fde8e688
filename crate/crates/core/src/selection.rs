//! Subset selection from influence scores: top-K for one query and
//! percentile majority vote across many.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::InfluenceMatrix;
use crate::dataset::CorpusManifest;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 90.0;
pub const DEFAULT_K_FRAC: f64 = 0.10;

/// `ceil(frac * n)`, at least 1.
pub fn budget(n: usize, frac: f64) -> usize {
    ((frac * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Positions of the `k` largest scores, descending, ties to the lower
/// position. NaN scores rank last.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| desc(scores[a], scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn desc(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).unwrap(),
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    PerQuery,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieBreak {
    pub clip_id: u64,
    pub rank: usize,
    pub votes: u32,
    pub summed_influence: f64,
    /// Which key separated this clip from its predecessor: `votes`,
    /// `summed_influence`, `clip_id`, or `first`.
    pub decided_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected: Vec<u64>,
    pub k: usize,
    pub tau: f64,
    pub scope: ThresholdScope,
    pub votes: Vec<(u64, u32)>,
    pub cutoffs: Vec<f64>,
    pub degenerate_queries: Vec<u64>,
    pub truncated: bool,
    pub trace: Vec<TieBreak>,
    pub fingerprint: String,
}

impl SelectionReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path).map_err(|e| Error::io(path, e))?)?)
    }

    pub fn vote_of(&self, clip_id: u64) -> Option<u32> {
        self.votes.iter().find(|(id, _)| *id == clip_id).map(|(_, v)| *v)
    }
}

/// Per query, clips scoring strictly above the `tau` percentile receive a
/// vote. Clips rank by votes, then summed influence, then clip id.
pub fn majority_vote(matrix: &InfluenceMatrix, tau: f64, k: usize, scope: ThresholdScope) -> Result<SelectionReport> {
    if !(tau > 0.0 && tau < 100.0) {
        return Err(Error::InvalidParam(format!("tau {tau} outside (0, 100)")));
    }
    if k == 0 {
        return Err(Error::InvalidParam("K must be at least 1".into()));
    }
    if matrix.rows() == 0 || matrix.cols() == 0 {
        return Err(Error::EmptyStore);
    }
    if !matrix.is_complete() {
        return Err(Error::InvalidParam("influence matrix has skipped entries".into()));
    }
    let n = matrix.cols();
    let global = percentile(&matrix.scores, tau);
    let mut votes = vec![0u32; n];
    let mut sums = vec![0.0f64; n];
    let mut cutoffs = Vec::with_capacity(matrix.rows());
    let mut degenerate = Vec::new();
    for q in 0..matrix.rows() {
        let row = matrix.row(q);
        let cutoff = match scope {
            ThresholdScope::PerQuery => percentile(row, tau),
            ThresholdScope::Global => global,
        };
        cutoffs.push(cutoff);
        if row.iter().all(|s| *s == row[0]) {
            log::warn!("query {} has a constant score row and casts no votes", matrix.query_ids[q]);
            degenerate.push(matrix.query_ids[q]);
        }
        for (j, s) in row.iter().enumerate() {
            sums[j] += s;
            if *s > cutoff {
                votes[j] += 1;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let key = |a: usize, b: usize| {
        votes[b]
            .cmp(&votes[a])
            .then(desc(sums[a], sums[b]))
            .then(matrix.train_ids[a].cmp(&matrix.train_ids[b]))
    };
    order.sort_by(|&a, &b| key(a, b));
    let take = k.min(n);
    let mut trace = Vec::with_capacity(take);
    for (rank, &j) in order.iter().take(take).enumerate() {
        let decided_by = if rank == 0 {
            "first"
        } else {
            let p = order[rank - 1];
            if votes[p] != votes[j] {
                "votes"
            } else if sums[p] != sums[j] {
                "summed_influence"
            } else {
                "clip_id"
            }
        };
        trace.push(TieBreak {
            clip_id: matrix.train_ids[j],
            rank,
            votes: votes[j],
            summed_influence: sums[j],
            decided_by: decided_by.into(),
        });
    }
    Ok(SelectionReport {
        selected: trace.iter().map(|t| t.clip_id).collect(),
        k,
        tau,
        scope,
        votes: matrix.train_ids.iter().copied().zip(votes).collect(),
        cutoffs,
        degenerate_queries: degenerate,
        truncated: k > n,
        trace,
        fingerprint: matrix.provenance.fingerprint.clone(),
    })
}

/// Manifest restricted to the selected clips, sharing the container.
pub fn export_subset(report: &SelectionReport, manifest: &CorpusManifest) -> Result<CorpusManifest> {
    if report.selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    manifest.subset(&report.selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{Estimator, Provenance};
    use crate::gradients::Weighting;

    fn matrix(rows: &[&[f64]]) -> InfluenceMatrix {
        InfluenceMatrix {
            query_ids: (0..rows.len() as u64).collect(),
            train_ids: (0..rows[0].len() as u64).collect(),
            scores: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            provenance: Provenance {
                fingerprint: String::new(),
                weighting: Weighting::Motion,
                estimator: Estimator::Single,
                t_hat: None,
                sketch_dim: None,
                seed: None,
                skipped: Vec::new(),
            },
        }
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(top_k(&[0.3; 4], 2), vec![0, 1]);
        assert_eq!(top_k(&[0.1, 0.9, 0.5], 3), vec![1, 2, 0]);
        assert_eq!(top_k(&[0.1, 0.9], 5), vec![1, 0]);
    }

    #[test]
    fn nearest_rank_table() {
        let row: Vec<f64> = (1..=10).map(f64::from).collect();
        for (p, cutoff) in [(90.0, 9.0), (50.0, 5.0), (10.0, 1.0), (95.0, 10.0), (1.0, 1.0), (91.0, 10.0)] {
            assert_eq!(percentile(&row, p), cutoff, "p = {p}");
        }
        assert_eq!(percentile(&[0.9, 0.1, 0.5], 50.0), 0.5);
    }

    #[test]
    fn q2_fixture() {
        let m = matrix(&[&[0.9, 0.1, 0.5], &[0.1, 0.9, 0.5]]);
        let r = majority_vote(&m, 50.0, 1, ThresholdScope::PerQuery).unwrap();
        assert_eq!(r.votes, vec![(0, 1), (1, 1), (2, 0)]);
        assert_eq!(r.selected, vec![0]);
        let full = majority_vote(&m, 50.0, 3, ThresholdScope::PerQuery).unwrap();
        assert_eq!(full.trace[1].decided_by, "clip_id");
        assert_eq!(full.trace[2].decided_by, "votes");
    }

    #[test]
    fn tau_90_single_vote_and_degenerate_row() {
        let row: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
        let r = majority_vote(&matrix(&[&row]), 90.0, 1, ThresholdScope::PerQuery).unwrap();
        assert_eq!(r.votes.iter().map(|(_, v)| v).sum::<u32>(), 1);

        let flat = majority_vote(&matrix(&[&[0.2; 5]]), 50.0, 2, ThresholdScope::PerQuery).unwrap();
        assert_eq!(flat.degenerate_queries, vec![0]);
        assert!(flat.votes.iter().all(|(_, v)| *v == 0));
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(budget(100, 0.1), 10);
        assert_eq!(budget(64, 0.1), 7);
        assert_eq!(budget(3, 0.1), 1);
    }
}
