//! Percentile majority vote over several queries and the exported subset.

use motion_attrib::attribution::{Estimator, InfluenceMatrix, Provenance};
use motion_attrib::dataset::{build_corpus, Category, CorpusConfig};
use motion_attrib::gradients::Weighting;
use motion_attrib::selection::{budget, export_subset, majority_vote, ThresholdScope};

fn main() -> motion_attrib::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, 3)).collect();
    let manifest = build_corpus(&CorpusConfig::with_counts(&counts, 1), dir.path())?;
    let n = manifest.entries.len();

    // Three queries that each prefer a different block of clips.
    let scores: Vec<f64> = (0..3)
        .flat_map(|q| (0..n).map(move |j| if j / 7 == q { 0.8 - j as f64 * 0.01 } else { 0.1 + ((j * 13) % 7) as f64 * 0.01 }))
        .collect();
    let matrix = InfluenceMatrix {
        query_ids: vec![100, 101, 102],
        train_ids: manifest.ids(),
        scores,
        provenance: Provenance {
            fingerprint: "example".into(),
            weighting: Weighting::Motion,
            estimator: Estimator::Single,
            t_hat: Some(751),
            sketch_dim: Some(512),
            seed: None,
            skipped: Vec::new(),
        },
    };
    let k = budget(n, 0.10);
    for scope in [ThresholdScope::PerQuery, ThresholdScope::Global] {
        let report = majority_vote(&matrix, 90.0, k, scope)?;
        println!("{scope:?}: cutoffs {:?}", report.cutoffs);
        for t in &report.trace {
            println!("  rank {} clip {} votes {} sum {:.2} ({})", t.rank, t.clip_id, t.votes, t.summed_influence, t.decided_by);
        }
        let subset = export_subset(&report, &manifest)?;
        println!("  exported {} of {n} clips", subset.entries.len());
    }
    Ok(())
}
