use std::fs;

use motion_attrib::attribution::{Estimator, InfluenceMatrix, Provenance};
use motion_attrib::dataset::{build_corpus, Category, CorpusConfig, CorpusManifest, CONTAINER_FILE};
use motion_attrib::genmodel::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use motion_attrib::gradients::{Fingerprint, Weighting};
use motion_attrib::motion::{MaskCache, MotionConfig, MotionWeights};
use motion_attrib::selection::{export_subset, majority_vote, ThresholdScope};
use motion_attrib::sketch::{load_sketches, GradSketch, SketchStore, STORE_HEADER_LEN};
use motion_attrib::Error;

fn small_config(seed: u64) -> CorpusConfig {
    CorpusConfig::with_counts(&[(Category::Slide, 2), (Category::Static, 1), (Category::Spin, 2)], seed)
}

#[test]
fn corpus_round_trip_and_identical_builds() {
    let dir = tempfile::tempdir().unwrap();
    let a = build_corpus(&small_config(4), &dir.path().join("a")).unwrap();
    let b = build_corpus(&small_config(4), &dir.path().join("b")).unwrap();
    assert_eq!(
        fs::read(dir.path().join("a").join(CONTAINER_FILE)).unwrap(),
        fs::read(dir.path().join("b").join(CONTAINER_FILE)).unwrap()
    );

    let reopened = CorpusManifest::open(&dir.path().join("a")).unwrap();
    assert_eq!(reopened.entries, a.entries);
    let original = motion_attrib::dataset::Corpus::generate(&small_config(4)).unwrap();
    for clip in &original.clips {
        assert_eq!(&reopened.load_clip(clip.clip_id).unwrap(), clip);
    }
    assert!(matches!(b.load_clip(99), Err(Error::UnknownClip(99))));
}

#[test]
fn truncated_container_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_corpus(&small_config(5), dir.path()).unwrap();
    let path = dir.path().join(CONTAINER_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let last = *m.ids().last().unwrap();
    assert!(matches!(m.load_clip(last), Err(Error::CorruptRecord(_))));
    assert!(m.load_clip(m.ids()[0]).is_ok());

    let mut flipped = bytes.clone();
    let at = m.entries[0].offset as usize + 3;
    flipped[at] ^= 0xff;
    fs::write(&path, flipped).unwrap();
    assert!(matches!(m.load_clip(m.ids()[0]), Err(Error::CorruptRecord(_))));
}

fn provenance() -> Provenance {
    Provenance {
        fingerprint: "ab".into(),
        weighting: Weighting::Motion,
        estimator: Estimator::Single,
        t_hat: Some(751),
        sketch_dim: Some(4),
        seed: Some(2),
        skipped: vec![(7, "zero gradient".into())],
    }
}

#[test]
fn export_subset_of_ten_percent() {
    let dir = tempfile::tempdir().unwrap();
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, 14)).collect();
    let mut cfg = CorpusConfig::with_counts(&counts, 3);
    cfg.counts.insert(Category::Roll, 16);
    assert_eq!(cfg.total(), 100);
    let manifest = build_corpus(&cfg, dir.path()).unwrap();

    let scores: Vec<f64> = (0..100).map(|i| f64::from((i * 37) % 100)).collect();
    let matrix = InfluenceMatrix {
        query_ids: vec![1000],
        train_ids: manifest.ids(),
        scores,
        provenance: provenance(),
    };
    let report = majority_vote(&matrix, 90.0, 10, ThresholdScope::PerQuery).unwrap();
    let subset = export_subset(&report, &manifest).unwrap();
    assert_eq!(subset.entries.len(), 10);
    assert_eq!(subset.container_path(), manifest.container_path());

    let path = dir.path().join("subset.json");
    subset.write(&path).unwrap();
    let reloaded = CorpusManifest::open_file(&path).unwrap();
    for id in reloaded.ids() {
        assert_eq!(reloaded.load_clip(id).unwrap(), manifest.load_clip(id).unwrap());
    }

    let mut empty = report.clone();
    empty.selected.clear();
    assert!(matches!(export_subset(&empty, &manifest), Err(Error::EmptySelection)));
}

fn sketch(id: u64, fp: Fingerprint, dim: usize) -> GradSketch {
    let mut values = vec![0.0f32; dim];
    values[id as usize % dim] = 1.0;
    GradSketch {
        clip_id: id,
        weighting: Weighting::Uniform,
        fingerprint: fp,
        values,
    }
}

#[test]
fn sketch_store_layout_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    let fp = Fingerprint([3; 32]);
    let dim = 8;
    let mut store = SketchStore::create(&path, dim, fp, Weighting::Uniform).unwrap();
    for id in [5, 1, 3] {
        store.append(&sketch(id, fp, dim)).unwrap();
    }
    assert_eq!(fs::metadata(&path).unwrap().len(), STORE_HEADER_LEN + 3 * (8 + 4 * dim as u64));

    let (header, loaded) = load_sketches(&path).unwrap();
    assert_eq!(header.count, 3);
    assert_eq!(loaded.iter().map(|s| s.clip_id).collect::<Vec<_>>(), vec![1, 3, 5]);
    assert_eq!(loaded[0], sketch(1, fp, dim));

    let mut reopened = SketchStore::open(&path).unwrap();
    assert!(matches!(
        reopened.append(&sketch(9, Fingerprint([4; 32]), dim)),
        Err(Error::FingerprintMismatch)
    ));
    assert!(matches!(reopened.append(&sketch(9, fp, 4)), Err(Error::LengthMismatch(4, 8))));
    reopened.append(&sketch(9, fp, dim)).unwrap();
    assert_eq!(load_sketches(&path).unwrap().1.len(), 4);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_sketches(&path), Err(Error::CorruptRecord(_))));
}

#[test]
fn mask_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("masks.bin");
    let corpus = motion_attrib::dataset::Corpus::generate(&small_config(6)).unwrap();
    let mut cache = MaskCache::open(&path).unwrap();
    let mut expected = Vec::new();
    for clip in &corpus.clips {
        let w = MotionWeights::for_clip(clip, &MotionConfig::default()).unwrap();
        cache.append(clip.clip_id, &w).unwrap();
        expected.push((clip.clip_id, w.latent_weights));
    }
    let reopened = MaskCache::open(&path).unwrap();
    assert_eq!(reopened.len(), corpus.len());
    for (id, w) in expected {
        assert_eq!(reopened.get(id).unwrap().latent_weights, w);
    }

    fs::write(&path, b"NOTMASKS").unwrap();
    assert!(matches!(MaskCache::open(&path), Err(Error::CorruptRecord(_))));
}

#[test]
fn checkpoint_round_trip_at_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig::default();
    let mut params = ModelParams::init(cfg.arch, 8);
    let hash = save_checkpoint(&path, &cfg, &params).unwrap();
    assert_eq!(hash.len(), 64);
    let (cfg2, loaded) = load_checkpoint(&path).unwrap();
    params.round_to_f32();
    assert_eq!(cfg2, cfg);
    assert_eq!(loaded, params);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptRecord(_))));
}

#[test]
fn matrix_csv_keeps_nan_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let m = InfluenceMatrix {
        query_ids: vec![10, 11],
        train_ids: vec![0, 1, 7],
        scores: vec![0.25, -1.0, f64::NAN, 1.0 / 3.0, 0.0, f64::NAN],
        provenance: provenance(),
    };
    m.save_csv(&path).unwrap();
    let back = InfluenceMatrix::load_csv(&path).unwrap();
    assert_eq!(back.query_ids, m.query_ids);
    assert_eq!(back.train_ids, m.train_ids);
    assert_eq!(back.provenance, m.provenance);
    for (a, b) in back.scores.iter().zip(&m.scores) {
        assert!(a == b || (a.is_nan() && b.is_nan()));
    }
    assert!(!back.is_complete());
}
