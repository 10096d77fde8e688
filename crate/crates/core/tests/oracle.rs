use motion_attrib::dataset::{Category, Corpus, CorpusConfig, VideoClip};
use motion_attrib::experiment::{encode_examples, frame_length_fixture, Workbench};
use motion_attrib::genmodel::{Model, ModelConfig, ModelParams, TrainConfig};
use motion_attrib::gradients::Weighting;
use motion_attrib::motion::MotionConfig;
use motion_attrib::oracle::{
    frame_length_bias_study, full_gradient_influence, loo_retrain_influence, LooModels, QueryLoss,
};
use motion_attrib::{rng, Error};

const SEED: u64 = 1;

/// Ten moving and static clips plus a copy of the query under a fresh id.
fn loo_fixture() -> (Model, ModelParams, Vec<VideoClip>, VideoClip, TrainConfig) {
    let model = Model::new(ModelConfig::default()).unwrap();
    let counts = [
        (Category::Static, 3),
        (Category::Slide, 2),
        (Category::Bounce, 2),
        (Category::Spin, 2),
        (Category::FreeFall, 1),
    ];
    let mut clips = Corpus::generate(&CorpusConfig::with_counts(&counts, rng::derive(SEED, "loo")))
        .unwrap()
        .standardized();
    let query_cfg = CorpusConfig {
        first_id: 100,
        ..CorpusConfig::with_counts(&[(Category::Slide, 1)], rng::derive(SEED, "loo-query"))
    };
    let query = Corpus::generate(&query_cfg).unwrap().standardized().remove(0);
    clips.push(VideoClip {
        clip_id: 50,
        ..query.clone()
    });
    let init = ModelParams::init(model.config.arch, rng::derive(SEED, "init"));
    let cfg = TrainConfig {
        steps: 100,
        batch_size: clips.len(),
        seed: rng::derive(SEED, "train"),
        ..TrainConfig::default()
    };
    (model, init, clips, query, cfg)
}

fn loo_deltas() -> (Vec<VideoClip>, Vec<f64>) {
    let (model, init, clips, query, cfg) = loo_fixture();
    let data = encode_examples(&model, &clips).unwrap();
    let q = QueryLoss::new(&model, model.encode(&query).unwrap(), query.category_label, None, 10, SEED);
    let deltas = LooModels::train(&model, &init, &data, &cfg).unwrap().deltas(&model, &q).unwrap();
    (clips, deltas)
}

#[test]
fn loo_ranks_query_duplicate_in_top_three() {
    let (clips, deltas) = loo_deltas();
    let dup = clips.len() - 1;
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]));
    assert!(order[..3].contains(&dup), "duplicate rank {:?} in {deltas:?}", order.iter().position(|&i| i == dup));
}

/// Removing any one clip costs the query about the same, so static clips
/// land below the median Δ only in some seeds (2 of seeds 1..=6).
#[test]
#[ignore = "static clips are not reliably below the median delta; seed 1 ranks them 3rd to 5th of 11"]
fn loo_static_clips_below_median() {
    let (clips, deltas) = loo_deltas();
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let statics: Vec<f64> = (0..clips.len())
        .filter(|&i| clips[i].category_label == Category::Static.label())
        .map(|i| deltas[i])
        .collect();
    assert!(statics.iter().all(|d| *d < median), "static deltas {statics:?}, median {median}");
}

#[test]
fn single_index_oracle_matches_batch_and_checks_range() {
    let (model, init, clips, query, mut cfg) = loo_fixture();
    cfg.steps = 10;
    let data = encode_examples(&model, &clips).unwrap();
    let q = QueryLoss::new(&model, model.encode(&query).unwrap(), query.category_label, None, 3, SEED);
    let batch = LooModels::train(&model, &init, &data, &cfg).unwrap().deltas(&model, &q).unwrap();
    let single = loo_retrain_influence(&model, &init, &data, &cfg, &q, 2).unwrap();
    assert!((single - batch[2]).abs() < 1e-12);
    assert!(matches!(
        loo_retrain_influence(&model, &init, &data, &cfg, &q, data.len()),
        Err(Error::InvalidParam(_))
    ));
}

#[test]
fn full_gradient_self_score_is_maximal() {
    let counts = [(Category::Slide, 2), (Category::Spin, 2), (Category::Static, 2)];
    let model = Model::new(ModelConfig::default()).unwrap();
    let clips = Corpus::generate(&CorpusConfig::with_counts(&counts, 4)).unwrap().standardized();
    let params = ModelParams::init(model.config.arch, 4);
    let b = Workbench::from_parts(model, params, clips, &MotionConfig::default(), 4, None).unwrap();
    let inputs = b.inputs(Weighting::Motion);
    for q in [0, 3] {
        let scores = full_gradient_influence(&b.model, &b.params, &inputs, &inputs[q], &b.pair).unwrap();
        assert!((scores[q] - 1.0).abs() < 1e-12);
        assert!(scores.iter().all(|s| *s <= scores[q] + 1e-12));
        let again = full_gradient_influence(&b.model, &b.params, &inputs, &inputs[q], &b.pair).unwrap();
        assert_eq!(scores, again);
    }
}

#[test]
fn canonical_lengths_make_frame_study_undefined() {
    let mut cfg = frame_length_fixture(2);
    cfg.variable_length = false;
    cfg.counts = vec![(Category::Slide, 3), (Category::Static, 2)];
    cfg.train.steps = 5;
    let b = Workbench::build(&cfg).unwrap();
    assert!(matches!(frame_length_bias_study(&b, &[0]), Err(Error::ConstantVector)));
}
