use proptest::prelude::*;

use motion_attrib::attribution::{influence_pair, Estimator, InfluenceMatrix, Provenance};
use motion_attrib::config::RunConfig;
use motion_attrib::dataset::Category;
use motion_attrib::gradients::{l2_norm, Fingerprint, GradVector, Weighting};
use motion_attrib::motion::{downsample_to_latent, normalize_weights, NormalizeScope};
use motion_attrib::oracle::spearman;
use motion_attrib::selection::{majority_vote, top_k, ThresholdScope};
use motion_attrib::sketch::{fwht, FastfoodState};

fn matrix(rows: &[Vec<f64>], train_ids: Vec<u64>) -> InfluenceMatrix {
    InfluenceMatrix {
        query_ids: (0..rows.len() as u64).collect(),
        train_ids,
        scores: rows.iter().flatten().copied().collect(),
        provenance: Provenance {
            fingerprint: String::new(),
            weighting: Weighting::Uniform,
            estimator: Estimator::Single,
            t_hat: None,
            sketch_dim: None,
            seed: None,
            skipped: Vec::new(),
        },
    }
}

fn score_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 3usize..20).prop_flat_map(|(q, n)| {
        prop::collection::vec(prop::collection::vec((0u8..12).prop_map(|v| f64::from(v) / 4.0), n), q)
    })
}

fn grad(values: Vec<f64>) -> GradVector {
    GradVector {
        clip_id: 0,
        weighting: Weighting::Uniform,
        frame_count: 8,
        norm: l2_norm(&values),
        fingerprint: Fingerprint([0; 32]),
        values,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fwht_is_linear(
        x in prop::collection::vec(-10.0f64..10.0, 32),
        y in prop::collection::vec(-10.0f64..10.0, 32),
        a in -3.0f64..3.0,
    ) {
        let mut combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let (mut hx, mut hy) = (x.clone(), y.clone());
        fwht(&mut combo).unwrap();
        fwht(&mut hx).unwrap();
        fwht(&mut hy).unwrap();
        for i in 0..32 {
            prop_assert!((combo[i] - (a * hx[i] + hy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn top_k_is_sorted_with_ties_to_lower_position(
        scores in prop::collection::vec((0u8..6).prop_map(f64::from), 1..30),
        k in 1usize..40,
    ) {
        let picked = top_k(&scores, k);
        prop_assert_eq!(picked.len(), k.min(scores.len()));
        for w in picked.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
        if let Some(&last) = picked.last() {
            for j in (0..scores.len()).filter(|j| !picked.contains(j)) {
                prop_assert!(scores[j] < scores[last] || (scores[j] == scores[last] && j > last));
            }
        }
    }

    #[test]
    fn lowering_tau_never_removes_votes(rows in score_rows(), hi in 50.0f64..99.0, drop in 1.0f64..49.0) {
        let n = rows[0].len();
        let m = matrix(&rows, (0..n as u64).collect());
        for scope in [ThresholdScope::PerQuery, ThresholdScope::Global] {
            let strict = majority_vote(&m, hi, 1, scope).unwrap();
            let loose = majority_vote(&m, hi - drop, 1, scope).unwrap();
            for ((_, a), (_, b)) in strict.votes.iter().zip(&loose.votes) {
                prop_assert!(b >= a);
                prop_assert!(*a as usize <= rows.len());
            }
        }
    }

    #[test]
    fn selection_is_permutation_equivariant(rows in score_rows(), tau in 5.0f64..95.0, k in 1usize..6, salt in any::<u64>()) {
        let n = rows[0].len();
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let base = majority_vote(&matrix(&rows, ids.clone()), tau, k, ThresholdScope::PerQuery).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(salt | 1).rotate_left(17));
        let permuted_rows: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect();
        let permuted_ids: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
        let shuffled = majority_vote(&matrix(&permuted_rows, permuted_ids), tau, k, ThresholdScope::PerQuery).unwrap();
        prop_assert_eq!(&base.selected, &shuffled.selected);
        prop_assert_eq!(base.selected.len(), k.min(n));
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&y, &x)) {
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
        if let Ok(s) = spearman(&x, &x) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn motion_weights_stay_in_unit_interval(
        mags in prop::collection::vec(0.0f64..6.0, 3 * 64),
        per_frame in any::<bool>(),
    ) {
        let scope = if per_frame { NormalizeScope::PerFrame } else { NormalizeScope::Global };
        let (w, _) = normalize_weights(&mags, 3, 64, scope);
        prop_assert_eq!(w.len(), 4 * 64);
        prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        let latent = downsample_to_latent(&w, 4, 8, 8, 4).unwrap();
        prop_assert!(latent.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sketches_are_unit_and_scores_symmetric(
        a in prop::collection::vec(-1.0f64..1.0, 100),
        b in prop::collection::vec(-1.0f64..1.0, 100),
        seed in any::<u64>(),
    ) {
        prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
        let state = FastfoodState::new(100, 32, seed).unwrap();
        let (sa, sb) = (state.project(&grad(a)).unwrap(), state.project(&grad(b)).unwrap());
        let norm: f64 = sa.values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-5);
        let (ab, ba) = (influence_pair(&sa, &sb).unwrap(), influence_pair(&sb, &sa).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.abs() <= 1.0 + 1e-6);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        per_cat in 1usize..50,
        tau in 1u32..99,
        k_frac in 1u32..100,
        t_hat in 1u32..1000,
        cat in 0usize..7,
        global in any::<bool>(),
    ) {
        let cfg = RunConfig {
            seed,
            pool_per_category: per_cat,
            tau: f64::from(tau),
            k_frac: f64::from(k_frac) / 100.0,
            t_hat,
            query_category: Category::ALL[cat],
            global_tau: global,
            ..RunConfig::default()
        };
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
