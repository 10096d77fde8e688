//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use motion_attrib::attribution::{cosine, InfluenceMatrix, Provenance, Estimator};
use motion_attrib::config::RunConfig;
use motion_attrib::dataset::{Category, Corpus, CorpusConfig};
use motion_attrib::experiment::{
    attribution_fixture, frame_length_fixture, longest_clips, loo_study, selection_trial, strided, LooConfig,
    SelectionTrialConfig, Workbench,
};
use motion_attrib::genmodel::{Model, ModelConfig, ModelParams, Objective, Reduction};
use motion_attrib::gradients::{l2_norm, Weighting};
use motion_attrib::motion::{MotionConfig, MotionWeights};
use motion_attrib::oracle::{frame_length_bias_study, projection_ablation, timestep_ablation};
use motion_attrib::pipeline::run_pipeline;
use motion_attrib::rng;
use motion_attrib::selection::{majority_vote, top_k, ThresholdScope};
use motion_attrib::sketch::FastfoodState;
use rand::Rng;

type Outcome = Result<(bool, String), String>;

const SEED: u64 = 1;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn small_corpus(seed: u64) -> Vec<motion_attrib::dataset::VideoClip> {
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, 2)).collect();
    Corpus::generate(&CorpusConfig::with_counts(&counts, seed)).unwrap().standardized()
}

/// F * weighted(ones) against the unmasked mean over random draws.
fn uniform_mask_identity() -> Outcome {
    let model = Model::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let clips = small_corpus(rng::derive(SEED, "c1"));
    let mut r = rng::chacha(rng::derive(SEED, "c1-draws"));
    let mut worst = 0.0f64;
    for draw in 0..50 {
        let clip = &clips[r.random_range(0..clips.len())];
        let z = model.encode(clip).map_err(|e| e.to_string())?;
        let params = ModelParams::init(model.config.arch, rng::splitmix(SEED, draw));
        let t = f64::from(r.random_range(1..1000u32));
        let eps = rng::gaussian_vec(&mut r, z.z.len());
        let ones = vec![1.0f32; z.cells()];
        let mean = model.loss(&params, &z, clip.category_label, t, &eps, Reduction::Mean).map_err(|e| e.to_string())?;
        let weighted = model
            .motion_weighted_loss(&params, &z, clip.category_label, &ones, t, &eps)
            .map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(z.frames as f64 * weighted, mean));
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.2e} over 50 draws (tol 1e-12)")))
}

/// Central differences along random unit directions for three losses.
fn gradient_correctness() -> Outcome {
    let base = Model::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let clips = small_corpus(rng::derive(SEED, "c2"));
    let clip = clips.iter().find(|c| c.category_label == Category::Slide.label()).unwrap();
    let z = base.encode(clip).map_err(|e| e.to_string())?;
    let weights = MotionWeights::for_clip(clip, &MotionConfig::default()).map_err(|e| e.to_string())?;
    let params = ModelParams::init(base.config.arch, rng::derive(SEED, "c2-params"));
    let mut r = rng::chacha(rng::derive(SEED, "c2-draws"));
    let t = 600.0;
    let eps = rng::gaussian_vec(&mut r, z.z.len());
    let label = clip.category_label;

    let diffusion = base.with_objective(Objective::Diffusion);
    let flow = base.with_objective(Objective::FlowMatching);
    let losses: [(&str, &Model, Reduction<'_>); 3] = [
        ("diffusion", &diffusion, Reduction::Mean),
        ("flow", &flow, Reduction::Mean),
        ("weighted", &flow, Reduction::Weighted(&weights.latent_weights)),
    ];
    let h = 1e-4;
    let mut worst = BTreeMap::new();
    for (name, model, reduction) in losses {
        let (_, grad) = model
            .loss_and_grad(&params, &z, label, t, &eps, reduction)
            .map_err(|e| e.to_string())?;
        let mut max_err = 0.0f64;
        for _ in 0..20 {
            let mut v = rng::gaussian_vec(&mut r, params.len());
            let n = l2_norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            let shifted = |s: f64| {
                let mut p = params.clone();
                p.values.iter_mut().zip(&v).for_each(|(a, d)| *a += s * d);
                model.loss(&p, &z, label, t, &eps, reduction)
            };
            let fd = (shifted(h).map_err(|e| e.to_string())? - shifted(-h).map_err(|e| e.to_string())?) / (2.0 * h);
            let analytic: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
            max_err = max_err.max(rel_err(fd, analytic));
        }
        worst.insert(name, max_err);
    }
    let ok = worst.values().all(|e| *e <= 1e-3);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("max relative error over 20 directions: {detail} (tol 1e-3)")))
}

fn projection_trend(bench: &Workbench) -> Outcome {
    let queries = strided(bench.len(), 4);
    let mut ok = true;
    let mut detail = Vec::new();
    for weighting in [Weighting::Uniform, Weighting::Motion] {
        let r = projection_ablation(bench, &queries, &[32, 128, 512], weighting, rng::derive(SEED, "projection"))
            .map_err(|e| e.to_string())?;
        let monotone = r.rho.windows(2).all(|w| w[1] >= w[0]);
        let at512 = r.rho_at(512.0).unwrap_or(f64::NAN);
        ok &= monotone && at512 >= 0.7;
        detail.push(format!(
            "{weighting:?} rho(32,128,512) = {:.3}/{:.3}/{:.3}",
            r.rho[0], r.rho[1], r.rho[2]
        ));
    }
    Ok((ok, format!("{} (need monotone, rho(512) >= 0.7)", detail.join("; "))))
}

fn timestep_agreement(bench: &Workbench) -> Outcome {
    let r = timestep_ablation(bench, &strided(bench.len(), 4), &[751], 10, Weighting::Motion, Some(512), SEED)
        .map_err(|e| e.to_string())?;
    let rho = r.rho_at(751.0).unwrap_or(f64::NAN);
    Ok((rho >= 0.5, format!("rho(t=751 sketch, 10-step average) = {rho:.3} (need >= 0.5)")))
}

fn frame_length_fix() -> Outcome {
    let bench = Workbench::build(&frame_length_fixture(SEED)).map_err(|e| e.to_string())?;
    let s = frame_length_bias_study(&bench, &longest_clips(&bench)).map_err(|e| e.to_string())?;
    let ok = s.rho_raw >= 0.5 && s.reduction() >= 0.5;
    Ok((
        ok,
        format!(
            "rho(score, F) raw {:.3}, fixed {:.3}, reduction {:.1}% (need raw >= 0.5, reduction >= 50%)",
            s.rho_raw,
            s.rho_fixed,
            100.0 * s.reduction()
        ),
    ))
}

fn counterfactual() -> Outcome {
    let s = loo_study(&LooConfig::new(SEED)).map_err(|e| e.to_string())?;
    let ok = s.mean_rho >= 0.3 && s.mean_rho > s.null_p95;
    Ok((
        ok,
        format!(
            "mean rho(influence, LOO delta) = {:.3}, null p95 = {:.3} (need >= 0.3 and above null)",
            s.mean_rho, s.null_p95
        ),
    ))
}

fn selection_efficacy() -> Outcome {
    let targets = [
        Category::Slide,
        Category::Bounce,
        Category::Spin,
        Category::FreeFall,
        Category::FloatOsc,
        Category::Roll,
    ];
    let (mut vs_random, mut vs_uniform) = (0, 0);
    for seed in 0..10u64 {
        let cfg = SelectionTrialConfig::new(targets[seed as usize % targets.len()], seed);
        let arms = selection_trial(&cfg).map_err(|e| e.to_string())?;
        vs_random += usize::from(arms.motion < arms.random);
        vs_uniform += usize::from(arms.motion < arms.uniform);
    }
    Ok((
        vs_random >= 8 && vs_uniform >= 6,
        format!("motion beats random in {vs_random}/10, uniform in {vs_uniform}/10 (need 8 and 6)"),
    ))
}

fn fastfood_jl() -> Outcome {
    let d = 1 << 14;
    let state = FastfoodState::new(d, 512, rng::derive(SEED, "jl")).map_err(|e| e.to_string())?;
    let mut r = rng::chacha(rng::derive(SEED, "jl-pairs"));
    let mut within = 0;
    let mut ratio = 0.0;
    for _ in 0..1000 {
        let u = rng::gaussian_vec(&mut r, d);
        let w = rng::gaussian_vec(&mut r, d);
        let a: f64 = r.random_range(-1.0..1.0);
        let b = (1.0 - a * a).sqrt();
        let v: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let (pu, pv) = (state.apply(&u).map_err(|e| e.to_string())?, state.apply(&v).map_err(|e| e.to_string())?);
        if (cosine(&pu, &pv) - cosine(&u, &v)).abs() <= 0.15 {
            within += 1;
        }
        ratio += (l2_norm(&pu) / l2_norm(&u)).powi(2);
    }
    let mean = ratio / 1000.0;
    Ok((
        within >= 990 && (0.9..=1.1).contains(&mean),
        format!("{within}/1000 pairs within 0.15, mean norm ratio {mean:.4} (need >= 990, [0.9, 1.1])"),
    ))
}

fn matrix(rows: &[Vec<f64>], train_ids: Vec<u64>) -> InfluenceMatrix {
    InfluenceMatrix {
        query_ids: (0..rows.len() as u64).collect(),
        train_ids,
        scores: rows.iter().flatten().copied().collect(),
        provenance: Provenance {
            fingerprint: String::new(),
            weighting: Weighting::Motion,
            estimator: Estimator::Single,
            t_hat: Some(751),
            sketch_dim: Some(512),
            seed: None,
            skipped: Vec::new(),
        },
    }
}

fn majority_vote_reductions() -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng::chacha(rng::derive(SEED, "c9"));

    for trial in 0..50 {
        let n = r.random_range(5..40);
        let row: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let k = r.random_range(1..=n);
        let m = matrix(std::slice::from_ref(&row), (0..n as u64).collect());
        let sel = majority_vote(&m, 1.0, k, ThresholdScope::PerQuery).map_err(|e| e.to_string())?;
        let expect: Vec<u64> = top_k(&row, k).into_iter().map(|j| j as u64).collect();
        if sel.selected != expect {
            failures.push(format!("single-query trial {trial}"));
        }
    }

    for trial in 0..50 {
        let q = r.random_range(1..6);
        let n = r.random_range(5..30);
        let rows: Vec<Vec<f64>> = (0..q).map(|_| (0..n).map(|_| r.random::<f64>()).collect()).collect();
        let m = matrix(&rows, (0..n as u64).collect());
        let mut prev: Option<Vec<u32>> = None;
        for tau in [95.0, 90.0, 75.0, 50.0, 25.0, 10.0] {
            let votes: Vec<u32> = majority_vote(&m, tau, 1, ThresholdScope::PerQuery)
                .map_err(|e| e.to_string())?
                .votes
                .iter()
                .map(|(_, v)| *v)
                .collect();
            if let Some(p) = &prev {
                if p.iter().zip(&votes).any(|(a, b)| b < a) {
                    failures.push(format!("monotonicity trial {trial} at tau {tau}"));
                }
            }
            prev = Some(votes);
        }
    }

    let m = matrix(&[vec![0.9, 0.1, 0.5], vec![0.1, 0.9, 0.5]], vec![0, 1, 2]);
    let q2 = majority_vote(&m, 50.0, 1, ThresholdScope::PerQuery).map_err(|e| e.to_string())?;
    if q2.votes != vec![(0, 1), (1, 1), (2, 0)] || q2.selected != vec![0] || q2.cutoffs != vec![0.5, 0.5] {
        failures.push(format!("Q=2 fixture: votes {:?}, selected {:?}", q2.votes, q2.selected));
    }
    let row: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
    let single = majority_vote(&matrix(&[row], (0..10).collect()), 90.0, 1, ThresholdScope::PerQuery)
        .map_err(|e| e.to_string())?;
    if single.votes.iter().map(|(_, v)| v).sum::<u32>() != 1 {
        failures.push("tau=90 over 10 scores".into());
    }

    let ok = failures.is_empty();
    Ok((
        ok,
        if ok {
            "single-query top-K (50 rows), tau monotonicity (50 matrices), Q=2 fixture, tau=90 single vote".into()
        } else {
            failures.join("; ")
        },
    ))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            if rel != "run_manifest.json" && rel != "config.txt" {
                out.insert(rel, fs::read(&path)?);
            }
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let cfg = RunConfig {
            seed: SEED,
            out_dir: tmp.path().join(name),
            ..RunConfig::default()
        };
        run_pipeline(&cfg, false).map_err(|e| e.to_string())?;
        let mut map = BTreeMap::new();
        collect_files(&cfg.out_dir, &cfg.out_dir, &mut map).map_err(|e| e.to_string())?;
        files.push(map);
    }
    let (a, b) = (&files[0], &files[1]);
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    let required = ["sketches/", "attribution/", "selection/", "report.json"];
    let covered = required.iter().all(|p| a.keys().any(|k| k.starts_with(p)));
    Ok((
        differing.is_empty() && covered,
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two run directories", a.len())
        } else {
            format!("differing: {differing:?}")
        },
    ))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let status = match &outcome {
            Ok((true, _)) => "PASS",
            _ => "FAIL",
        };
        let detail = match &outcome {
            Ok((_, d)) => d.clone(),
            Err(e) => format!("error: {e}"),
        };
        println!("{status} criterion {n}: {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        results.push((n, name, outcome));
    };

    run(1, "uniform-mask identity", &uniform_mask_identity);
    run(2, "gradient correctness", &gradient_correctness);
    let bench = Workbench::build(&attribution_fixture(SEED));
    match &bench {
        Ok(b) => {
            run(3, "projection-dimension trend", &|| projection_trend(b));
            run(4, "single-timestep agreement", &|| timestep_agreement(b));
        }
        Err(e) => {
            let msg = e.to_string();
            run(3, "projection-dimension trend", &|| Err(msg.clone()));
            run(4, "single-timestep agreement", &|| Err(msg.clone()));
        }
    }
    run(5, "frame-length bias fix", &frame_length_fix);
    run(6, "counterfactual faithfulness", &counterfactual);
    run(7, "selection efficacy", &selection_efficacy);
    run(8, "fastfood JL property", &fastfood_jl);
    run(9, "majority-vote reductions", &majority_vote_reductions);
    run(10, "determinism", &determinism);

    let failed = results.iter().filter(|(_, _, o)| !matches!(o, Ok((true, _)))).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
