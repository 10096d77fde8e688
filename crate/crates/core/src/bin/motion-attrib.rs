use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use motion_attrib::attribution::InfluenceMatrix;
use motion_attrib::config::RunConfig;
use motion_attrib::dataset::CorpusManifest;
use motion_attrib::experiment::{
    attribution_fixture, frame_length_fixture, longest_clips, loo_study, strided, LooConfig, Workbench,
};
use motion_attrib::genmodel::{ModelConfig, Objective, TrainConfig};
use motion_attrib::gradients::Weighting;
use motion_attrib::motion::{MotionConfig, MotionWeights};
use motion_attrib::oracle::{frame_length_bias_study, projection_ablation, timestep_ablation};
use motion_attrib::selection::{SelectionReport, ThresholdScope};
use motion_attrib::{pipeline, report, rng, Error, Result};

#[derive(Parser)]
#[command(name = "motion-attrib", version, about = "Motion-aware data attribution for a toy video model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Projection,
    Timestep,
    Framelen,
    Loo,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the pool and query corpora described by a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute motion masks for every clip of a corpus.
    EstimateFlow {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        block: usize,
        #[arg(long, default_value_t = 4)]
        radius: usize,
    },
    /// Train a model from scratch on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        diffusion: bool,
    },
    /// Per-example gradients projected into a sketch store.
    Grads {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        t_hat: Option<u32>,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score query sketches against training sketches.
    Attribute {
        #[arg(long)]
        train_store: PathBuf,
        #[arg(long)]
        query_store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Majority-vote selection from an influence matrix.
    Select {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 90.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.10)]
        k_frac: f64,
        #[arg(long)]
        global_tau: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on a selected subset.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query loss of a checkpoint, motion-weighted when masks are given.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Oracle ablations.
    Ablate {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlap tables and optional mask overlays.
    Report {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage under the config's output directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let pool = pipeline::gen_data(&cfg.pool_config(), &out.join("pool"))?;
            let queries = pipeline::gen_data(&cfg.query_config(), &out.join("queries"))?;
            println!("wrote {} pool clips and {} queries under {}", pool.entries.len(), queries.entries.len(), out.display());
        }
        Command::EstimateFlow { corpus, out, block, radius } => {
            let manifest = CorpusManifest::open(&corpus)?;
            let motion = MotionConfig {
                block,
                radius,
                ..Default::default()
            };
            let n = pipeline::estimate_flow(&manifest, &motion, &out)?;
            println!("wrote {n} masks to {}", out.display());
        }
        Command::Train { corpus, out, steps, lr, seed, diffusion } => {
            let manifest = CorpusManifest::open(&corpus)?;
            let mut model = ModelConfig::default();
            if diffusion {
                model.objective = Objective::Diffusion;
            }
            let train = TrainConfig {
                steps,
                lr,
                seed: rng::derive(seed, "base-train"),
                ..TrainConfig::default()
            };
            let hash = pipeline::train_model(&model, &manifest, &train, rng::derive(seed, "init"), &out)?;
            println!("checkpoint {} ({hash})", out.display());
        }
        Command::Grads { ckpt, corpus, masks, seed, t_hat, dim, out } => {
            let manifest = CorpusManifest::open(&corpus)?;
            let s = pipeline::compute_sketches(&ckpt, &manifest, masks.as_deref(), seed, t_hat, dim, &out)?;
            println!("wrote {} sketches, skipped {} ({})", s.written, s.skipped.len(), s.fingerprint);
        }
        Command::Attribute { train_store, query_store, out } => {
            let m = pipeline::attribute(&train_store, &query_store, &out)?;
            println!("{} x {} influence matrix in {}", m.rows(), m.cols(), out.display());
        }
        Command::Select { matrix, tau, k_frac, global_tau, out } => {
            let m = InfluenceMatrix::load_csv(&matrix)?;
            let scope = if global_tau { ThresholdScope::Global } else { ThresholdScope::PerQuery };
            let r = pipeline::select(&m, tau, k_frac, scope)?;
            r.save(&out)?;
            println!("selected {:?}", r.selected);
        }
        Command::Finetune { ckpt, corpus, selection, steps, lr, seed, out } => {
            let manifest = CorpusManifest::open(&corpus)?;
            let sel = SelectionReport::load(&selection)?;
            let cfg = TrainConfig {
                steps,
                lr,
                seed: rng::derive(seed, "finetune"),
                ..TrainConfig::default()
            };
            let hash = pipeline::finetune(&ckpt, &manifest, &sel, &cfg, &out)?;
            println!("checkpoint {} ({hash})", out.display());
        }
        Command::Evaluate { ckpt, queries, masks, draws, seed } => {
            let manifest = CorpusManifest::open(&queries)?;
            let loss = pipeline::evaluate(&ckpt, &manifest, masks.as_deref(), draws, seed)?;
            println!("{loss:.8}");
        }
        Command::Ablate { which, config, out } => {
            let cfg = load_config(config.as_deref())?;
            match which {
                Which::Projection => {
                    let bench = Workbench::build(&attribution_fixture(cfg.seed))?;
                    let r = projection_ablation(&bench, &strided(bench.len(), 4), &[32, 128, 512], Weighting::Motion, rng::derive(cfg.seed, "projection"))?;
                    write_json(&out, &r)?;
                    println!("rho {:?}", r.rho);
                }
                Which::Timestep => {
                    let bench = Workbench::build(&attribution_fixture(cfg.seed))?;
                    let r = timestep_ablation(&bench, &strided(bench.len(), 4), &[251, 501, cfg.t_hat], 10, Weighting::Motion, Some(cfg.sketch_dim), cfg.seed)?;
                    write_json(&out, &r)?;
                    println!("rho {:?}", r.rho);
                }
                Which::Framelen => {
                    let bench = Workbench::build(&frame_length_fixture(cfg.seed))?;
                    let s = frame_length_bias_study(&bench, &longest_clips(&bench))?;
                    write_json(&out, &s.to_ablation()?)?;
                    println!("rho without fix {:.3}, with fix {:.3}", s.rho_raw, s.rho_fixed);
                }
                Which::Loo => {
                    let s = loo_study(&LooConfig::new(cfg.seed))?;
                    write_json(&out, &s)?;
                    println!("mean rho {:.3}, null p95 {:.3}", s.mean_rho, s.null_p95);
                }
            }
        }
        Command::Report { matrix, selection, corpus, out } => {
            let m = InfluenceMatrix::load_csv(&matrix)?;
            let sel = SelectionReport::load(&selection)?;
            let mut written = report::write_report(&m, &sel, &[], &out)?;
            if let Some(dir) = corpus {
                let manifest = CorpusManifest::open(&dir)?;
                let motion = MotionConfig::default();
                for id in &sel.selected {
                    let clip = manifest.load_clip(*id)?;
                    let clip = clip.standardized(manifest.canonical_f);
                    let w = MotionWeights::for_clip(&clip, &motion)?;
                    let p = out.join(format!("mask_{id}.pgm"));
                    fs::write(&p, report::mask_overlay(&clip, &w, 0)?).map_err(|e| Error::io(&p, e))?;
                    written.push(p);
                }
            }
            println!("wrote {} files", written.len());
        }
        Command::Pipeline { config, force } => {
            let cfg = RunConfig::load(&config)?;
            let r = pipeline::run_pipeline(&cfg, force)?;
            println!("{}", serde_json::to_string_pretty(&r.query_motion_loss)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
