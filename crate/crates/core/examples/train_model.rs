//! Train the toy denoiser with flow matching and save a checkpoint.

use motion_attrib::dataset::{Category, Corpus, CorpusConfig};
use motion_attrib::experiment::encode_examples;
use motion_attrib::genmodel::{load_checkpoint, save_checkpoint, train, Model, ModelConfig, ModelParams, TrainConfig};

fn main() -> motion_attrib::Result<()> {
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, 3)).collect();
    let clips = Corpus::generate(&CorpusConfig::with_counts(&counts, 11))?.standardized();
    let model = Model::new(ModelConfig::default())?;
    println!("{} parameters, objective {:?}", model.config.arch.param_count(), model.config.objective);

    let data = encode_examples(&model, &clips)?;
    let init = ModelParams::init(model.config.arch, 1);
    let cfg = TrainConfig {
        steps: 100,
        ..TrainConfig::default()
    };
    let out = train(&model, &init, &data, &cfg)?;
    for (step, loss) in out.step_losses.iter().enumerate().step_by(20) {
        println!("step {step:>3} loss {loss:.4}");
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    let hash = save_checkpoint(&path, &model.config, &out.params)?;
    let (_, restored) = load_checkpoint(&path)?;
    println!("checkpoint {hash} with {} values", restored.len());
    Ok(())
}
