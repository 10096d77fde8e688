//! Per-example gradients at the shared noise draw, projected with Fastfood
//! and appended to a sketch store.

use motion_attrib::dataset::Category;
use motion_attrib::experiment::{FixtureConfig, Workbench};
use motion_attrib::gradients::Weighting;
use motion_attrib::sketch::{load_sketches, FastfoodState, SketchStore};

fn main() -> motion_attrib::Result<()> {
    let mut cfg = FixtureConfig::new(&[(Category::Slide, 3), (Category::Bounce, 3), (Category::Static, 2)], 5);
    cfg.train.steps = 60;
    let bench = Workbench::build(&cfg)?;
    println!("t_hat {}, fingerprint {}", bench.pair.t_hat, bench.fingerprint.to_hex());

    let projector = FastfoodState::new(bench.params.len(), 512, 9)?;
    println!("d = {}, padded to {}, sigma {:.3}", bench.params.len(), projector.padded_dim, projector.sigma);
    let dir = tempfile::tempdir().expect("temp dir");
    for weighting in [Weighting::Uniform, Weighting::Motion] {
        let path = dir.path().join(format!("{weighting:?}.bin"));
        let mut store = None;
        for g in bench.gradients(weighting) {
            let g = g?;
            let sketch = projector.project(&g)?;
            let store = match &mut store {
                Some(s) => s,
                None => store.insert(SketchStore::create(&path, 512, sketch.fingerprint, weighting)?),
            };
            store.append(&sketch)?;
            println!("{weighting:?} clip {} F = {} |g| = {:.3e}", g.clip_id, g.frame_count, g.norm);
        }
        let (header, sketches) = load_sketches(&path)?;
        println!("{weighting:?} store: {} sketches of {} dims", header.count, sketches[0].dim());
    }
    Ok(())
}
