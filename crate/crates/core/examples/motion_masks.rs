//! Block-matching flow and the resulting pixel and latent motion weights.

use motion_attrib::dataset::{Category, Corpus, CorpusConfig};
use motion_attrib::motion::{estimate_flow, motion_magnitude, MotionConfig, MotionWeights};

fn main() -> motion_attrib::Result<()> {
    let counts = [(Category::Static, 1), (Category::Slide, 1), (Category::Spin, 1), (Category::FreeFall, 1)];
    let corpus = Corpus::generate(&CorpusConfig::with_counts(&counts, 3))?;
    let cfg = MotionConfig::default();
    for clip in &corpus.clips {
        let field = estimate_flow(clip, cfg.radius, cfg.block)?;
        let mags = motion_magnitude(&field);
        let peak = mags.iter().copied().fold(0.0, f64::max);
        let w = MotionWeights::for_clip(clip, &cfg)?;
        let lw = &w.latent_weights;
        let max = lw.iter().copied().fold(0.0f32, f32::max);
        let mean = lw.iter().sum::<f32>() / lw.len() as f32;
        println!(
            "{:<9} peak flow {peak:.2} px, fallback {}, latent weight max {max:.3} mean {mean:.3}",
            Category::from_label(clip.category_label).map_or("?", |c| c.name()),
            w.uniform_fallback
        );
    }
    Ok(())
}
