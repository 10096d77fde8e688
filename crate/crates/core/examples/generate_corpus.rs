//! Generate a small synthetic corpus, persist it and read a clip back.

use motion_attrib::dataset::{build_corpus, Category, CorpusConfig, CorpusManifest};

fn main() -> motion_attrib::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let counts: Vec<_> = Category::ALL.iter().map(|&c| (c, 2)).collect();
    let manifest = build_corpus(&CorpusConfig::with_counts(&counts, 7), dir.path())?;
    println!("{} clips at {}x{}, F = {}", manifest.entries.len(), manifest.height, manifest.width, manifest.canonical_f);

    let reopened = CorpusManifest::open(dir.path())?;
    for entry in reopened.entries.iter().step_by(3) {
        let clip = reopened.load_clip(entry.clip_id)?;
        let mean = clip.frames.iter().map(|v| f64::from(*v)).sum::<f64>() / clip.frames.len() as f64;
        println!(
            "clip {:>2} {:<9} velocity {:?} mean intensity {mean:.3}",
            entry.clip_id,
            entry.spec.category.name(),
            entry.spec.velocity
        );
    }
    Ok(())
}
