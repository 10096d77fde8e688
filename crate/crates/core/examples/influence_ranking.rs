//! Rank training clips by influence on a query, with and without motion
//! weighting.

use motion_attrib::attribution::influence_matrix;
use motion_attrib::dataset::Category;
use motion_attrib::experiment::{FixtureConfig, Workbench};
use motion_attrib::gradients::Weighting;
use motion_attrib::selection::top_k;
use motion_attrib::sketch::FastfoodState;

fn main() -> motion_attrib::Result<()> {
    let counts = [
        (Category::Static, 4),
        (Category::Slide, 4),
        (Category::Spin, 4),
        (Category::FreeFall, 4),
    ];
    let mut cfg = FixtureConfig::new(&counts, 2);
    cfg.train.steps = 80;
    let bench = Workbench::build(&cfg)?;
    let projector = FastfoodState::new(bench.params.len(), 512, 4)?;
    let query = 5;
    let name = |i: usize| Category::from_label(bench.clips[i].category_label).map_or("?", |c| c.name());
    println!("query clip {} ({})", bench.clips[query].clip_id, name(query));

    for weighting in [Weighting::Uniform, Weighting::Motion] {
        let sketches = bench
            .gradients(weighting)
            .into_iter()
            .map(|g| projector.project(&g?))
            .collect::<motion_attrib::Result<Vec<_>>>()?;
        let m = influence_matrix(&sketches, &sketches[query..=query])?;
        let ranked: Vec<String> = top_k(m.row(0), 6)
            .into_iter()
            .filter(|&i| i != query)
            .map(|i| format!("{}:{} {:.3}", bench.clips[i].clip_id, name(i), m.get(0, i)))
            .collect();
        println!("{weighting:?}: {}", ranked.join(", "));
    }
    Ok(())
}
