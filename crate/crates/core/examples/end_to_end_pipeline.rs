//! Every stage from data generation to the fine-tuning comparison, then a
//! cached rerun.

use std::time::Instant;

use motion_attrib::config::RunConfig;
use motion_attrib::pipeline::run_pipeline;

fn main() -> motion_attrib::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = RunConfig::parse("seed = 3\nquery.category = bounce\n")?;
    cfg.out_dir = dir.path().to_path_buf();

    let start = Instant::now();
    let report = run_pipeline(&cfg, false)?;
    println!("first run {:.1}s", start.elapsed().as_secs_f64());
    println!("pool {} clips, K = {}, queries {:?}", report.pool_size, report.k, report.query_ids);
    let l = &report.query_motion_loss;
    println!("query motion loss: base {:.5} random {:.5} uniform {:.5} motion {:.5}", l.base, l.random, l.uniform, l.motion);
    for (arm, ids) in &report.selected {
        println!("{arm:>8}: {ids:?}");
    }

    let start = Instant::now();
    let again = run_pipeline(&cfg, false)?;
    assert_eq!(again, report);
    println!("cached rerun {:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}
