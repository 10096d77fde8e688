//! Projection-dimension and timestep ablations against full-gradient
//! oracles.

use motion_attrib::experiment::{attribution_fixture, strided, Workbench};
use motion_attrib::gradients::Weighting;
use motion_attrib::oracle::{projection_ablation, timestep_ablation};

fn main() -> motion_attrib::Result<()> {
    let bench = Workbench::build(&attribution_fixture(1))?;
    let queries = strided(bench.len(), 4);

    let proj = projection_ablation(&bench, &queries, &[32, 128, 512], Weighting::Motion, 3)?;
    for (d, rho) in proj.x.iter().zip(&proj.rho) {
        println!("d' = {d:>4}: rho vs full gradients {rho:.3}");
    }
    let ts = timestep_ablation(&bench, &queries, &[251, 501, 751], 10, Weighting::Motion, Some(512), 1)?;
    for (t, rho) in ts.x.iter().zip(&ts.rho) {
        println!("t_hat = {t:>3}: rho vs 10-step average {rho:.3}");
    }
    Ok(())
}
