//! Leave-one-out retraining as ground truth for sketch influence.

use motion_attrib::experiment::{loo_study, LooConfig};

fn main() -> motion_attrib::Result<()> {
    let study = loo_study(&LooConfig::new(1))?;
    for (q, rho) in study.query_ids.iter().zip(&study.rho) {
        println!("query {q}: rho(influence, delta loss) {rho:.3}");
    }
    println!("mean rho {:.3}, random-null p95 {:.3}", study.mean_rho, study.null_p95);
    Ok(())
}
