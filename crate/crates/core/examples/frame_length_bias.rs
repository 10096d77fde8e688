//! Correlation between raw influence and clip length, before and after
//! dividing by the frame count.

use motion_attrib::experiment::{frame_length_fixture, longest_clips, Workbench};
use motion_attrib::oracle::frame_length_bias_study;

fn main() -> motion_attrib::Result<()> {
    let bench = Workbench::build(&frame_length_fixture(1))?;
    let queries = longest_clips(&bench);
    let study = frame_length_bias_study(&bench, &queries)?;
    println!("{} training clips, {} queries", study.frame_counts.len(), queries.len());
    println!("rho(score, F) without 1/F: {:.3}", study.rho_raw);
    println!("rho(score, F) with 1/F:    {:.3}", study.rho_fixed);
    println!("reduction: {:.1}%", 100.0 * study.reduction());
    Ok(())
}
