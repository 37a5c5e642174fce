//! Order-4 smoothed tensor recovered through folding, at a few noise levels.

use tensorball::decomposition::{decompose_smoothed, SimdiagOptions};
use tensorball::khatri_rao::SmoothedEnsemble;
use tensorball::rng::stream;

fn main() -> tensorball::Result<()> {
    let e = SmoothedEnsemble::random_base(3, 4, 4, 1.0, 1.0, &mut stream(9));
    for noise in [0.0, 1e-10, 1e-8, 1e-6] {
        let rec = decompose_smoothed(&e, noise, &mut stream(10), &SimdiagOptions::default())?;
        let s = rec.report.grouped_smin.unwrap_or_default();
        println!(
            "noise {noise:7.1e}: max factor error {:.2e}, grouped s_min {:.3} {:.3} {:.3}",
            rec.report.max_factor_error, s[0], s[1], s[2]
        );
    }
    Ok(())
}
