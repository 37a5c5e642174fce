//! Lower tail of the smallest singular value of a smoothed Khatri–Rao matrix.

use tensorball::exact_laws::BoundConfig;
use tensorball::khatri_rao::{smin_tail_experiment, SmoothedEnsemble};
use tensorball::montecarlo::{decade_with_min_hits, fit_slope, log_grid, ExperimentConfig};
use tensorball::rng::stream;

fn main() -> tensorball::Result<()> {
    let e = SmoothedEnsemble::random_base(8, 6, 2, 1.0, 0.5, &mut stream(7));
    let cfg = ExperimentConfig::new(8, 5_000, log_grid(10.0, 1e-3, 21));
    let rep = smin_tail_experiment(&e, &cfg, &BoundConfig::default())?;
    println!("threshold scale {:.4}", rep.threshold_scale);
    for (i, x) in cfg.epsilon_grid.iter().enumerate() {
        println!(
            "{x:9.3e} {:6} {:9.3e}",
            rep.curve.hit_counts[i], rep.bound[i]
        );
    }
    let decade = decade_with_min_hits(&rep.curve, 30)?;
    let fit = fit_slope(&rep.curve, (decade.0, decade.1 * (1.0 + 1e-12)), 0)?;
    println!(
        "slope over [{:.2e}, {:.2e}]: {:.2}",
        decade.0, decade.1, fit.slope
    );
    Ok(())
}
