//! Slab-body probabilities of a lopsided law against the cube with the same density bound.

use tensorball::distributions::{DistributionSpec, HistogramDensity};
use tensorball::montecarlo::{dominance_test, ExperimentConfig, SlabBody};
use tensorball::rng::stream;

fn main() -> tensorball::Result<()> {
    let law = DistributionSpec::histogram(
        HistogramDensity::new(vec![-1.0, 0.0, 1.0], vec![0.2, 0.8])?,
        2,
    );
    let cube = DistributionSpec::histogram(HistogramDensity::uniform(0.5 / law.bound()), 2);
    let cfg = ExperimentConfig::new(4, 200_000, vec![1.0]);
    let mut rng = stream(5);
    for k in 0..3 {
        let body = SlabBody::random(vec![2, 2], 3, 10.0, &mut rng)?;
        let rep = dominance_test(&vec![law.clone(); 2], &vec![cube.clone(); 2], &body, &cfg)?;
        println!(
            "body {k}: law {:.4} [{:.4}, {:.4}]  cube {:.4} [{:.4}, {:.4}]  violation: {}",
            rep.p_hat_a,
            rep.ci_a.0,
            rep.ci_a.1,
            rep.p_hat_b,
            rep.ci_b.0,
            rep.ci_b.1,
            rep.violation_candidate
        );
    }
    Ok(())
}
