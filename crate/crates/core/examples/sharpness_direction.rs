//! Diagonal direction with cube factors against the exact product law.

use tensorball::distributions::{DistributionSpec, Kind};
use tensorball::exact_laws::product_uniform_smallball;
use tensorball::montecarlo::{estimate_direction_smallball, fit_slope, log_grid, ExperimentConfig};
use tensorball::subspaces::diagonal_direction;

fn main() -> tensorball::Result<()> {
    let (n, l) = (8, 3);
    let cfg = ExperimentConfig::new(1, 200_000, log_grid(1e-1, 1e-3, 9));
    let specs = vec![DistributionSpec::new(Kind::UniformCubeSqrt3, n); l];
    let curve = estimate_direction_smallball(&specs, &diagonal_direction(n, l)?, &cfg)?;
    println!(
        "{:>10} {:>10} {:>10} {:>22}",
        "eps", "exact", "p_hat", "99% CI"
    );
    for (i, &e) in cfg.epsilon_grid.iter().enumerate() {
        let exact = product_uniform_smallball(l, 3f64.sqrt(), e)?;
        println!(
            "{e:10.3e} {exact:10.3e} {:10.3e}   [{:.3e}, {:.3e}]",
            curve.p_hat()[i],
            curve.ci_low[i],
            curve.ci_high[i]
        );
    }
    let fit = fit_slope(&curve, (1e-3, 1e-1), (l - 1) as u32)?;
    println!(
        "slope after dividing by log(1/eps)^{}: {:.3} ± {:.3}",
        l - 1,
        fit.slope,
        fit.stderr
    );
    Ok(())
}
