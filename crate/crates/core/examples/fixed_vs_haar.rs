//! A coordinate-line subspace against a Haar-random subspace of the same dimension.

use tensorball::distributions::{DistributionSpec, Kind};
use tensorball::montecarlo::{estimate_smallball, fit_slope, log_grid, ExperimentConfig};
use tensorball::rng::stream;
use tensorball::subspaces::{coordinate_line_subspace, haar_subspace};

fn main() -> tensorball::Result<()> {
    let (n, l, m) = (4, 2, 4);
    let specs = vec![DistributionSpec::new(Kind::UniformCubeSqrt3, n); l];
    let cfg = ExperimentConfig::new(2, 200_000, log_grid(0.3, 0.05, 8));
    let line = estimate_smallball(&specs, &coordinate_line_subspace(n, l, m)?, &cfg)?;
    let haar = estimate_smallball(&specs, &haar_subspace(&[n; 2], m, &mut stream(3))?, &cfg)?;
    println!("{:>8} {:>12} {:>12}", "eps", "line", "haar");
    for (i, e) in cfg.epsilon_grid.iter().enumerate() {
        println!(
            "{e:8.3} {:12.4e} {:12.4e}",
            line.p_hat()[i],
            haar.p_hat()[i]
        );
    }
    println!(
        "slopes: line {:.2}, haar {:.2}",
        fit_slope(&line, (0.05, 0.3), 0)?.slope,
        fit_slope(&haar, (0.05, 0.3), 0)?.slope
    );
    Ok(())
}
