use tensorball::distributions::{DistributionSpec, Kind};
use tensorball::montecarlo::{norm_concentration, ExperimentConfig};

fn main() -> tensorball::Result<()> {
    let specs = vec![DistributionSpec::new(Kind::GaussianStd, 64); 2];
    let t: Vec<f64> = (1..=6).map(|i| 0.05 * i as f64).collect();
    let rep = norm_concentration(&specs, &t, &ExperimentConfig::new(6, 50_000, vec![1.0]))?;
    rep.write_csv(std::io::stdout())
}
