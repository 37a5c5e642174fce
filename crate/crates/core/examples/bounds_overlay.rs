//! Every bound evaluator on one grid, written as CSV to stdout.

use tensorball::cli::{bound_row, BoundsArgs, BOUND_COLUMNS};
use tensorball::exact_laws::BoundConfig;
use tensorball::montecarlo::log_grid;

fn main() {
    let args = BoundsArgs {
        l: 3,
        m: 8,
        n: 4,
        r: 4,
        rho: 1.0,
        eps_grid: String::new(),
        config: None,
    };
    let cfg = BoundConfig::default();
    println!("epsilon,{}", BOUND_COLUMNS.join(","));
    for e in log_grid(1e-1, 1e-4, 7) {
        let row: Vec<String> = bound_row(&args, &cfg, e)
            .iter()
            .map(|x| format!("{x:.4e}"))
            .collect();
        println!("{e:.4e},{}", row.join(","));
    }
}
