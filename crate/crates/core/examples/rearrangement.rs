//! Symmetric decreasing rearrangement of a histogram density.

use tensorball::distributions::{rearrange_histogram, HistogramDensity};

fn main() -> tensorball::Result<()> {
    let h = HistogramDensity::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0], vec![0.1, 0.4, 0.1, 0.4])?;
    let r = rearrange_histogram(&h)?;
    println!("edges   {:?}", r.bin_edges);
    println!("heights {:?}", r.heights);
    for p in [0.5, 2.0, 3.0] {
        println!(
            "L^{p} norm^p: {:.6} -> {:.6}",
            h.lp_norm_pow(p),
            r.lp_norm_pow(p)
        );
    }
    Ok(())
}
