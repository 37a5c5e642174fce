//! Squared Hilbert–Schmidt norm of the pseudo-inverse two ways.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use tensorball::khatri_rao::{khatri_rao, pinv_hs_norm_sq, projection_distance_sum};
use tensorball::rng::stream;

fn main() -> tensorball::Result<()> {
    let mut rng = stream(12);
    let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = khatri_rao(&[g(3, 5), g(4, 5)])?;
    let rows = k.transpose();
    println!("svd route:        {:.12}", pinv_hs_norm_sq(&rows)?);
    println!("projection route: {:.12}", projection_distance_sum(&rows)?);
    Ok(())
}
