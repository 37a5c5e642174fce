use tensorball::rng::stream;
use tensorball::subspaces::haar_moments;

fn main() -> tensorball::Result<()> {
    let m = haar_moments(16, 50_000, &mut stream(11))?;
    println!(
        "E[U11^2]   = {:.5} ± {:.5} (1/16 = 0.0625)",
        m.second_moment, m.second_moment_stderr
    );
    println!(
        "E[U11 U21] = {:.5} ± {:.5}",
        m.cross_moment, m.cross_moment_stderr
    );
    Ok(())
}
