//! Command-line front end: one subcommand per experiment, CSV/JSON artifacts
//! and a replayable run manifest.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomposition::{decompose_smoothed, Grouping, Rank1Terms, SimdiagOptions};
use crate::distributions::{DistributionSpec, HistogramDensity, Kind};
use crate::error::{validation, Error, Result};
use crate::exact_laws::{
    bound_carbery_wright, bound_concentration_subgaussian, bound_fixed_subspace,
    bound_generic_subspace, bound_nondeterministic, bound_single_direction, bound_smin_tail,
    product_uniform_cdf, product_uniform_smallball, sharpness_lower_bound, BoundConfig,
    ConcentrationVariant,
};
use crate::khatri_rao::{
    pinv_hs_norm_sq, projection_distance_sum, smin_tail_experiment, SmoothedEnsemble,
};
use crate::montecarlo::stats::{dkw_band, ks_statistic};
use crate::montecarlo::{
    dominance_test, estimate_direction_smallball, estimate_smallball, log_grid, norm_concentration,
    ExperimentConfig, SlabBody,
};
use crate::rng::{env_seed, stream};
use crate::subspaces::{
    coordinate_line_subspace, diag_avg_direction, diagonal_direction, haar_moments, haar_subspace,
    SubspaceBasis,
};
use crate::tensor::FlatTensor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Offsets that keep auxiliary random draws (subspaces, bodies) off the trial streams.
const AUX_SEED: u64 = 0x5EED_0FA1;

#[derive(Debug, Parser)]
#[command(
    name = "tensorball",
    version,
    about = "Small-ball experiments for random simple tensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "subcommand")]
pub enum Command {
    /// P(‖Π_F ⊗X‖ ≤ ε√m) for a subspace F.
    Smallball(SmallballArgs),
    /// P(|⟨⊗X, f⟩| ≤ ε) for a single direction f.
    Direction(DirectionArgs),
    /// Every bound evaluator on a shared ε grid.
    Bounds(BoundsArgs),
    /// Slab-body dominance checks between two laws.
    Dominance(DominanceArgs),
    /// Tails of Π‖X_j‖ around its typical size.
    Norms(NormsArgs),
    /// Lower tail of s_min for smoothed Khatri–Rao matrices.
    Smin(SminArgs),
    /// Smoothed decomposition with ground-truth matching.
    Decompose(DecomposeArgs),
    /// Exact-identity checks.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Smallball(_) => "smallball",
            Command::Direction(_) => "direction",
            Command::Bounds(_) => "bounds",
            Command::Dominance(_) => "dominance",
            Command::Norms(_) => "norms",
            Command::Smin(_) => "smin",
            Command::Decompose(_) => "decompose",
            Command::Selftest(_) => "selftest",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Smallball(a) => Some(&mut a.common),
            Command::Direction(a) => Some(&mut a.common),
            Command::Dominance(a) => Some(&mut a.common),
            Command::Norms(a) => Some(&mut a.common),
            Command::Smin(a) => Some(&mut a.common),
            Command::Decompose(a) => Some(&mut a.common),
            Command::Selftest(a) => Some(&mut a.common),
            Command::Bounds(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Falls back to TENSORBALL_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of trials; accepts forms like 1e6.
    #[arg(long, default_value = "1e5", value_parser = parse_count)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long, default_value_t = 10_000)]
    pub batch_size: u64,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn experiment(&self, grid: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed(),
            trials: self.trials,
            epsilon_grid: grid,
            shift_vectors: None,
            confidence: self.confidence,
            batch_size: self.batch_size,
            batch_offset: 0,
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SmallballArgs {
    /// haar, line or file:<path>
    #[arg(long, default_value = "haar")]
    pub subspace: String,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Distribution kind or hist:<path>
    #[arg(long, default_value = "cube")]
    pub dist: String,
    /// start:end:count, log-spaced
    #[arg(long, default_value = "1e-3:1e-1:20")]
    pub eps_grid: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DirectionArgs {
    /// diagonal, diag-avg or file:<path>
    #[arg(long, default_value = "diagonal")]
    pub direction: String,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub l: usize,
    #[arg(long, default_value = "cube")]
    pub dist: String,
    #[arg(long, default_value = "1e-3:1e-1:20")]
    pub eps_grid: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Rank used by the s_min tail column.
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value = "1e-3:1e-1:20")]
    pub eps_grid: String,
    /// JSON file with bound constants.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DominanceArgs {
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 5)]
    pub bodies: usize,
    /// Slabs per body.
    #[arg(long, default_value_t = 3)]
    pub directions: usize,
    #[arg(long, default_value_t = 15.0)]
    pub scale: f64,
    #[arg(long, default_value = "gaussian")]
    pub dist_a: String,
    /// Distribution or matched-cube (uniform with the same density bound as A).
    #[arg(long, default_value = "matched-cube")]
    pub dist_b: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NormsArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value = "gaussian")]
    pub dist: String,
    /// start:end:count, linearly spaced
    #[arg(long, default_value = "0.05:0.5:10")]
    pub t_grid: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SminArgs {
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 8)]
    pub r: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Base vector radius; 0 gives centered Gaussian factors.
    #[arg(long, default_value_t = 0.0)]
    pub norm_cap: f64,
    #[arg(long, default_value = "1e-3:1:16")]
    pub eps_grid: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DecomposeArgs {
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub l: usize,
    #[arg(long, default_value_t = 4)]
    pub r: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub norm_cap: f64,
    /// Entry noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SelftestArgs {
    /// Smaller sample sizes.
    #[arg(long)]
    pub quick: bool,
    #[command(flatten)]
    pub common: Common,
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(v >= 1.0) || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("`{s}` is not a positive integer count"));
    }
    Ok(v as u64)
}

fn parse_triplet(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return validation(format!("grid `{s}` must look like start:end:count"));
    }
    let num = |p: &str| {
        f64::from_str(p)
            .map_err(|_| Error::Validation(format!("`{p}` in grid `{s}` is not a number")))
    };
    let count = usize::from_str(parts[2])
        .map_err(|_| Error::Validation(format!("grid count `{}` is not an integer", parts[2])))?;
    Ok((num(parts[0])?, num(parts[1])?, count))
}

/// `start:end:count`, log-spaced, returned strictly decreasing.
pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>> {
    let (a, b, count) = parse_triplet(s)?;
    if !(a > 0.0 && b > 0.0) || count == 0 || (count > 1 && a == b) {
        return validation(format!(
            "ε grid `{s}` needs positive distinct endpoints and count ≥ 1"
        ));
    }
    Ok(log_grid(a.max(b), a.min(b), count))
}

/// `start:end:count`, linearly spaced, increasing.
pub fn parse_linear_grid(s: &str) -> Result<Vec<f64>> {
    let (a, b, count) = parse_triplet(s)?;
    if count < 1 || !(b >= a) {
        return validation(format!("grid `{s}` must be increasing with count ≥ 1"));
    }
    if count == 1 {
        return Ok(vec![a]);
    }
    Ok((0..count)
        .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
        .collect())
}

/// A kind name or `hist:<path>` with a histogram JSON file.
pub fn parse_dist(s: &str, dim: usize) -> Result<DistributionSpec> {
    let spec = if let Some(path) = s.strip_prefix("hist:") {
        let h: HistogramDensity = serde_json::from_reader(File::open(path)?)?;
        DistributionSpec::histogram(h, dim)
    } else {
        DistributionSpec::new(Kind::from_str(s)?, dim)
    };
    spec.validate()?;
    Ok(spec)
}

fn matched_cube(spec: &DistributionSpec) -> Result<DistributionSpec> {
    let m = spec.bound();
    if !(m.is_finite() && m > 0.0) {
        return validation("matched cube needs a bounded density");
    }
    Ok(DistributionSpec::histogram(
        HistogramDensity::uniform(0.5 / m),
        spec.dim,
    ))
}

fn read_basis(path: &str) -> Result<SubspaceBasis> {
    SubspaceBasis::read_binary(std::io::BufReader::new(File::open(path)?))
}

fn read_direction(path: &str) -> Result<FlatTensor> {
    FlatTensor::read_binary(std::io::BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Command,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub run_hash: String,
    pub outputs: Vec<OutputFile>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

/// Hash of the resolved configuration and tool version.
pub fn run_hash(cmd: &Command) -> Result<String> {
    let text = serde_json::to_string(&(cmd, env!("CARGO_PKG_VERSION")))?;
    Ok(hex(&Sha256::digest(text.as_bytes())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Outputs {
    /// CSV writer whose first line carries the run hash.
    fn csv(&mut self, name: &str) -> Result<BufWriter<File>> {
        let mut w = self.create(name)?;
        writeln!(w, "# run_hash={}", self.hash)?;
        Ok(w)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Parses `args` (program name first), runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cmd = match (cli.command, cli.replay) {
        (Some(_), Some(_)) => {
            eprintln!(
                "error: --replay takes the configuration from the manifest; drop the subcommand"
            );
            return 1;
        }
        (None, None) => {
            eprintln!("error: a subcommand or --replay <manifest> is required");
            return 1;
        }
        (Some(c), None) => c,
        (None, Some(path)) => match RunManifest::read(&path) {
            Ok(m) => m.config,
            Err(e) => {
                eprintln!("error: cannot read manifest {}: {e}", path.display());
                return e.exit_code();
            }
        },
    };
    match execute(cmd, &cli.out) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    SelftestFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Done => 0,
            Outcome::SelftestFailed => 4,
        }
    }
}

/// Runs a resolved command, writing artifacts and `manifest.json` into `out`.
pub fn execute(mut cmd: Command, out: &Path) -> Result<Outcome> {
    if let Some(c) = cmd.common_mut() {
        if c.seed.is_none() {
            c.seed = Some(env_seed().unwrap_or(0));
        }
    }
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let hash = run_hash(&cmd)?;
    let mut outs = Outputs {
        dir: out.to_path_buf(),
        hash: hash.clone(),
        files: vec![],
    };
    let outcome = match &cmd {
        Command::Smallball(a) => smallball(a, &mut outs)?,
        Command::Direction(a) => direction(a, &mut outs)?,
        Command::Bounds(a) => bounds(a, &mut outs)?,
        Command::Dominance(a) => dominance(a, &mut outs)?,
        Command::Norms(a) => norms(a, &mut outs)?,
        Command::Smin(a) => smin(a, &mut outs)?,
        Command::Decompose(a) => decompose(a, &mut outs)?,
        Command::Selftest(a) => selftest_cmd(a, &mut outs)?,
    };
    let outputs = outs
        .files
        .iter()
        .map(|f| {
            Ok(OutputFile {
                path: f.clone(),
                sha256: hex(&Sha256::digest(fs::read(out.join(f))?)),
            })
        })
        .collect::<Result<_>>()?;
    let seed = match &mut cmd {
        Command::Bounds(_) => None,
        other => other.common_mut().and_then(|c| c.seed),
    };
    let manifest = RunManifest {
        subcommand: cmd.name().to_string(),
        config: cmd,
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        run_hash: hash,
        outputs,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    let mut w = BufWriter::new(File::create(out.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(outcome)
}

fn smallball(a: &SmallballArgs, outs: &mut Outputs) -> Result<Outcome> {
    let shape = vec![a.n; a.l];
    let basis = match a.subspace.as_str() {
        "haar" => haar_subspace(&shape, a.m, &mut stream(a.common.seed() ^ AUX_SEED))?,
        "line" => coordinate_line_subspace(a.n, a.l, a.m)?,
        other => match other.strip_prefix("file:") {
            Some(p) => read_basis(p)?,
            None => return Err(Error::Config(format!("unknown subspace `{other}`"))),
        },
    };
    if basis.shape() != shape.as_slice() {
        return validation(format!(
            "subspace shape {:?} does not match n = {}, ℓ = {}",
            basis.shape(),
            a.n,
            a.l
        ));
    }
    let specs = vec![parse_dist(&a.dist, a.n)?; a.l];
    let cfg = a.common.experiment(parse_eps_grid(&a.eps_grid)?);
    let curve = estimate_smallball(&specs, &basis, &cfg)?;
    let mut w = outs.csv("smallball.csv")?;
    curve.write_csv(&mut w, &[])?;
    w.flush()?;
    Ok(Outcome::Done)
}

fn direction(a: &DirectionArgs, outs: &mut Outputs) -> Result<Outcome> {
    let f = match a.direction.as_str() {
        "diagonal" => diagonal_direction(a.n, a.l)?,
        "diag-avg" => diag_avg_direction(a.n, a.l)?,
        other => match other.strip_prefix("file:") {
            Some(p) => read_direction(p)?,
            None => return Err(Error::Config(format!("unknown direction `{other}`"))),
        },
    };
    let n = f.shape.first().copied().unwrap_or(0);
    if f.shape.iter().any(|&d| d != n) && a.direction.starts_with("file:") {
        return validation("direction files must have equal mode sizes");
    }
    let specs = vec![parse_dist(&a.dist, n)?; f.shape.len()];
    let cfg = a.common.experiment(parse_eps_grid(&a.eps_grid)?);
    let curve = estimate_direction_smallball(&specs, &f, &cfg)?;
    // the diagonal contraction is a product of first coordinates: exact law
    let half = match specs[0].kind {
        Kind::UniformCubeSqrt3 => Some(3f64.sqrt()),
        Kind::UniformCubeUnit => Some(1.0),
        _ => None,
    };
    let exact: Option<Vec<f64>> = match (a.direction.as_str(), half) {
        ("diagonal", Some(s)) => Some(
            cfg.epsilon_grid
                .iter()
                .map(|&e| product_uniform_smallball(a.l, s, e))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let mut w = outs.csv("direction.csv")?;
    match &exact {
        Some(x) => curve.write_csv(&mut w, &[("exact", x)])?,
        None => curve.write_csv(&mut w, &[])?,
    }
    w.flush()?;
    Ok(Outcome::Done)
}

/// Column names of the `bounds` CSV after `epsilon`.
pub const BOUND_COLUMNS: [&str; 10] = [
    "fixed_subspace",
    "single_direction",
    "generic_subspace",
    "carbery_wright",
    "nondeterministic",
    "concentration_vershynin",
    "concentration_bamberger",
    "sharpness",
    "smin_tail",
    "product_uniform",
];

/// All bound evaluators at one ε; `NaN` where a bound is outside its range.
pub fn bound_row(a: &BoundsArgs, cfg: &BoundConfig, eps: f64) -> [f64; 10] {
    let v = |r: Result<f64>| r.unwrap_or(f64::NAN);
    [
        v(bound_fixed_subspace(eps, a.m, a.l, cfg)),
        v(bound_single_direction(eps, a.l, cfg)),
        v(bound_generic_subspace(eps, a.m, a.n, a.l, cfg)),
        v(bound_carbery_wright(eps, a.l, cfg)),
        v(bound_nondeterministic(eps, a.n, a.l, a.m, cfg.c_small).map(|b| b.value)),
        v(bound_concentration_subgaussian(
            eps,
            a.m,
            a.n,
            a.l,
            cfg,
            ConcentrationVariant::Vershynin,
        )),
        v(bound_concentration_subgaussian(
            eps,
            a.m,
            a.n,
            a.l,
            cfg,
            ConcentrationVariant::Bamberger,
        )),
        v(sharpness_lower_bound(eps, a.l, cfg)),
        v(bound_smin_tail(eps, a.r, a.n, a.l, a.rho, cfg).map(|b| b.bound)),
        v(product_uniform_smallball(a.l, 1.0, eps)),
    ]
}

fn bounds(a: &BoundsArgs, outs: &mut Outputs) -> Result<Outcome> {
    let cfg: BoundConfig = match &a.config {
        Some(p) => serde_json::from_reader(File::open(p)?)?,
        None => BoundConfig::default(),
    };
    cfg.validate()?;
    if a.l == 0 || a.n == 0 {
        return validation("ℓ and n must be positive");
    }
    let grid = parse_eps_grid(&a.eps_grid)?;
    let mut w = outs.csv("bounds.csv")?;
    writeln!(w, "epsilon,{}", BOUND_COLUMNS.join(","))?;
    for &e in &grid {
        let row = bound_row(a, &cfg, e);
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{e:e},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(Outcome::Done)
}

fn dominance(a: &DominanceArgs, outs: &mut Outputs) -> Result<Outcome> {
    let spec_a = parse_dist(&a.dist_a, a.n)?;
    let spec_b = if a.dist_b == "matched-cube" {
        matched_cube(&spec_a)?
    } else {
        parse_dist(&a.dist_b, a.n)?
    };
    let cfg = a.common.experiment(vec![1.0]);
    let mut rng = stream(a.common.seed() ^ AUX_SEED);
    let mut w = outs.csv("dominance.csv")?;
    writeln!(
        w,
        "body,hits_a,hits_b,trials,p_hat_a,p_hat_b,ci_a_low,ci_a_high,ci_b_low,ci_b_high,ci_gap,violation_candidate"
    )?;
    for k in 0..a.bodies {
        let body = SlabBody::random(vec![a.n; a.l], a.directions, a.scale, &mut rng)?;
        let rep = dominance_test(
            &vec![spec_a.clone(); a.l],
            &vec![spec_b.clone(); a.l],
            &body,
            &cfg,
        )?;
        writeln!(
            w,
            "{k},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            rep.hits_a,
            rep.hits_b,
            rep.trials,
            rep.p_hat_a,
            rep.p_hat_b,
            rep.ci_a.0,
            rep.ci_a.1,
            rep.ci_b.0,
            rep.ci_b.1,
            rep.ci_gap,
            rep.violation_candidate
        )?;
    }
    w.flush()?;
    Ok(Outcome::Done)
}

fn norms(a: &NormsArgs, outs: &mut Outputs) -> Result<Outcome> {
    let specs = vec![parse_dist(&a.dist, a.n)?; a.l];
    let t = parse_linear_grid(&a.t_grid)?;
    let cfg = a.common.experiment(vec![1.0]);
    let rep = norm_concentration(&specs, &t, &cfg)?;
    let mut w = outs.csv("norms.csv")?;
    rep.write_csv(&mut w)?;
    w.flush()?;
    Ok(Outcome::Done)
}

fn ensemble(n: usize, l: usize, r: usize, rho: f64, norm_cap: f64, seed: u64) -> SmoothedEnsemble {
    if norm_cap > 0.0 {
        SmoothedEnsemble::random_base(r, n, l, rho, norm_cap, &mut stream(seed ^ AUX_SEED))
    } else {
        SmoothedEnsemble::centered(r, n, l, rho)
    }
}

fn smin(a: &SminArgs, outs: &mut Outputs) -> Result<Outcome> {
    let e = ensemble(a.n, a.l, a.r, a.rho, a.norm_cap, a.common.seed());
    let cfg = a.common.experiment(parse_eps_grid(&a.eps_grid)?);
    let rep = smin_tail_experiment(&e, &cfg, &BoundConfig::default())?;
    let threshold: Vec<f64> = cfg
        .epsilon_grid
        .iter()
        .map(|x| x * rep.threshold_scale)
        .collect();
    let mut w = outs.csv("smin.csv")?;
    rep.curve
        .write_csv(&mut w, &[("threshold", &threshold), ("bound", &rep.bound)])?;
    w.flush()?;
    Ok(Outcome::Done)
}

fn decompose(a: &DecomposeArgs, outs: &mut Outputs) -> Result<Outcome> {
    let e = ensemble(a.n, a.l, a.r, a.rho, a.norm_cap, a.common.seed());
    let mut rng = stream(a.common.seed());
    let rec = decompose_smoothed(&e, a.noise, &mut rng, &SimdiagOptions::default())?;
    let mut w = outs.csv("decompose.csv")?;
    rec.report.write_csv(&mut w)?;
    w.flush()?;
    outs.json("recovery.json", &rec.report)?;
    outs.json("estimate.json", &rec.estimate)?;
    outs.json("truth.json", &rec.truth)?;
    println!(
        "max factor error {:e}, max weight error {:e}, residual {:e}",
        rec.report.max_factor_error,
        rec.report.max_weight_error,
        rec.report.residual.unwrap_or(f64::NAN)
    );
    Ok(Outcome::Done)
}

/// One named check of the self-test suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

/// Exact identities: pseudo-inverse vs projection distances, the product-of-uniforms
/// law vs Monte Carlo, Haar moments and the folding round trip.
pub fn selftest(quick: bool, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = stream(seed);

    let count = if quick { 50 } else { 200 };
    let mut worst = 0.0f64;
    for _ in 0..count {
        let r = rng.random_range(1..=8);
        let d = rng.random_range(r..=16);
        let a = nalgebra::DMatrix::from_fn(r, d, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let lhs = pinv_hs_norm_sq(&a)?;
        let rhs = projection_distance_sum(&a)?;
        worst = worst.max((lhs - rhs).abs() / lhs);
    }
    checks.push(Check {
        name: "pinv_vs_projection_distances".into(),
        passed: worst <= 1e-8,
        value: worst,
        tolerance: 1e-8,
    });

    let samples = if quick { 100_000 } else { 1_000_000 };
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    for l in 2..=4usize {
        let mut z: Vec<f64> = (0..samples)
            .map(|_| (0..l).map(|_| rng.sample(unif)).product())
            .collect();
        z.sort_by(f64::total_cmp);
        let d = ks_statistic(&z, |x| {
            product_uniform_cdf(l, x.clamp(-1.0, 1.0)).unwrap_or(f64::NAN)
        });
        let band = dkw_band(samples, 1e-3);
        checks.push(Check {
            name: format!("product_uniform_law_l{l}"),
            passed: d <= band,
            value: d,
            tolerance: band,
        });
    }

    let draws = if quick { 20_000 } else { 100_000 };
    let hm = haar_moments(16, draws, &mut rng)?;
    let dev = (hm.second_moment - 1.0 / 16.0).abs();
    checks.push(Check {
        name: "haar_second_moment".into(),
        passed: dev <= 5e-3,
        value: dev,
        tolerance: 5e-3,
    });
    let cross_tol = 4.0 * hm.cross_moment_stderr;
    checks.push(Check {
        name: "haar_cross_moment".into(),
        passed: hm.cross_moment.abs() <= cross_tol,
        value: hm.cross_moment.abs(),
        tolerance: cross_tol,
    });

    let mut worst = 0.0f64;
    for (l, r) in [(3, 2), (4, 3), (5, 2)] {
        let e = SmoothedEnsemble::centered(r, 3, l, 1.0);
        let mats = e.sample_factors(&mut rng);
        let truth = Rank1Terms::new(
            vec![1.0; r],
            (0..r)
                .map(|i| {
                    mats.iter()
                        .map(|m| m.column(i).iter().copied().collect())
                        .collect()
                })
                .collect(),
        )?
        .canonical()?;
        let g = Grouping::for_shape(&truth.shape())?;
        let back = g.unfold(&g.fold(&truth)?)?;
        for (x, y) in truth
            .factors
            .iter()
            .flatten()
            .flatten()
            .zip(back.factors.iter().flatten().flatten())
        {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in truth.weights.iter().zip(&back.weights) {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    checks.push(Check {
        name: "fold_round_trip".into(),
        passed: worst <= 1e-12,
        value: worst,
        tolerance: 1e-12,
    });
    Ok(checks)
}

fn selftest_cmd(a: &SelftestArgs, outs: &mut Outputs) -> Result<Outcome> {
    let checks = selftest(a.quick, a.common.seed())?;
    let mut w = outs.csv("selftest.csv")?;
    writeln!(w, "check,passed,value,tolerance")?;
    for c in &checks {
        writeln!(w, "{},{},{:e},{:e}", c.name, c.passed, c.value, c.tolerance)?;
        println!(
            "{} {}: {:.3e} (tolerance {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    w.flush()?;
    Ok(if checks.iter().all(|c| c.passed) {
        Outcome::Done
    } else {
        Outcome::SelftestFailed
    })
}
