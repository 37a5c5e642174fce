//! Seeded Monte-Carlo estimation of small-ball, tail and dominance events.
//!
//! Every experiment reduces a trial to one or more scalar statistics and
//! counts, for each threshold of a decreasing grid, how many trials fall at
//! or below it. One draw serves every threshold, so counts along the grid are
//! nested exactly.
//!
//! Trials are cut into fixed-size batches. Batch `b` draws from
//! [`batch_stream`]`(seed, batch_offset + b)`, and batch counts are added, so a
//! run is identical for any thread count and two runs over disjoint batch
//! ranges merge into the run over their union.

pub mod stats;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{validation, Error, Result};
use crate::rng::{batch_stream, Stream};
use crate::subspaces::SubspaceBasis;
use crate::tensor::{projection_norm_unchecked, Contraction, FlatTensor};

pub use stats::{clopper_pearson, LineFit};

pub const DEFAULT_BATCH_SIZE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: u64,
    /// Strictly decreasing positive thresholds.
    pub epsilon_grid: Vec<f64>,
    /// Per-factor `z_j`; overrides the shifts carried by the distribution specs.
    pub shift_vectors: Option<Vec<Vec<f64>>>,
    pub confidence: f64,
    pub batch_size: u64,
    /// Index of the first batch stream; lets disjoint runs be merged.
    pub batch_offset: u64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100_000,
            epsilon_grid: log_grid(1e-1, 1e-3, 20),
            shift_vectors: None,
            confidence: 0.99,
            batch_size: DEFAULT_BATCH_SIZE,
            batch_offset: 0,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn new(seed: u64, trials: u64, epsilon_grid: Vec<f64>) -> Self {
        Self {
            seed,
            trials,
            epsilon_grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return validation(format!("need at least 100 trials, got {}", self.trials));
        }
        check_decreasing(&self.epsilon_grid)?;
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return validation("confidence must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return validation("batch_size must be positive");
        }
        Ok(())
    }
}

fn check_decreasing(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&e| !(e > 0.0)) {
        return validation("grid values must be positive");
    }
    check_strictly_decreasing(grid)
}

fn check_strictly_decreasing(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return validation("threshold grid is empty");
    }
    if grid.iter().any(|e| !e.is_finite()) {
        return validation("grid values must be finite");
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return validation("threshold grid must be strictly decreasing");
    }
    Ok(())
}

/// `count` log-spaced points from `start` to `end` inclusive.
pub fn log_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        _ => {
            let (a, b) = (start.ln(), end.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// How a curve's threshold relates to its ε label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `‖Π_F ⊗X‖ ≤ ε√m`
    EpsSqrtM,
    /// `|⟨⊗X, f⟩| ≤ ε`
    Eps,
    /// `s_min(A) ≤ √(1−r/n^ℓ)(cρ)^ℓ ε`
    SminThreshold,
    /// Membership or tail events indexed by a generic grid.
    Plain,
}

impl Scaling {
    pub fn label(self) -> &'static str {
        match self {
            Scaling::EpsSqrtM => "eps_sqrt_m",
            Scaling::Eps => "eps",
            Scaling::SminThreshold => "smin_threshold",
            Scaling::Plain => "plain",
        }
    }
}

/// Hit counts over a threshold grid with exact binomial intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallCurve {
    pub epsilon_grid: Vec<f64>,
    pub hit_counts: Vec<u64>,
    pub trials: u64,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub confidence: f64,
    pub scaling: Scaling,
}

impl SmallBallCurve {
    pub fn from_counts(
        epsilon_grid: Vec<f64>,
        hit_counts: Vec<u64>,
        trials: u64,
        confidence: f64,
        scaling: Scaling,
    ) -> Self {
        let (ci_low, ci_high) = hit_counts
            .iter()
            .map(|&k| clopper_pearson(k, trials, confidence))
            .unzip();
        Self {
            epsilon_grid,
            hit_counts,
            trials,
            ci_low,
            ci_high,
            confidence,
            scaling,
        }
    }

    pub fn p_hat(&self) -> Vec<f64> {
        self.hit_counts
            .iter()
            .map(|&k| k as f64 / self.trials as f64)
            .collect()
    }

    /// Counts never increase along the grid.
    pub fn is_nested(&self) -> bool {
        self.hit_counts.windows(2).all(|w| w[1] <= w[0])
    }

    /// Add the counts of a run over a disjoint batch range.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.epsilon_grid != other.epsilon_grid || self.scaling != other.scaling {
            return validation("can only merge curves over the same grid");
        }
        let counts = self
            .hit_counts
            .iter()
            .zip(&other.hit_counts)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_counts(
            self.epsilon_grid.clone(),
            counts,
            self.trials + other.trials,
            self.confidence,
            self.scaling,
        ))
    }

    /// Recompute intervals at another confidence level.
    pub fn with_confidence(&self, confidence: f64) -> Self {
        Self::from_counts(
            self.epsilon_grid.clone(),
            self.hit_counts.clone(),
            self.trials,
            confidence,
            self.scaling,
        )
    }

    /// Columns `epsilon,hits,trials,p_hat,ci_low,ci_high` plus optional extras.
    pub fn write_csv<W: Write>(&self, mut w: W, extra: &[(&str, &[f64])]) -> Result<()> {
        write!(w, "epsilon,hits,trials,p_hat,ci_low,ci_high")?;
        for (name, col) in extra {
            if col.len() != self.epsilon_grid.len() {
                return validation(format!("extra column `{name}` has the wrong length"));
            }
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.epsilon_grid.len() {
            write!(
                w,
                "{:e},{},{},{:e},{:e},{:e}",
                self.epsilon_grid[i],
                self.hit_counts[i],
                self.trials,
                self.hit_counts[i] as f64 / self.trials as f64,
                self.ci_low[i],
                self.ci_high[i]
            )?;
            for (_, col) in extra {
                write!(w, ",{:e}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Run `trials` draws in batches and count, per statistic `s`, how many draws
/// satisfy `value_s ≤ grids[s][i]` for every `i`.
///
/// `make_trial` builds per-batch state (scratch buffers) and returns the trial
/// closure, which writes one value per statistic.
pub fn count_nested<F, G>(
    cfg: &ExperimentConfig,
    grids: &[Vec<f64>],
    make_trial: F,
) -> Result<Vec<Vec<u64>>>
where
    F: Fn() -> G + Sync,
    G: FnMut(&mut Stream, &mut [f64]) -> Result<()>,
{
    for g in grids {
        check_strictly_decreasing(g)?;
    }
    let batches = cfg.trials.div_ceil(cfg.batch_size);
    let run_batch = |b: u64| -> Result<Vec<Vec<u64>>> {
        let n = cfg.batch_size.min(cfg.trials - b * cfg.batch_size);
        let mut rng = batch_stream(cfg.seed, cfg.batch_offset + b);
        let mut trial = make_trial();
        let mut values = vec![0.0; grids.len()];
        // ends[s][k]: draws whose value clears exactly the first k thresholds
        let mut ends: Vec<Vec<u64>> = grids.iter().map(|g| vec![0; g.len() + 1]).collect();
        for _ in 0..n {
            trial(&mut rng, &mut values)?;
            for ((g, e), &v) in grids.iter().zip(ends.iter_mut()).zip(&values) {
                let k = if v.is_nan() {
                    0
                } else {
                    g.partition_point(|&t| t >= v)
                };
                e[k] += 1;
            }
        }
        Ok(ends)
    };

    let per_batch: Vec<Vec<Vec<u64>>> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..batches)
                .into_par_iter()
                .map(run_batch)
                .collect::<Result<_>>()
        })?
    } else {
        (0..batches).map(run_batch).collect::<Result<_>>()?
    };

    let mut out: Vec<Vec<u64>> = grids.iter().map(|g| vec![0; g.len()]).collect();
    for ends in per_batch {
        for (o, e) in out.iter_mut().zip(ends) {
            // hits at threshold i = draws clearing more than i thresholds
            let mut acc = 0;
            for i in (0..o.len()).rev() {
                acc += e[i + 1];
                o[i] += acc;
            }
        }
    }
    Ok(out)
}

fn check_factor_specs(specs: &[DistributionSpec], shape: &[usize]) -> Result<()> {
    if specs.len() != shape.len() {
        return validation(format!(
            "{} distribution specs for a tensor of order {}",
            specs.len(),
            shape.len()
        ));
    }
    for (j, (s, &n)) in specs.iter().zip(shape).enumerate() {
        s.validate()?;
        if s.dim != n {
            return validation(format!(
                "factor {j} has dimension {}, shape needs {n}",
                s.dim
            ));
        }
    }
    Ok(())
}

fn resolve_shifts(specs: &[DistributionSpec], cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    match &cfg.shift_vectors {
        Some(z) => {
            if z.len() != specs.len() || z.iter().zip(specs).any(|(v, s)| v.len() != s.dim) {
                return validation("shift_vectors must match the factor dimensions");
            }
            Ok(z.clone())
        }
        None => Ok(specs
            .iter()
            .map(|s| (0..s.dim).map(|i| s.shift_at(i)).collect())
            .collect()),
    }
}

/// Draw every factor once and subtract its shift.
fn draw_factors(
    specs: &[DistributionSpec],
    shifts: &[Vec<f64>],
    rng: &mut Stream,
    factors: &mut [Vec<f64>],
) {
    for ((spec, z), f) in specs.iter().zip(shifts).zip(factors.iter_mut()) {
        spec.sample_into(rng, f);
        f.iter_mut().zip(z).for_each(|(x, zi)| *x -= zi);
    }
}

fn new_factors(specs: &[DistributionSpec]) -> Vec<Vec<f64>> {
    specs.iter().map(|s| vec![0.0; s.dim]).collect()
}

/// Empirical `P(‖Π_F ⊗_j (X_j − z_j)‖₂ ≤ ε√m)` on the configured grid.
pub fn estimate_smallball(
    specs: &[DistributionSpec],
    basis: &SubspaceBasis,
    cfg: &ExperimentConfig,
) -> Result<SmallBallCurve> {
    cfg.validate()?;
    check_factor_specs(specs, basis.shape())?;
    let shifts = resolve_shifts(specs, cfg)?;
    let root_m = (basis.m() as f64).sqrt();
    let thresholds: Vec<f64> = cfg.epsilon_grid.iter().map(|e| e * root_m).collect();
    let grid = if basis.m() == 0 {
        // every norm is exactly 0; any positive grid counts it
        cfg.epsilon_grid.clone()
    } else {
        thresholds
    };
    let counts = count_nested(cfg, &[grid], || {
        let mut factors = new_factors(specs);
        let mut c = Contraction::default();
        let shifts = &shifts;
        move |rng: &mut Stream, out: &mut [f64]| {
            draw_factors(specs, shifts, rng, &mut factors);
            out[0] = projection_norm_unchecked(&mut c, &factors, basis);
            Ok(())
        }
    })?;
    Ok(SmallBallCurve::from_counts(
        cfg.epsilon_grid.clone(),
        counts.into_iter().next().unwrap(),
        cfg.trials,
        cfg.confidence,
        Scaling::EpsSqrtM,
    ))
}

/// Empirical `P(|⟨⊗_j (X_j − z_j), f⟩| ≤ ε)`.
pub fn estimate_direction_smallball(
    specs: &[DistributionSpec],
    f: &FlatTensor,
    cfg: &ExperimentConfig,
) -> Result<SmallBallCurve> {
    cfg.validate()?;
    check_factor_specs(specs, &f.shape)?;
    let shifts = resolve_shifts(specs, cfg)?;
    let counts = count_nested(cfg, std::slice::from_ref(&cfg.epsilon_grid), || {
        let mut factors = new_factors(specs);
        let mut c = Contraction::default();
        let shifts = &shifts;
        move |rng: &mut Stream, out: &mut [f64]| {
            draw_factors(specs, shifts, rng, &mut factors);
            out[0] = c.contract(&f.data, &factors).abs();
            Ok(())
        }
    })?;
    Ok(SmallBallCurve::from_counts(
        cfg.epsilon_grid.clone(),
        counts.into_iter().next().unwrap(),
        cfg.trials,
        cfg.confidence,
        Scaling::Eps,
    ))
}

/// Upper and lower tails of `Π_j ‖X_j‖` around `n^{ℓ/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormConcentration {
    /// Strictly increasing deviation levels `t`.
    pub t_grid: Vec<f64>,
    /// `P(Π‖X_j‖ ≥ (1+t) n^{ℓ/2})`
    pub upper: SmallBallCurve,
    /// `P(Π‖X_j‖ ≤ (1−t) n^{ℓ/2})`
    pub lower: SmallBallCurve,
}

impl NormConcentration {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,upper_hits,upper_p_hat,upper_ci_low,upper_ci_high,lower_hits,lower_p_hat,lower_ci_low,lower_ci_high,trials")?;
        let (u, l) = (&self.upper, &self.lower);
        for i in 0..self.t_grid.len() {
            writeln!(
                w,
                "{:e},{},{:e},{:e},{:e},{},{:e},{:e},{:e},{}",
                self.t_grid[i],
                u.hit_counts[i],
                u.hit_counts[i] as f64 / u.trials as f64,
                u.ci_low[i],
                u.ci_high[i],
                l.hit_counts[i],
                l.hit_counts[i] as f64 / l.trials as f64,
                l.ci_low[i],
                l.ci_high[i],
                u.trials
            )?;
        }
        Ok(())
    }
}

/// `n^{ℓ/2}` uses `n = (Π n_j)^{1/ℓ}`, i.e. the square root of the ambient dimension.
pub fn norm_concentration(
    specs: &[DistributionSpec],
    t_grid: &[f64],
    cfg: &ExperimentConfig,
) -> Result<NormConcentration> {
    if cfg.trials < 100 {
        return validation("need at least 100 trials");
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] < 0.0 {
        return validation("t grid must be nonnegative and strictly increasing");
    }
    for s in specs {
        s.validate()?;
        use crate::distributions::Kind::*;
        if !matches!(
            s.kind,
            UniformCubeSqrt3 | GaussianStd | SymmetricExponentialUnitvar
        ) {
            return validation(format!("{:?} is not an isotropic kind", s.kind));
        }
    }
    let center: f64 = specs.iter().map(|s| (s.dim as f64).sqrt()).product();
    // upper tail as {−norm ≤ −(1+t)c}, lower as {norm ≤ (1−t)c}; both decrease in t
    let grids = vec![
        t_grid
            .iter()
            .map(|t| -(1.0 + t) * center)
            .collect::<Vec<_>>(),
        t_grid
            .iter()
            .map(|t| (1.0 - t) * center)
            .collect::<Vec<_>>(),
    ];
    let shifts = resolve_shifts(specs, cfg)?;
    let counts = count_nested(cfg, &grids, || {
        let mut factors = new_factors(specs);
        let shifts = &shifts;
        move |rng: &mut Stream, out: &mut [f64]| {
            draw_factors(specs, shifts, rng, &mut factors);
            let norm: f64 = factors
                .iter()
                .map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt())
                .product();
            out[0] = -norm;
            out[1] = norm;
            Ok(())
        }
    })?;
    let mut it = counts.into_iter();
    let mk = |c| {
        SmallBallCurve::from_counts(
            t_grid.to_vec(),
            c,
            cfg.trials,
            cfg.confidence,
            Scaling::Plain,
        )
    };
    Ok(NormConcentration {
        t_grid: t_grid.to_vec(),
        upper: mk(it.next().unwrap()),
        lower: mk(it.next().unwrap()),
    })
}

/// `∩_k {x : |⟨x, u^k⟩| ≤ 1}`; symmetric and convex by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabBody {
    pub shape: Vec<usize>,
    pub directions: Vec<FlatTensor>,
}

impl SlabBody {
    pub fn new(shape: Vec<usize>, directions: Vec<FlatTensor>) -> Result<Self> {
        for (k, u) in directions.iter().enumerate() {
            if u.shape != shape {
                return validation(format!("slab direction {k} has shape {:?}", u.shape));
            }
            if u.data.iter().all(|&x| x == 0.0) {
                return validation(format!("slab direction {k} is zero"));
            }
        }
        Ok(Self { shape, directions })
    }

    /// `{‖x‖_∞ ≤ h}` as coordinate slabs.
    pub fn cube(shape: Vec<usize>, half_width: f64) -> Result<Self> {
        let d: usize = shape.iter().product();
        let dirs = (0..d)
            .map(|i| {
                let mut data = vec![0.0; d];
                data[i] = 1.0 / half_width;
                FlatTensor::new(shape.clone(), data)
            })
            .collect::<Result<_>>()?;
        Self::new(shape, dirs)
    }

    /// `count` Gaussian directions scaled by `scale / √D`.
    pub fn random<R: Rng + ?Sized>(
        shape: Vec<usize>,
        count: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d: usize = shape.iter().product();
        let s = scale / (d as f64).sqrt();
        let dirs = (0..count)
            .map(|_| {
                let data = (0..d)
                    .map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                FlatTensor::new(shape.clone(), data)
            })
            .collect::<Result<_>>()?;
        Self::new(shape, dirs)
    }

    /// `max_k |⟨⊗ factors, u^k⟩|`; membership iff this is ≤ 1.
    fn gauge(&self, c: &mut Contraction, factors: &[Vec<f64>]) -> f64 {
        self.directions
            .iter()
            .map(|u| c.contract(&u.data, factors).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub trials: u64,
    pub confidence: f64,
    pub hits_a: u64,
    pub hits_b: u64,
    pub p_hat_a: f64,
    pub p_hat_b: f64,
    pub ci_a: (f64, f64),
    pub ci_b: (f64, f64),
    /// `ci_a.low − ci_b.high`; positive only when the intervals are disjoint in the
    /// order that would contradict `P_A(K) ≤ P_B(K)`.
    pub ci_gap: f64,
    pub violation_candidate: bool,
}

fn membership_probability(
    specs: &[DistributionSpec],
    body: &SlabBody,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<u64> {
    let cfg = ExperimentConfig {
        seed,
        ..cfg.clone()
    };
    let shifts = resolve_shifts(specs, &cfg)?;
    let counts = count_nested(&cfg, &[vec![1.0]], || {
        let mut factors = new_factors(specs);
        let mut c = Contraction::default();
        let shifts = &shifts;
        move |rng: &mut Stream, out: &mut [f64]| {
            draw_factors(specs, shifts, rng, &mut factors);
            out[0] = body.gauge(&mut c, &factors);
            Ok(())
        }
    })?;
    Ok(counts[0][0])
}

/// Compare `P(⊗X_A ∈ K)` with `P(⊗X_B ∈ K)`.
///
/// This checks consistency with `P_A ≤ P_B`; a violation candidate is flagged
/// only when the two intervals are disjoint in the wrong order.
pub fn dominance_test(
    specs_a: &[DistributionSpec],
    specs_b: &[DistributionSpec],
    body: &SlabBody,
    cfg: &ExperimentConfig,
) -> Result<DominanceReport> {
    if cfg.trials < 100 || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return validation("dominance test needs ≥ 100 trials and confidence in (0, 1)");
    }
    check_factor_specs(specs_a, &body.shape)?;
    check_factor_specs(specs_b, &body.shape)?;
    let hits_a = membership_probability(specs_a, body, cfg, cfg.seed)?;
    let hits_b = membership_probability(specs_b, body, cfg, cfg.seed.wrapping_add(0x9E37_79B9))?;
    let n = cfg.trials;
    let ci_a = clopper_pearson(hits_a, n, cfg.confidence);
    let ci_b = clopper_pearson(hits_b, n, cfg.confidence);
    let ci_gap = ci_a.0 - ci_b.1;
    Ok(DominanceReport {
        trials: n,
        confidence: cfg.confidence,
        hits_a,
        hits_b,
        p_hat_a: hits_a as f64 / n as f64,
        p_hat_b: hits_b as f64 / n as f64,
        ci_a,
        ci_b,
        ci_gap,
        violation_candidate: ci_gap > 0.0,
    })
}

/// Empirical `E[ξ^{-q}]`.
pub fn negative_moment(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return validation("no samples");
    }
    if !(q > 0.0 && q < 1.0) {
        return validation("q must lie in (0, 1)");
    }
    if let Some(i) = samples.iter().position(|&x| !(x > 0.0)) {
        return validation(format!("sample {i} is not positive"));
    }
    Ok(samples.iter().map(|x| x.powf(-q)).sum::<f64>() / samples.len() as f64)
}

/// Reference level `(K ℓ^ℓ)^q / (1−q)^{q(ℓ−1)+1}` for [`negative_moment`].
pub fn negative_moment_reference(k: f64, order: usize, q: f64) -> f64 {
    let l = order as f64;
    (k * l.powf(l)).powf(q) / (1.0 - q).powf(q * (l - 1.0) + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// OLS slope of `log(p̂ / log(1/ε)^k)` against `log ε` over grid points in
/// `[lo, hi]` with nonzero counts.
pub fn fit_slope(
    curve: &SmallBallCurve,
    range: (f64, f64),
    deflate_log_power: u32,
) -> Result<SlopeFit> {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&e, &k) in curve.epsilon_grid.iter().zip(&curve.hit_counts) {
        if e < lo || e > hi || k == 0 {
            continue;
        }
        let p = k as f64 / curve.trials as f64;
        let deflate = if deflate_log_power == 0 {
            1.0
        } else {
            let l = (1.0 / e).ln();
            if !(l > 0.0) {
                continue;
            }
            l.powi(deflate_log_power as i32)
        };
        x.push(e.ln());
        y.push((p / deflate).ln());
    }
    if x.len() < 4 {
        return Err(Error::DataSparsity(format!(
            "{} usable grid points in [{lo:e}, {hi:e}], need 4",
            x.len()
        )));
    }
    let f = stats::ols(&x, &y);
    Ok(SlopeFit {
        slope: f.slope,
        stderr: f.slope_stderr,
        points: x.len(),
    })
}

/// `[ε_lo, 10·ε_lo]` where `ε_lo` is the smallest grid value with at least `min_hits` hits.
pub fn decade_with_min_hits(curve: &SmallBallCurve, min_hits: u64) -> Result<(f64, f64)> {
    let lo = curve
        .epsilon_grid
        .iter()
        .zip(&curve.hit_counts)
        .filter(|(_, &k)| k >= min_hits)
        .map(|(&e, _)| e)
        .fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return Err(Error::DataSparsity(format!(
            "no grid point has {min_hits} hits"
        )));
    }
    Ok((lo, 10.0 * lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Kind;
    use crate::exact_laws::product_uniform_smallball;
    use crate::subspaces::{coordinate_line_subspace, diagonal_direction, haar_subspace};

    fn cube(n: usize) -> DistributionSpec {
        DistributionSpec::new(Kind::UniformCubeSqrt3, n)
    }

    #[test]
    fn grid_validation() {
        let mut cfg = ExperimentConfig::new(1, 1000, vec![0.1, 0.1]);
        assert!(cfg.validate().is_err());
        cfg.epsilon_grid = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        cfg.epsilon_grid = vec![0.2, 0.1];
        cfg.trials = 99;
        assert!(cfg.validate().is_err());
        let g = log_grid(1e-1, 1e-3, 3);
        assert!((g[1] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn zero_tensor_always_hits() {
        let specs = vec![
            DistributionSpec::new(Kind::PointMass, 3),
            DistributionSpec::new(Kind::UniformCubeSqrt3, 3),
        ];
        let b = coordinate_line_subspace(3, 2, 2).unwrap();
        let cfg = ExperimentConfig::new(3, 1000, log_grid(1.0, 1e-6, 7));
        let c = estimate_smallball(&specs, &b, &cfg).unwrap();
        assert!(c.hit_counts.iter().all(|&k| k == 1000));

        let f = diagonal_direction(3, 2).unwrap();
        let c = estimate_direction_smallball(&specs, &f, &cfg).unwrap();
        assert!(c.hit_counts.iter().all(|&k| k == 1000));
    }

    #[test]
    fn huge_eps_always_hits() {
        let b = haar_subspace(&[2, 2], 2, &mut crate::rng::stream(1)).unwrap();
        let cfg = ExperimentConfig::new(4, 500, vec![100.0, 50.0]);
        let c = estimate_smallball(&[cube(2), cube(2)], &b, &cfg).unwrap();
        assert_eq!(c.hit_counts, vec![500, 500]);
    }

    #[test]
    fn one_dimensional_matches_exact_law() {
        let s3 = 3f64.sqrt();
        for order in [1usize, 2, 3] {
            let specs = vec![cube(1); order];
            let full = SubspaceBasis::new(vec![1; order], vec![vec![1.0]]).unwrap();
            let mut cfg = ExperimentConfig::new(10 + order as u64, 200_000, log_grid(1.0, 1e-2, 6));
            cfg.confidence = 0.999;
            let c = estimate_smallball(&specs, &full, &cfg).unwrap();
            for (i, &e) in c.epsilon_grid.iter().enumerate() {
                let p = product_uniform_smallball(order, s3, e).unwrap();
                assert!(
                    c.ci_low[i] <= p && p <= c.ci_high[i],
                    "ℓ={order} ε={e} p={p} ci=({}, {})",
                    c.ci_low[i],
                    c.ci_high[i]
                );
            }
        }
    }

    #[test]
    fn gaussian_line_matches_normal_law() {
        let f = FlatTensor::new(vec![1], vec![1.0]).unwrap();
        let mut cfg = ExperimentConfig::new(21, 200_000, log_grid(2.0, 1e-2, 8));
        cfg.confidence = 0.999;
        let c =
            estimate_direction_smallball(&[DistributionSpec::new(Kind::GaussianStd, 1)], &f, &cfg)
                .unwrap();
        for (i, &e) in c.epsilon_grid.iter().enumerate() {
            let p = 2.0 * stats::normal_cdf(e) - 1.0;
            assert!(c.ci_low[i] <= p && p <= c.ci_high[i], "ε={e}");
        }
    }

    #[test]
    fn curves_are_nested_and_reproducible() {
        let b = haar_subspace(&[3, 3], 3, &mut crate::rng::stream(5)).unwrap();
        let cfg = ExperimentConfig::new(6, 20_000, log_grid(1.0, 1e-3, 15));
        let a = estimate_smallball(&[cube(3), cube(3)], &b, &cfg).unwrap();
        let again = estimate_smallball(&[cube(3), cube(3)], &b, &cfg).unwrap();
        assert!(a.is_nested());
        assert_eq!(a, again);
        for i in 0..a.hit_counts.len() {
            let p = a.hit_counts[i] as f64 / a.trials as f64;
            assert!(
                0.0 <= a.ci_low[i] && a.ci_low[i] <= p && p <= a.ci_high[i] && a.ci_high[i] <= 1.0
            );
        }
        let threaded = ExperimentConfig {
            threads: 4,
            ..cfg.clone()
        };
        assert_eq!(
            estimate_smallball(&[cube(3), cube(3)], &b, &threaded).unwrap(),
            a
        );
    }

    #[test]
    fn merge_law() {
        let f = diagonal_direction(2, 2).unwrap();
        let specs = [cube(2), cube(2)];
        let whole = ExperimentConfig::new(8, 200_000, log_grid(1.0, 1e-3, 10));
        let first = ExperimentConfig {
            trials: 100_000,
            ..whole.clone()
        };
        let second = ExperimentConfig {
            batch_offset: 10,
            ..first.clone()
        };
        let w = estimate_direction_smallball(&specs, &f, &whole).unwrap();
        let a = estimate_direction_smallball(&specs, &f, &first).unwrap();
        let b = estimate_direction_smallball(&specs, &f, &second).unwrap();
        assert_eq!(a.merge(&b).unwrap(), w);
    }

    #[test]
    fn shift_vectors_override_spec_shifts() {
        let f = diagonal_direction(2, 1).unwrap();
        let specs = [DistributionSpec::new(Kind::PointMass, 2).with_shift(vec![5.0, 0.0])];
        let cfg = ExperimentConfig::new(1, 100, vec![1.0]);
        assert_eq!(
            estimate_direction_smallball(&specs, &f, &cfg)
                .unwrap()
                .hit_counts,
            vec![0]
        );
        let cfg = ExperimentConfig {
            shift_vectors: Some(vec![vec![0.0, 0.0]]),
            ..cfg
        };
        assert_eq!(
            estimate_direction_smallball(&specs, &f, &cfg)
                .unwrap()
                .hit_counts,
            vec![100]
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let b = coordinate_line_subspace(3, 2, 1).unwrap();
        let cfg = ExperimentConfig::new(1, 100, vec![1.0]);
        assert!(matches!(
            estimate_smallball(&[cube(2), cube(3)], &b, &cfg),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            estimate_smallball(&[cube(3)], &b, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn norm_tails() {
        let specs = vec![cube(4), cube(4)];
        let t_max = 3f64.powf(1.0) - 1.0;
        let cfg = ExperimentConfig::new(2, 20_000, vec![1.0]);
        let r = norm_concentration(&specs, &[0.0, 0.5, t_max, t_max + 0.1], &cfg).unwrap();
        assert_eq!(r.upper.hit_counts[2], 0);
        assert_eq!(r.upper.hit_counts[3], 0);
        assert!(r.upper.is_nested() && r.lower.is_nested());
        // at t = 0 the two closed tails cover everything
        assert!(r.upper.hit_counts[0] + r.lower.hit_counts[0] >= 20_000);
        assert!(r.upper.hit_counts[0] + r.lower.hit_counts[0] <= 20_001);
    }

    #[test]
    fn dominance_identical_laws() {
        let specs = [cube(2), cube(2)];
        let body = SlabBody::random(vec![2, 2], 3, 2.0, &mut crate::rng::stream(3)).unwrap();
        let cfg = ExperimentConfig::new(9, 50_000, vec![1.0]);
        let r = dominance_test(&specs, &specs, &body, &cfg).unwrap();
        assert!(!r.violation_candidate);
        assert!((r.p_hat_a - r.p_hat_b).abs() < 0.02);

        let everything = SlabBody::new(vec![2, 2], vec![]).unwrap();
        let r = dominance_test(&specs, &specs, &everything, &cfg).unwrap();
        assert_eq!((r.p_hat_a, r.p_hat_b), (1.0, 1.0));
    }

    #[test]
    fn negative_moment_examples() {
        assert!((negative_moment(&[2.0; 10], 0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(negative_moment(&[1.0; 3], 0.3).unwrap(), 1.0);
        assert!(negative_moment(&[1.0, 0.0], 0.5).is_err());

        // ∫₀¹ t^{-1/2} dt = 2; variance of U^{-1/2} is infinite, so use a loose band
        let mut rng = crate::rng::stream(12);
        let xs: Vec<f64> = (0..1_000_000).map(|_| 1.0 - rng.random::<f64>()).collect();
        let m = negative_moment(&xs, 0.5).unwrap();
        assert!((m - 2.0).abs() < 0.02, "{m}");
        assert!(negative_moment_reference(1.0, 2, 0.5) > 0.0);
    }

    fn synthetic(p: impl Fn(f64) -> f64) -> SmallBallCurve {
        let grid = log_grid(1e-1, 1e-4, 16);
        let trials = 1u64 << 50;
        let counts = grid
            .iter()
            .map(|&e| (p(e) * trials as f64).round() as u64)
            .collect();
        SmallBallCurve {
            ci_low: vec![0.0; grid.len()],
            ci_high: vec![1.0; grid.len()],
            epsilon_grid: grid,
            hit_counts: counts,
            trials,
            confidence: 0.99,
            scaling: Scaling::Eps,
        }
    }

    #[test]
    fn slope_examples() {
        let c = synthetic(|e| e * e);
        let s = fit_slope(&c, (1e-4, 1e-1), 0).unwrap();
        assert!((s.slope - 2.0).abs() < 0.01);
        let c = synthetic(|e| e * (1.0 / e).ln());
        let s = fit_slope(&c, (1e-4, 1e-1), 1).unwrap();
        assert!((s.slope - 1.0).abs() < 0.02);
        let mut z = c.clone();
        z.hit_counts.iter_mut().for_each(|k| *k = 0);
        assert!(matches!(
            fit_slope(&z, (1e-4, 1e-1), 0),
            Err(Error::DataSparsity(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let c = SmallBallCurve::from_counts(vec![0.1, 0.01], vec![10, 1], 100, 0.99, Scaling::Eps);
        let mut buf = Vec::new();
        c.write_csv(&mut buf, &[("bound", &[0.5, 0.05])]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("epsilon,hits,trials,p_hat,ci_low,ci_high,bound\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
