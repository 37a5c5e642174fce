//! Coordinate-wise product laws and symmetric decreasing rearrangement.
//!
//! Cube conventions:
//! - `uniform-cube-sqrt3`: uniform on `[-√3, √3]`, mean 0, variance 1, density `1/(2√3)`.
//! - `uniform-cube-unit`: uniform on `[-1, 1]`, density `1/2` (variance `1/3`).
//!
//! The unit-volume cube `[-1/2, 1/2]` used by dominance comparisons is expressed
//! as a histogram with a single bin of height 1, see [`HistogramDensity::uniform`].
//!
//! Samplers always return the centered law. Shifts are subtracted by the
//! Monte-Carlo consumer, see [`DistributionSpec::shift`].

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    UniformCubeSqrt3,
    UniformCubeUnit,
    GaussianStd,
    SymmetricExponentialUnitvar,
    Histogram,
    /// Dirac mass at 0. Used for degenerate checks; its density bound is infinite.
    PointMass,
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform-cube-sqrt3" | "cube" => Kind::UniformCubeSqrt3,
            "uniform-cube-unit" => Kind::UniformCubeUnit,
            "gaussian-std" | "gaussian" => Kind::GaussianStd,
            "symmetric-exponential-unitvar" | "laplace" => Kind::SymmetricExponentialUnitvar,
            "histogram" => Kind::Histogram,
            "point-mass" => Kind::PointMass,
            other => {
                return Err(Error::Config(format!(
                    "unknown distribution kind `{other}`"
                )))
            }
        })
    }
}

/// Piecewise-constant density on `[edges[0], edges[last])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDensity {
    #[serde(rename = "edges")]
    pub bin_edges: Vec<f64>,
    pub heights: Vec<f64>,
}

impl HistogramDensity {
    pub fn new(bin_edges: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        let h = Self { bin_edges, heights };
        h.validate()?;
        Ok(h)
    }

    /// Uniform density on `[-half_width, half_width]`.
    pub fn uniform(half_width: f64) -> Self {
        Self {
            bin_edges: vec![-half_width, half_width],
            heights: vec![1.0 / (2.0 * half_width)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heights.is_empty() || self.bin_edges.len() != self.heights.len() + 1 {
            return validation("histogram needs one more edge than heights");
        }
        if self.bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return validation("histogram edges must be strictly increasing");
        }
        if self.heights.iter().any(|&h| !(h >= 0.0) || !h.is_finite()) {
            return validation("histogram heights must be finite and nonnegative");
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return validation(format!("histogram mass is {mass}, expected 1"));
        }
        Ok(())
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges.windows(2).map(|w| w[1] - w[0])
    }

    pub fn mass(&self) -> f64 {
        self.widths().zip(&self.heights).map(|(w, h)| w * h).sum()
    }

    pub fn sup(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    /// Density value at `x` (right-open bins).
    pub fn eval(&self, x: f64) -> f64 {
        let last = *self.bin_edges.last().unwrap();
        if x < self.bin_edges[0] || x >= last {
            return 0.0;
        }
        let i = self.bin_edges.partition_point(|&e| e <= x) - 1;
        self.heights[i]
    }

    /// `∫ f^p` of the piecewise-constant density.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.widths()
            .zip(&self.heights)
            .map(|(w, h)| w * h.powf(p))
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let n = self.heights.len();
        for (i, (w, h)) in self.widths().zip(&self.heights).enumerate() {
            let mass = w * h;
            if mass > 0.0 && (u < acc + mass || i == n - 1) {
                let frac = ((u - acc) / mass).clamp(0.0, 1.0);
                return self.bin_edges[i] + frac * w;
            }
            acc += mass;
        }
        // only reachable when trailing bins carry zero mass
        let i = self.heights.iter().rposition(|&h| h > 0.0).unwrap_or(0);
        self.bin_edges[i + 1]
    }
}

/// Symmetric decreasing rearrangement of a histogram density.
///
/// Level sets are sorted by height and laid out symmetrically around 0, tallest
/// innermost. Bins of equal height are merged and zero-height bins dropped, so the
/// output is canonical and the operation is idempotent.
pub fn rearrange_histogram(h: &HistogramDensity) -> Result<HistogramDensity> {
    h.validate()?;
    let mut levels: Vec<(f64, f64)> = h
        .heights
        .iter()
        .zip(h.widths())
        .filter(|(&height, _)| height > 0.0)
        .map(|(&height, w)| (height, w))
        .collect();
    levels.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(levels.len());
    for (height, w) in levels {
        match merged.last_mut() {
            Some(last) if last.0 == height => last.1 += w,
            _ => merged.push((height, w)),
        }
    }

    // outer radius of each level set, innermost first
    let mut radii = Vec::with_capacity(merged.len());
    let mut acc = 0.0;
    for &(_, w) in &merged {
        acc += w;
        radii.push(acc / 2.0);
    }

    let k = merged.len();
    let mut edges = Vec::with_capacity(2 * k);
    let mut heights = Vec::with_capacity(2 * k - 1);
    for i in (0..k).rev() {
        edges.push(-radii[i]);
        heights.push(merged[i].0);
    }
    for i in 0..k {
        edges.push(radii[i]);
        if i + 1 < k {
            heights.push(merged[i + 1].0);
        }
    }
    let out = HistogramDensity {
        bin_edges: edges,
        heights,
    };
    debug_assert_eq!(out.bin_edges.len(), out.heights.len() + 1);
    Ok(out)
}

/// Declarative description of a product law on `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: Kind,
    pub dim: usize,
    /// The vector `z` subtracted from each draw by the Monte-Carlo consumer.
    #[serde(default)]
    pub shift: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<HistogramDensity>,
}

impl DistributionSpec {
    pub fn new(kind: Kind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            shift: Vec::new(),
            density_bound: None,
            bins: None,
        }
    }

    pub fn histogram(h: HistogramDensity, dim: usize) -> Self {
        Self {
            kind: Kind::Histogram,
            dim,
            shift: Vec::new(),
            density_bound: None,
            bins: Some(h),
        }
    }

    pub fn with_shift(mut self, shift: Vec<f64>) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return validation("distribution dimension must be positive");
        }
        if !self.shift.is_empty() && self.shift.len() != self.dim {
            return validation(format!(
                "shift has length {}, expected {}",
                self.shift.len(),
                self.dim
            ));
        }
        match (&self.kind, &self.bins) {
            (Kind::Histogram, Some(h)) => h.validate()?,
            (Kind::Histogram, None) => {
                return Err(Error::Config("histogram kind requires `bins`".into()))
            }
            _ => {}
        }
        if let Some(m) = self.density_bound {
            if !(m > 0.0) {
                return validation("density_bound must be positive");
            }
            if m < density_sup(self) * (1.0 - 1e-12) {
                return validation(format!(
                    "declared density_bound {m} is below the true sup-norm {}",
                    density_sup(self)
                ));
            }
        }
        Ok(())
    }

    /// Declared bound if present, otherwise the exact sup-norm.
    pub fn bound(&self) -> f64 {
        self.density_bound.unwrap_or_else(|| density_sup(self))
    }

    /// Shift value for coordinate `i` (zero when no shift is set).
    pub fn shift_at(&self, i: usize) -> f64 {
        self.shift.get(i).copied().unwrap_or(0.0)
    }

    fn sample_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            Kind::UniformCubeSqrt3 => rng.random_range(-SQRT3..SQRT3),
            Kind::UniformCubeUnit => rng.random_range(-1.0..1.0),
            Kind::GaussianStd => StandardNormal.sample(rng),
            Kind::SymmetricExponentialUnitvar => {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e * std::f64::consts::FRAC_1_SQRT_2
            }
            Kind::Histogram => self
                .bins
                .as_ref()
                .expect("histogram spec validated")
                .sample(rng),
            Kind::PointMass => 0.0,
        }
    }

    /// Fill `out` with one draw; `out.len()` must equal `dim`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for x in out.iter_mut() {
            *x = self.sample_scalar(rng);
        }
    }
}

/// One draw of the (unshifted) product law.
pub fn sample_vector<R: Rng + ?Sized>(spec: &DistributionSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = vec![0.0; spec.dim];
    spec.sample_into(rng, &mut out);
    Ok(out)
}

/// Exact sup-norm of one coordinate density.
pub fn density_sup(spec: &DistributionSpec) -> f64 {
    match spec.kind {
        Kind::UniformCubeSqrt3 => 1.0 / (2.0 * SQRT3),
        Kind::UniformCubeUnit => 0.5,
        Kind::GaussianStd => 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
        // Laplace with scale b = 1/√2 has peak 1/(2b)
        Kind::SymmetricExponentialUnitvar => std::f64::consts::FRAC_1_SQRT_2,
        Kind::Histogram => spec.bins.as_ref().map_or(f64::INFINITY, |h| h.sup()),
        Kind::PointMass => f64::INFINITY,
    }
}
