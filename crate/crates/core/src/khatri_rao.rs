//! Khatri–Rao products, the Moore–Penrose / projection-distance identity, and
//! the smoothed smallest-singular-value experiment.
//!
//! For an `r×d` matrix of full row rank with rows `v_i`,
//!
//! ```text
//! ‖A⁺‖²_HS = Σ_i 1/s_i² = Σ_{i=1}^{r} 1/‖Π_{V_i^⊥} v_i‖²,   V_i = span{v_j : j ≠ i}.
//! ```
//!
//! The left side is computed from an SVD, the right side from Gram–Schmidt
//! residuals; the two routes share no code.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::exact_laws::{
    bound_smin_tail, check_smin_hypothesis, smin_threshold_scale, BoundConfig,
};
use crate::montecarlo::{count_nested, ExperimentConfig, Scaling, SmallBallCurve};
use crate::rng::Stream;

/// Relative singular-value floor below which a matrix counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Column-wise Kronecker product; column `i` is the row-major flattening of
/// `⊗_j column_i(A_j)`.
pub fn khatri_rao(factors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = factors
        .first()
        .ok_or_else(|| Error::Validation("khatri_rao needs at least one factor".into()))?;
    let r = first.ncols();
    if let Some(j) = factors.iter().position(|m| m.ncols() != r) {
        return validation(format!(
            "factor {j} has {} columns, expected {r}",
            factors[j].ncols()
        ));
    }
    let rows: usize = factors.iter().map(|m| m.nrows()).product();
    let mut out = DMatrix::zeros(rows, r);
    let mut col = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for i in 0..r {
        col.clear();
        col.push(1.0);
        for m in factors {
            next.clear();
            for &a in &col {
                next.extend(m.column(i).iter().map(|&b| a * b));
            }
            std::mem::swap(&mut col, &mut next);
        }
        out.column_mut(i).copy_from_slice(&col);
    }
    Ok(out)
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Smallest singular value (of the `min(rows, cols)` nonzero ones).
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// `Σ 1/s_i²` over the `min(rows, cols)` singular values.
pub fn pinv_hs_norm_sq(a: &DMatrix<f64>) -> Result<f64> {
    let s = singular_values(a);
    let (smax, smin) = (s[0], *s.last().unwrap());
    if !(smin > RANK_TOL * smax) {
        return Err(Error::Degeneracy(format!(
            "matrix is rank deficient (s_min = {smin:.3e}, s_max = {smax:.3e})"
        )));
    }
    Ok(s.iter().map(|x| 1.0 / (x * x)).sum())
}

/// `Σ_i 1/‖Π_{V_i^⊥} v_i‖²` over the rows `v_i` of an `r×d` matrix.
pub fn projection_distance_sum(a: &DMatrix<f64>) -> Result<f64> {
    let r = a.nrows();
    if r > a.ncols() {
        return validation(format!(
            "{r} rows cannot be independent in dimension {}",
            a.ncols()
        ));
    }
    let rows: Vec<Vec<f64>> = (0..r).map(|i| a.row(i).iter().copied().collect()).collect();
    let mut total = 0.0;
    for i in 0..r {
        let residual = distance_to_span(
            &rows[i],
            rows.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.as_slice()),
        );
        let scale = norm(&rows[i]);
        if !(residual > RANK_TOL * scale) {
            return Err(Error::Degeneracy(format!(
                "row {i} lies in the span of the other rows (residual {residual:.3e})"
            )));
        }
        total += 1.0 / (residual * residual);
    }
    Ok(total)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Residual norm of `v` after projecting out `span(others)`; Gram–Schmidt, two passes.
fn distance_to_span<'a>(v: &[f64], others: impl Iterator<Item = &'a [f64]>) -> f64 {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for o in others {
        let mut w = o.to_vec();
        for _ in 0..2 {
            for u in &q {
                let c = dot(u, &w);
                w.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&w);
        if n > RANK_TOL * norm(o).max(f64::MIN_POSITIVE) {
            w.iter_mut().for_each(|x| *x /= n);
            q.push(w);
        }
    }
    let mut res = v.to_vec();
    for _ in 0..2 {
        for u in &q {
            let c = dot(u, &res);
            res.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }
    norm(&res)
}

/// Base vectors `X_i^{(j)}` plus the noise scale `ρ` of the smoothed model
/// `X̃_i^{(j)} = X_i^{(j)} + G_i^{(j)}`, `G ~ N(0, ρ²/n · I_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedEnsemble {
    pub r: usize,
    pub n: usize,
    #[serde(rename = "l")]
    pub order: usize,
    pub rho: f64,
    /// `base_vectors[i][j]` is `X_i^{(j)}`.
    pub base_vectors: Vec<Vec<Vec<f64>>>,
    pub norm_cap: f64,
}

impl SmoothedEnsemble {
    pub fn new(
        n: usize,
        order: usize,
        rho: f64,
        base_vectors: Vec<Vec<Vec<f64>>>,
        norm_cap: f64,
    ) -> Result<Self> {
        let e = Self {
            r: base_vectors.len(),
            n,
            order,
            rho,
            base_vectors,
            norm_cap,
        };
        e.validate()?;
        Ok(e)
    }

    /// All base vectors zero: pure Gaussian factors.
    pub fn centered(r: usize, n: usize, order: usize, rho: f64) -> Self {
        Self {
            r,
            n,
            order,
            rho,
            base_vectors: vec![vec![vec![0.0; n]; order]; r],
            norm_cap: 0.0,
        }
    }

    /// Base vectors drawn uniformly on the sphere of radius `norm_cap`.
    pub fn random_base<R: Rng + ?Sized>(
        r: usize,
        n: usize,
        order: usize,
        rho: f64,
        norm_cap: f64,
        rng: &mut R,
    ) -> Self {
        let base = (0..r)
            .map(|_| {
                (0..order)
                    .map(|_| {
                        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                        let s = norm_cap / norm(&g);
                        g.into_iter().map(|x| x * s).collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            r,
            n,
            order,
            rho,
            base_vectors: base,
            norm_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.n == 0 || self.order == 0 {
            return validation("ensemble needs r, n and ℓ positive");
        }
        if !(self.rho >= 0.0) || !(self.norm_cap >= 0.0) {
            return validation("ρ and the norm cap must be nonnegative");
        }
        if self.base_vectors.len() != self.r {
            return validation("need one set of base vectors per rank-one term");
        }
        for (i, term) in self.base_vectors.iter().enumerate() {
            if term.len() != self.order || term.iter().any(|v| v.len() != self.n) {
                return validation(format!("base vectors of term {i} have the wrong shape"));
            }
            for v in term {
                if norm(v) > self.norm_cap + 1e-12 {
                    return validation(format!(
                        "base vector of term {i} has norm {} above the cap {}",
                        norm(v),
                        self.norm_cap
                    ));
                }
            }
        }
        Ok(())
    }

    /// One draw of the perturbed factors, as `ℓ` matrices of shape `n×r`.
    pub fn sample_factors<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DMatrix<f64>> {
        let sd = self.rho / (self.n as f64).sqrt();
        (0..self.order)
            .map(|j| {
                DMatrix::from_fn(self.n, self.r, |p, i| {
                    let g: f64 = rng.sample(StandardNormal);
                    self.base_vectors[i][j][p] + sd * g
                })
            })
            .collect()
    }
}

/// The `n^ℓ × r` matrix whose columns are the flattened smoothed simple tensors.
pub fn sample_smoothed<R: Rng + ?Sized>(e: &SmoothedEnsemble, rng: &mut R) -> Result<DMatrix<f64>> {
    e.validate()?;
    khatri_rao(&e.sample_factors(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SminTailReport {
    /// Hits of `s_min(A) ≤ scale·ε` over the ε grid.
    pub curve: SmallBallCurve,
    /// `√(1 − r/n^ℓ)·(cρ)^ℓ`.
    pub threshold_scale: f64,
    /// Tail bound reference per ε; `NaN` outside its validity range.
    pub bound: Vec<f64>,
}

/// Empirical lower tail of `s_min` for the smoothed Khatri–Rao matrix.
///
/// Every draw also checks `1/s_min² ≤ Σ_i 1/‖Π_{V_i^⊥} v_i‖² ≤ r/s_min²`, with the
/// middle term from the Gram–Schmidt route.
pub fn smin_tail_experiment(
    e: &SmoothedEnsemble,
    cfg: &ExperimentConfig,
    bounds: &BoundConfig,
) -> Result<SminTailReport> {
    e.validate()?;
    cfg.validate()?;
    check_smin_hypothesis(e.r, e.n, e.order)?;
    let scale = smin_threshold_scale(e.r, e.n, e.order, e.rho, bounds);
    let grid: Vec<f64> = cfg.epsilon_grid.iter().map(|x| x * scale).collect();
    let counts = count_nested(cfg, &[grid], || {
        |rng: &mut Stream, out: &mut [f64]| {
            let a = sample_smoothed(e, rng)?;
            let s = singular_values(&a);
            let smin = *s.last().unwrap();
            let hs = projection_distance_sum(&a.transpose())?;
            let (lo, hi) = (1.0 / (smin * smin), e.r as f64 / (smin * smin));
            if !(hs >= lo * (1.0 - 1e-8) && hs <= hi * (1.0 + 1e-8)) {
                return Err(Error::Degeneracy(format!(
                    "singular-value sandwich failed: {lo:e} ≤ {hs:e} ≤ {hi:e}"
                )));
            }
            out[0] = smin;
            Ok(())
        }
    })?;
    let bound = cfg
        .epsilon_grid
        .iter()
        .map(|&x| {
            bound_smin_tail(x, e.r, e.n, e.order, e.rho, bounds)
                .map(|b| b.bound)
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(SminTailReport {
        curve: SmallBallCurve::from_counts(
            cfg.epsilon_grid.clone(),
            counts.into_iter().next().unwrap(),
            cfg.trials,
            cfg.confidence,
            Scaling::SminThreshold,
        ),
        threshold_scale: scale,
        bound,
    })
}
