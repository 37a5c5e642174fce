//! Rank-one decompositions of order-3 tensors by simultaneous diagonalization,
//! folding of higher orders down to order 3, and component matching.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{validation, Error, Result};
use crate::khatri_rao::{khatri_rao, smallest_singular_value, SmoothedEnsemble};
use crate::tensor::{checked_size, FlatTensor, SimpleTensor};

/// Weighted sum `Σ_i w_i ⊗_j x_i^{(j)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Terms {
    pub weights: Vec<f64>,
    /// `factors[i][j]` is the mode-`j` factor of term `i`.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl Rank1Terms {
    pub fn new(weights: Vec<f64>, factors: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let t = Self { weights, factors };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.factors.len() || self.factors.is_empty() {
            return validation("need one weight per term and at least one term");
        }
        let shape = self.shape();
        if shape.is_empty() || shape.contains(&0) {
            return validation("factors must be nonempty");
        }
        for (i, term) in self.factors.iter().enumerate() {
            if term.len() != shape.len() || term.iter().zip(&shape).any(|(v, &n)| v.len() != n) {
                return validation(format!("term {i} does not match the shape {shape:?}"));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.first().map_or(0, Vec::len)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors
            .first()
            .map(|t| t.iter().map(Vec::len).collect())
            .unwrap_or_default()
    }

    /// Unit factors, signs folded into the weights, and the first nonzero entry
    /// of every factor positive.
    pub fn canonicalize(&mut self) -> Result<()> {
        for (w, term) in self.weights.iter_mut().zip(self.factors.iter_mut()) {
            for v in term.iter_mut() {
                let n = norm(v);
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::Degeneracy("zero or non-finite factor".into()));
                }
                let pivot = v
                    .iter()
                    .copied()
                    .find(|x| x.abs() > 1e-12 * n)
                    .unwrap_or(0.0);
                let s = if pivot < 0.0 { -1.0 } else { 1.0 };
                v.iter_mut().for_each(|x| *x *= s / n);
                *w *= s * n;
            }
        }
        Ok(())
    }

    pub fn canonical(mut self) -> Result<Self> {
        self.canonicalize()?;
        Ok(self)
    }

    pub fn to_dense(&self) -> Result<FlatTensor> {
        let shape = self.shape();
        let mut data = vec![0.0; checked_size(&shape)?];
        for (w, term) in self.weights.iter().zip(&self.factors) {
            let t = SimpleTensor::new(term.clone())?.flatten()?;
            data.iter_mut().zip(&t.data).for_each(|(d, x)| *d += w * x);
        }
        FlatTensor::new(shape, data)
    }

    /// Factor matrix of mode `j`, one column per term.
    pub fn factor_matrix(&self, j: usize) -> DMatrix<f64> {
        let n = self.factors[0][j].len();
        DMatrix::from_fn(n, self.rank(), |p, i| self.factors[i][j][p])
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `M[p, q] = Σ_k T[p, q, k]·a_k` for an order-3 tensor.
pub fn contract_mode3(t: &FlatTensor, a: &[f64]) -> Result<DMatrix<f64>> {
    let [n1, n2, n3] = order3_shape(t)?;
    if a.len() != n3 {
        return validation(format!("probe has length {}, mode 3 has {n3}", a.len()));
    }
    Ok(DMatrix::from_fn(n1, n2, |p, q| {
        let base = (p * n2 + q) * n3;
        dot(&t.data[base..base + n3], a)
    }))
}

fn order3_shape(t: &FlatTensor) -> Result<[usize; 3]> {
    match t.shape[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => validation(format!(
            "expected an order-3 tensor, got shape {:?}",
            t.shape
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimdiagOptions {
    /// Relative singular-value floor for rank decisions and eigenvalue separation.
    pub tol: f64,
    /// Fresh probe pairs tried before giving up.
    pub max_attempts: usize,
}

impl Default for SimdiagOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_attempts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub terms: Rank1Terms,
    /// `‖T − Σ_i w_i ⊗ x_i‖ / ‖T‖`.
    pub residual: f64,
    pub attempts: usize,
}

/// Mode-`k` unfolding of a row-major tensor: `n_k × (D/n_k)`.
fn unfold(data: &[f64], shape: &[usize], k: usize) -> DMatrix<f64> {
    let nk = shape[k];
    let inner: usize = shape[k + 1..].iter().product();
    let outer: usize = shape[..k].iter().product();
    DMatrix::from_fn(nk, outer * inner, |p, c| {
        let (o, i) = (c / inner, c % inner);
        data[(o * nk + p) * inner + i]
    })
}

/// Orthonormal basis of the leading `r`-dimensional column space, from QR with
/// column pivoting; fails if the numerical rank is below `r`.
fn column_space(m: DMatrix<f64>, r: usize, tol: f64) -> Result<DMatrix<f64>> {
    let qr = m.col_piv_qr();
    let rr = qr.r();
    let k = rr.nrows().min(rr.ncols());
    if k < r || !(rr[(r - 1, r - 1)].abs() > tol * rr[(0, 0)].abs()) {
        return Err(Error::Degeneracy(format!(
            "unfolding has numerical rank below {r}"
        )));
    }
    Ok(qr.q().columns(0, r).into_owned())
}

/// Unit eigenvector of `m` for the (simple, real) eigenvalue `lambda`, by
/// inverse iteration.
fn eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let shift = lambda + 1e-13 * scale;
    let lu = (m - DMatrix::identity(n, n) * shift).lu();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..4 {
        let y = lu.solve(&x).ok_or_else(|| {
            Error::Degeneracy("inverse iteration hit an exact singularity".into())
        })?;
        let nrm = y.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Degeneracy("inverse iteration diverged".into()));
        }
        x = y / nrm;
    }
    Ok(x)
}

/// Leading left singular vector by power iteration on `M Mᵀ`.
fn leading_left_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let best = (0..m.ncols())
        .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
        .unwrap_or(0);
    let mut x = m.column(best).into_owned();
    x /= x.norm();
    for _ in 0..200 {
        let mut y = m * (m.transpose() * &x);
        let nrm = y.norm();
        if !(nrm > 0.0) {
            break;
        }
        y /= nrm;
        let done = (&y - &x).norm() < 1e-15;
        x = y;
        if done {
            break;
        }
    }
    x
}

/// Recovers `T = Σ_{i≤r} w_i a_i ⊗ b_i ⊗ c_i` from random mode-3 contractions.
///
/// With `P`, `Q` the leading left singular vectors of the mode-1 and mode-2
/// unfoldings, `A = Pᵀ M_a Q` and `B = Pᵀ M_b Q` give `A B⁻¹ = Ũ D Ũ⁻¹` and
/// `Aᵀ B⁻ᵀ = Ṽ D Ṽ⁻¹` with `D = diag(⟨c_i, a⟩/⟨c_i, b⟩)`. The third factors
/// come from least squares against the mode-3 unfolding.
pub fn simultaneous_diagonalize<R: Rng + ?Sized>(
    t: &FlatTensor,
    r: usize,
    rng: &mut R,
    opts: &SimdiagOptions,
) -> Result<Decomposition> {
    let [n1, n2, n3] = order3_shape(t)?;
    if r == 0 {
        return validation("rank must be positive");
    }
    if r > n1.min(n2) {
        return Err(Error::UnsupportedRank(format!(
            "rank {r} exceeds min(n1, n2) = {}",
            n1.min(n2)
        )));
    }
    let tnorm = t.norm();
    if !(tnorm > 0.0) {
        return Err(Error::Degeneracy("tensor is zero".into()));
    }
    let p = column_space(unfold(&t.data, &t.shape, 0), r, opts.tol)?;
    let q = column_space(unfold(&t.data, &t.shape, 1), r, opts.tol)?;
    let attempts = opts.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let a: Vec<f64> = (0..n3).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n3).map(|_| rng.sample(StandardNormal)).collect();
        let ra = p.transpose() * contract_mode3(t, &a)? * &q;
        let rb = p.transpose() * contract_mode3(t, &b)? * &q;
        let sb = rb.clone().svd(false, false).singular_values;
        if !(sb.min() > opts.tol * sb.max()) {
            last = "contraction with the second probe is singular".into();
            continue;
        }
        let rb_inv = rb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degeneracy("singular probe".into()))?;
        let x = &ra * &rb_inv;
        let y = ra.transpose() * rb_inv.transpose();
        let eig = x.complex_eigenvalues();
        let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if eig.iter().any(|z| z.im.abs() > opts.tol.sqrt() * scale) {
            last = "complex eigenvalues".into();
            continue;
        }
        let mut lambda: Vec<f64> = eig.iter().map(|z| z.re).collect();
        lambda.sort_by(f64::total_cmp);
        let gap = lambda
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if r > 1 && !(gap > opts.tol.sqrt() * scale) {
            last = format!("eigenvalue collision (gap {gap:.3e})");
            continue;
        }
        let u = DMatrix::from_columns(
            &lambda
                .iter()
                .map(|&l| Ok(&p * eigenvector(&x, l)?))
                .collect::<Result<Vec<_>>>()?,
        );
        let v = DMatrix::from_columns(
            &lambda
                .iter()
                .map(|&l| Ok(&q * eigenvector(&y, l)?))
                .collect::<Result<Vec<_>>>()?,
        );
        let k = khatri_rao(&[u.clone(), v.clone()])?;
        let t3 = DMatrix::from_row_slice(n1 * n2, n3, &t.data);
        let qr = k.qr();
        let c = qr
            .r()
            .solve_upper_triangular(&(qr.q().transpose() * t3))
            .ok_or_else(|| Error::Degeneracy("mode-3 least squares is singular".into()))?;
        let terms = Rank1Terms::new(
            vec![1.0; r],
            (0..r)
                .map(|i| {
                    vec![
                        u.column(i).iter().copied().collect(),
                        v.column(i).iter().copied().collect(),
                        c.row(i).iter().copied().collect(),
                    ]
                })
                .collect(),
        )?
        .canonical()?;
        let dense = terms.to_dense()?;
        let residual = dense
            .data
            .iter()
            .zip(&t.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / tnorm;
        return Ok(Decomposition {
            terms,
            residual,
            attempts: attempt,
        });
    }
    Err(Error::Degeneracy(format!(
        "simultaneous diagonalization failed after {attempts} probe pairs: {last}"
    )))
}

/// How the modes of an order-`ℓ` tensor are grouped into three.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub shape: Vec<usize>,
    /// Number of modes in the first and second groups; the third holds the last mode.
    pub first: usize,
    pub second: usize,
}

impl Grouping {
    /// Groups of `⌊(ℓ−1)/2⌋`, `ℓ−1−⌊(ℓ−1)/2⌋` and `1` modes.
    pub fn for_shape(shape: &[usize]) -> Result<Self> {
        let l = shape.len();
        if l < 3 {
            return validation(format!("folding needs order at least 3, got {l}"));
        }
        let first = (l - 1) / 2;
        Ok(Self {
            shape: shape.to_vec(),
            first,
            second: l - 1 - first,
        })
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        let a = self.first;
        let b = a + self.second;
        [0..a, a..b, b..self.shape.len()]
    }

    pub fn folded_shape(&self) -> [usize; 3] {
        self.ranges().map(|g| self.shape[g].iter().product())
    }

    /// Dense reshape; row-major data is unchanged.
    pub fn fold_dense(&self, t: &FlatTensor) -> Result<FlatTensor> {
        if t.shape != self.shape {
            return validation(format!(
                "tensor shape {:?} differs from {:?}",
                t.shape, self.shape
            ));
        }
        FlatTensor::new(self.folded_shape().to_vec(), t.data.clone())
    }

    pub fn fold(&self, terms: &Rank1Terms) -> Result<Rank1Terms> {
        if terms.shape() != self.shape {
            return validation("terms do not match the grouping shape");
        }
        let factors = terms
            .factors
            .iter()
            .map(|term| {
                self.ranges()
                    .into_iter()
                    .map(|g| Ok(SimpleTensor::new(term[g].to_vec())?.flatten()?.data))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Rank1Terms::new(terms.weights.clone(), factors)
    }

    /// Splits each grouped factor back into per-mode factors via best rank-one fits.
    pub fn unfold(&self, folded: &Rank1Terms) -> Result<Rank1Terms> {
        if folded.shape() != self.folded_shape() {
            return validation("terms do not match the folded shape");
        }
        let mut weights = Vec::with_capacity(folded.rank());
        let mut factors = Vec::with_capacity(folded.rank());
        for (w, term) in folded.weights.iter().zip(&folded.factors) {
            let mut scale = *w;
            let mut modes = Vec::with_capacity(self.shape.len());
            for (g, v) in self.ranges().into_iter().zip(term) {
                let (s, parts) = rank1_factorize(v, &self.shape[g])?;
                scale *= s;
                modes.extend(parts);
            }
            weights.push(scale);
            factors.push(modes);
        }
        Rank1Terms::new(weights, factors)?.canonical()
    }
}

/// Best rank-one fit `v ≈ s·⊗_k u_k` with unit `u_k` from leading singular vectors.
pub fn rank1_factorize(v: &[f64], dims: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if checked_size(dims)? != v.len() {
        return validation("vector length does not match the mode sizes");
    }
    let parts: Vec<Vec<f64>> = (0..dims.len())
        .map(|k| {
            if dims.len() == 1 {
                let n = norm(v);
                return v.iter().map(|x| x / n).collect();
            }
            leading_left_vector(&unfold(v, dims, k))
                .iter()
                .copied()
                .collect()
        })
        .collect();
    if parts.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Degeneracy("cannot factor a zero vector".into()));
    }
    let flat = SimpleTensor::new(parts.clone())?.flatten()?;
    Ok((dot(&flat.data, v), parts))
}

/// Accuracy of a recovered decomposition against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rank: usize,
    pub order: usize,
    /// `assignment[i]` is the estimated term matched to true term `i`.
    pub assignment: Vec<usize>,
    /// `factor_errors[i][j] = ‖x_i^{(j)} − σ·x̂^{(j)}‖` for unit factors and the best sign σ.
    pub factor_errors: Vec<Vec<f64>>,
    /// `|w_i − ŵ_i·Πσ| / |w_i|`.
    pub weight_errors: Vec<f64>,
    pub max_factor_error: f64,
    pub max_weight_error: f64,
    pub residual: Option<f64>,
    /// Smallest singular values of the three grouped Khatri–Rao factor matrices.
    pub grouped_smin: Option<[f64; 3]>,
}

impl RecoveryReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "component,matched,mode,factor_error,weight_error")?;
        for (i, errs) in self.factor_errors.iter().enumerate() {
            for (j, e) in errs.iter().enumerate() {
                writeln!(
                    w,
                    "{i},{},{j},{e:e},{:e}",
                    self.assignment[i], self.weight_errors[i]
                )?;
            }
        }
        Ok(())
    }
}

/// Minimum-cost perfect matching on a square cost matrix.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    // 1-based potentials; p[j] is the row matched to column j
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Pairs estimated terms with true terms by maximizing `Π_j |cos∠(x_i^{(j)}, x̂_k^{(j)})|`.
pub fn match_components(truth: &Rank1Terms, estimate: &Rank1Terms) -> Result<RecoveryReport> {
    truth.validate()?;
    estimate.validate()?;
    if truth.rank() != estimate.rank() || truth.shape() != estimate.shape() {
        return validation(format!(
            "cannot match rank {} shape {:?} against rank {} shape {:?}",
            truth.rank(),
            truth.shape(),
            estimate.rank(),
            estimate.shape()
        ));
    }
    let t = truth.clone().canonical()?;
    let e = estimate.clone().canonical()?;
    let r = t.rank();
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..r)
                .map(|k| {
                    let score: f64 = t.factors[i]
                        .iter()
                        .zip(&e.factors[k])
                        .map(|(a, b)| dot(a, b).abs())
                        .product();
                    1.0 - score
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    let mut factor_errors = Vec::with_capacity(r);
    let mut weight_errors = Vec::with_capacity(r);
    for (i, &k) in assignment.iter().enumerate() {
        let mut sign = 1.0;
        let errs = t.factors[i]
            .iter()
            .zip(&e.factors[k])
            .map(|(a, b)| {
                let s = if dot(a, b) < 0.0 { -1.0 } else { 1.0 };
                sign *= s;
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - s * y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        factor_errors.push(errs);
        weight_errors.push((t.weights[i] - sign * e.weights[k]).abs() / t.weights[i].abs());
    }
    let max = |xs: &mut dyn Iterator<Item = f64>| xs.fold(0.0, f64::max);
    Ok(RecoveryReport {
        rank: r,
        order: t.order(),
        assignment,
        max_factor_error: max(&mut factor_errors.iter().flatten().copied()),
        max_weight_error: max(&mut weight_errors.iter().copied()),
        factor_errors,
        weight_errors,
        residual: None,
        grouped_smin: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedRecovery {
    pub truth: Rank1Terms,
    pub estimate: Rank1Terms,
    pub report: RecoveryReport,
}

/// Draws a smoothed rank-`r` order-`ℓ` tensor, adds i.i.d. `N(0, noise²)` entry
/// noise, folds to order 3, decomposes and matches against the drawn factors.
pub fn decompose_smoothed<R: Rng + ?Sized>(
    e: &SmoothedEnsemble,
    noise: f64,
    rng: &mut R,
    opts: &SimdiagOptions,
) -> Result<SmoothedRecovery> {
    e.validate()?;
    if !(noise >= 0.0) || !noise.is_finite() {
        return validation("noise scale must be finite and nonnegative");
    }
    let shape = vec![e.n; e.order];
    let grouping = Grouping::for_shape(&shape)?;
    let limit = (e.n as f64).powi(grouping.first as i32);
    if e.r as f64 > limit {
        return Err(Error::UnsupportedRank(format!(
            "rank {} exceeds n^⌊(ℓ−1)/2⌋ = {limit}",
            e.r
        )));
    }
    let mats = e.sample_factors(rng);
    let truth = Rank1Terms::new(
        vec![1.0; e.r],
        (0..e.r)
            .map(|i| {
                mats.iter()
                    .map(|m| m.column(i).iter().copied().collect())
                    .collect()
            })
            .collect(),
    )?
    .canonical()?;
    let mut dense = truth.to_dense()?;
    if noise > 0.0 {
        for x in dense.data.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x += noise * g;
        }
    }
    let folded_truth = grouping.fold(&truth)?;
    let grouped_smin = [0, 1, 2].map(|j| smallest_singular_value(&folded_truth.factor_matrix(j)));
    let dec = simultaneous_diagonalize(&grouping.fold_dense(&dense)?, e.r, rng, opts)?;
    let estimate = grouping.unfold(&dec.terms)?;
    let mut report = match_components(&truth, &estimate)?;
    report.residual = Some(dec.residual);
    report.grouped_smin = Some(grouped_smin);
    Ok(SmoothedRecovery {
        truth,
        estimate,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_terms(r: usize, shape: &[usize], seed: u64) -> Rank1Terms {
        let mut rng = stream(seed);
        let factors = (0..r)
            .map(|_| {
                shape
                    .iter()
                    .map(|&n| (0..n).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        let weights = (0..r).map(|i| 1.0 + i as f64).collect();
        Rank1Terms::new(weights, factors)
            .unwrap()
            .canonical()
            .unwrap()
    }

    #[test]
    fn contraction_example() {
        // T = e1⊗e1⊗e1 + 2·e2⊗e2⊗e2 in R^{2×2×2}
        let terms = Rank1Terms::new(
            vec![1.0, 2.0],
            vec![vec![vec![1.0, 0.0]; 3], vec![vec![0.0, 1.0]; 3]],
        )
        .unwrap();
        let t = terms.to_dense().unwrap();
        let m = contract_mode3(&t, &[1.0, 1.0]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert!(contract_mode3(&t, &[1.0]).is_err());
    }

    #[test]
    fn recovers_diagonal_tensor() {
        let truth = Rank1Terms::new(
            vec![1.0, 2.0],
            vec![vec![vec![1.0, 0.0]; 3], vec![vec![0.0, 1.0]; 3]],
        )
        .unwrap();
        let dec = simultaneous_diagonalize(
            &truth.to_dense().unwrap(),
            2,
            &mut stream(1),
            &SimdiagOptions::default(),
        )
        .unwrap();
        let rep = match_components(&truth, &dec.terms).unwrap();
        assert!(rep.max_factor_error < 1e-12, "{rep:?}");
        assert!(rep.max_weight_error < 1e-12);
        assert!(dec.residual < 1e-12);
    }

    #[test]
    fn recovers_random_order3() {
        let truth = random_terms(6, &[10, 10, 10], 2);
        let dec = simultaneous_diagonalize(
            &truth.to_dense().unwrap(),
            6,
            &mut stream(3),
            &SimdiagOptions::default(),
        )
        .unwrap();
        let rep = match_components(&truth, &dec.terms).unwrap();
        assert!(rep.max_factor_error < 1e-8, "{}", rep.max_factor_error);
        assert!(rep.max_weight_error < 1e-8);
    }

    #[test]
    fn rank_above_dimension_is_unsupported() {
        let truth = random_terms(3, &[2, 2, 2], 4);
        let res = simultaneous_diagonalize(
            &truth.to_dense().unwrap(),
            3,
            &mut stream(5),
            &SimdiagOptions::default(),
        );
        assert!(matches!(res, Err(Error::UnsupportedRank(_))));
    }

    #[test]
    fn collinear_third_factors_never_separate() {
        // identical mode-3 factors give coincident eigenvalues on every probe
        let mut truth = random_terms(2, &[3, 3, 3], 6);
        truth.factors[1][2] = truth.factors[0][2].clone();
        let res = simultaneous_diagonalize(
            &truth.to_dense().unwrap(),
            2,
            &mut stream(7),
            &SimdiagOptions::default(),
        );
        assert!(matches!(res, Err(Error::Degeneracy(_))), "{res:?}");
    }

    #[test]
    fn grouping_sizes() {
        let g = Grouping::for_shape(&[4; 4]).unwrap();
        assert_eq!((g.first, g.second), (1, 2));
        assert_eq!(g.folded_shape(), [4, 16, 4]);
        let g = Grouping::for_shape(&[3; 5]).unwrap();
        assert_eq!((g.first, g.second), (2, 2));
        assert_eq!(g.folded_shape(), [9, 9, 3]);
        assert!(Grouping::for_shape(&[3, 3]).is_err());
    }

    #[test]
    fn fold_matches_dense_reshape() {
        let terms = random_terms(3, &[2, 3, 2, 2], 8);
        let g = Grouping::for_shape(&terms.shape()).unwrap();
        let a = g.fold(&terms).unwrap().to_dense().unwrap();
        let b = g.fold_dense(&terms.to_dense().unwrap()).unwrap();
        assert_eq!(a.shape, b.shape);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_order4_by_folding() {
        let e = SmoothedEnsemble::centered(3, 4, 4, 1.0);
        let rec = decompose_smoothed(&e, 0.0, &mut stream(9), &SimdiagOptions::default()).unwrap();
        assert!(rec.report.max_factor_error < 1e-8, "{:?}", rec.report);
        assert!(rec.report.grouped_smin.unwrap().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn smoothed_rank_limit() {
        let e = SmoothedEnsemble::centered(5, 4, 4, 1.0);
        let res = decompose_smoothed(&e, 0.0, &mut stream(10), &SimdiagOptions::default());
        assert!(matches!(res, Err(Error::UnsupportedRank(_))));
    }

    #[test]
    fn matching_recovers_permutation_and_sign() {
        let truth = random_terms(4, &[3, 4, 5], 11);
        let mut est = truth.clone();
        est.weights.reverse();
        est.factors.reverse();
        for v in est.factors[0].iter_mut() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        est.weights[0] = -est.weights[0];
        let rep = match_components(&truth, &est).unwrap();
        assert_eq!(rep.assignment, vec![3, 2, 1, 0]);
        assert!(rep.max_factor_error < 1e-14 && rep.max_weight_error < 1e-14);
    }

    #[test]
    fn matching_small_perturbation() {
        let truth = random_terms(3, &[5, 5, 5], 12);
        let mut est = truth.clone();
        est.factors[1][0][0] += 1e-4;
        let rep = match_components(&truth, &est).unwrap();
        assert!(
            rep.max_factor_error >= 5e-5 && rep.max_factor_error <= 5e-4,
            "{}",
            rep.max_factor_error
        );
    }

    #[test]
    fn matching_rejects_rank_mismatch() {
        let a = random_terms(3, &[3, 3, 3], 13);
        let b = random_terms(2, &[3, 3, 3], 14);
        assert!(matches!(
            match_components(&a, &b),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        assert_eq!(hungarian(&cost), vec![1, 0, 2]);
    }

    #[test]
    fn report_csv_and_json() {
        let truth = random_terms(2, &[3, 3, 3], 15);
        let rep = match_components(&truth, &truth).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 2 * 3);
        let back: RecoveryReport =
            serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
        let terms: Rank1Terms =
            serde_json::from_str(&serde_json::to_string(&truth).unwrap()).unwrap();
        assert_eq!(terms, truth);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fold_unfold_round_trip(seed in 0u64..10_000, l in 3usize..6, r in 1usize..4) {
            let truth = random_terms(r, &vec![3; l], seed);
            let g = Grouping::for_shape(&truth.shape()).unwrap();
            let back = g.unfold(&g.fold(&truth).unwrap()).unwrap();
            for (a, b) in truth.factors.iter().flatten().flatten().zip(back.factors.iter().flatten().flatten()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in truth.weights.iter().zip(&back.weights) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }

        #[test]
        fn canonical_form_is_idempotent(seed in 0u64..10_000) {
            let t = random_terms(3, &[2, 3, 4], seed);
            let again = t.clone().canonical().unwrap();
            prop_assert_eq!(t.shape(), again.shape());
            for (a, b) in t.factors.iter().flatten().flatten().zip(again.factors.iter().flatten().flatten()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}
