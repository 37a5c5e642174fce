//! Orthonormal bases of subspaces of the flattened tensor space.
//!
//! Two regimes matter: adversarial coordinate subspaces aligned with the
//! rank-one structure, and Haar-random subspaces.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::tensor::{
    checked_size, expect_magic, linear_index, read_f64s, read_shape, read_u64, write_f64s,
    write_shape, FlatTensor,
};

/// Orthonormality tolerance enforced on every basis.
pub const ORTHO_TOL: f64 = 1e-10;
/// Default pivot tolerance for rank detection in [`orthonormalize`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const BASIS_MAGIC: &[u8; 4] = b"TBSB";

/// `m` orthonormal rows of length `Π shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    shape: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl SubspaceBasis {
    /// Validates row lengths, `m ≤ D` and the Gram residual.
    pub fn new(shape: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = checked_size(&shape)?;
        if shape.is_empty() || d == 0 {
            return validation("basis shape must be nonempty with positive extents");
        }
        if rows.len() > d {
            return validation(format!("m = {} exceeds ambient dimension {d}", rows.len()));
        }
        if let Some(k) = rows.iter().position(|r| r.len() != d) {
            return validation(format!(
                "row {k} has length {}, expected {d}",
                rows[k].len()
            ));
        }
        let res = gram_residual(&rows);
        if res > ORTHO_TOL {
            return validation(format!(
                "rows are not orthonormal (Gram residual {res:.3e})"
            ));
        }
        Ok(Self { shape, rows })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.rows
            .first()
            .map_or_else(|| self.shape.iter().product(), Vec::len)
    }

    /// Apply a fixed permutation to the ambient coordinates of every row.
    pub fn permute_coordinates(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.ambient_dim() {
            return validation("permutation length must equal the ambient dimension");
        }
        let rows = self
            .rows
            .iter()
            .map(|r| perm.iter().map(|&p| r[p]).collect())
            .collect();
        Self::new(self.shape.clone(), rows)
    }

    /// Same layout as [`FlatTensor::write_binary`] with magic `TBSB` and a `u64` row count
    /// after the shape.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BASIS_MAGIC)?;
        write_shape(&mut w, &self.shape)?;
        w.write_all(&(self.m() as u64).to_le_bytes())?;
        for r in &self.rows {
            write_f64s(&mut w, r)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, BASIS_MAGIC)?;
        let shape = read_shape(&mut r)?;
        let d = checked_size(&shape)?;
        let m = read_u64(&mut r)? as usize;
        if m > d {
            return validation(format!("m = {m} exceeds ambient dimension {d}"));
        }
        let rows = (0..m)
            .map(|_| read_f64s(&mut r, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, rows)
    }
}

/// `max |⟨r_k, r_k'⟩ − δ_kk'|`.
pub fn gram_residual(rows: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate().skip(i) {
            let g: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
///
/// A row whose residual after projection falls below `tol` times its own norm
/// is reported as degenerate.
pub fn orthonormalize(shape: Vec<usize>, rows: Vec<Vec<f64>>, tol: f64) -> Result<SubspaceBasis> {
    let d = checked_size(&shape)?;
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for (k, mut v) in rows.into_iter().enumerate() {
        if v.len() != d {
            return validation(format!("row {k} has length {}, expected {d}", v.len()));
        }
        let original = norm(&v);
        for _pass in 0..2 {
            for u in &q {
                let c: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let pivot = norm(&v);
        if !(original > 0.0) || pivot < tol * original {
            return Err(Error::Degeneracy(format!(
                "row {k} is linearly dependent on the previous rows (pivot {pivot:.3e})"
            )));
        }
        v.iter_mut().for_each(|x| *x /= pivot);
        q.push(v);
    }
    SubspaceBasis::new(shape, q)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// First `m` columns of a Haar orthogonal `D×D` matrix.
///
/// Orthogonalizes a `D×m` standard Gaussian matrix; Gram–Schmidt yields the
/// QR factor with positive diagonal in `R`, which makes the law exactly Haar.
pub fn haar_subspace<R: Rng + ?Sized>(
    shape: &[usize],
    m: usize,
    rng: &mut R,
) -> Result<SubspaceBasis> {
    let d = checked_size(shape)?;
    if m > d {
        return validation(format!("m = {m} exceeds ambient dimension {d}"));
    }
    loop {
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        match orthonormalize(shape.to_vec(), cols, DEFAULT_RANK_TOL) {
            Ok(b) => return Ok(b),
            // probability zero; redraw
            Err(Error::Degeneracy(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// `e_1 ⊗ ⋯ ⊗ e_1`, so that `⟨⊗X, f⟩ = X_1^{(1)} ⋯ X_1^{(ℓ)}`.
pub fn diagonal_direction(n: usize, order: usize) -> Result<FlatTensor> {
    if n == 0 || order == 0 {
        return validation("diagonal_direction needs n ≥ 1 and order ≥ 1");
    }
    let mut f = FlatTensor::zeros(vec![n; order])?;
    f.data[0] = 1.0;
    Ok(f)
}

/// `n^{-1/2} Σ_i e_i ⊗ ⋯ ⊗ e_i`, the normalized all-diagonal direction.
pub fn diag_avg_direction(n: usize, order: usize) -> Result<FlatTensor> {
    if n == 0 || order == 0 {
        return validation("diag_avg_direction needs n ≥ 1 and order ≥ 1");
    }
    let shape = vec![n; order];
    let mut f = FlatTensor::zeros(shape.clone())?;
    let w = 1.0 / (n as f64).sqrt();
    for i in 0..n {
        f.data[linear_index(&shape, &vec![i; order])] = w;
    }
    Ok(f)
}

/// Rows `e_k ⊗ e_1 ⊗ ⋯ ⊗ e_1` for `k = 1..m`.
pub fn coordinate_line_subspace(n: usize, order: usize, m: usize) -> Result<SubspaceBasis> {
    if m > n {
        return validation(format!("m = {m} exceeds n = {n}"));
    }
    if n == 0 || order == 0 {
        return validation("coordinate_line_subspace needs n ≥ 1 and order ≥ 1");
    }
    let shape = vec![n; order];
    let d = checked_size(&shape)?;
    let rows = (0..m)
        .map(|k| {
            let mut idx = vec![0; order];
            idx[0] = k;
            let mut r = vec![0.0; d];
            r[linear_index(&shape, &idx)] = 1.0;
            r
        })
        .collect();
    SubspaceBasis::new(shape, rows)
}

/// Empirical Haar moments of the first column of `U ∈ O(D)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HaarMoments {
    pub dim: usize,
    pub draws: usize,
    /// `Ê[U_11²]`, target `1/D`.
    pub second_moment: f64,
    pub second_moment_stderr: f64,
    /// `Ê[U_11 U_21]`, target 0.
    pub cross_moment: f64,
    pub cross_moment_stderr: f64,
}

pub fn haar_moments<R: Rng + ?Sized>(dim: usize, draws: usize, rng: &mut R) -> Result<HaarMoments> {
    if dim < 2 || draws < 2 {
        return validation("haar_moments needs dim ≥ 2 and at least two draws");
    }
    let (mut s, mut s2, mut c, mut c2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let b = haar_subspace(&[dim], 1, rng)?;
        let row = &b.rows()[0];
        let sq = row[0] * row[0];
        let cr = row[0] * row[1];
        s += sq;
        s2 += sq * sq;
        c += cr;
        c2 += cr * cr;
    }
    let n = draws as f64;
    let se = |sum: f64, sumsq: f64| ((sumsq / n - (sum / n).powi(2)) / (n - 1.0)).sqrt();
    Ok(HaarMoments {
        dim,
        draws,
        second_moment: s / n,
        second_moment_stderr: se(s, s2),
        cross_moment: c / n,
        cross_moment_stderr: se(c, c2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::stats::ks_uniform_pvalue;
    use crate::rng::stream;
    use crate::tensor::{inner_flat, projection_norm, SimpleTensor};

    #[test]
    fn haar_is_orthonormal() {
        let mut rng = stream(1);
        for (shape, m) in [(vec![4, 4], 4), (vec![3, 2, 2], 5), (vec![16], 16)] {
            let b = haar_subspace(&shape, m, &mut rng).unwrap();
            assert!(gram_residual(b.rows()) <= 1e-10);
            assert_eq!(b.m(), m);
        }
        assert!(haar_subspace(&[2, 2], 5, &mut rng).is_err());
    }

    #[test]
    fn haar_circle_angle_uniform() {
        let mut rng = stream(2024);
        let n = 100_000;
        let mut u: Vec<f64> = (0..n)
            .map(|_| {
                let b = haar_subspace(&[2], 1, &mut rng).unwrap();
                let r = &b.rows()[0];
                (r[1].atan2(r[0]) + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
            })
            .collect();
        u.sort_by(f64::total_cmp);
        let p = ks_uniform_pvalue(&u);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn haar_moment_identity() {
        let m = haar_moments(16, 100_000, &mut stream(77)).unwrap();
        assert!((m.second_moment - 1.0 / 16.0).abs() < 5e-3, "{m:?}");
        assert!(m.cross_moment.abs() <= 4.0 * m.cross_moment_stderr, "{m:?}");
    }

    #[test]
    fn diagonal_direction_examples() {
        let f = diagonal_direction(2, 2).unwrap();
        assert_eq!(f.data, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.norm(), 1.0);
        let t = SimpleTensor::new(vec![vec![2.0, 5.0], vec![3.0, 7.0]]).unwrap();
        assert_eq!(inner_flat(&t, &f).unwrap(), 6.0);

        let g = diag_avg_direction(3, 3).unwrap();
        assert!((g.norm() - 1.0).abs() < 1e-15);
        assert_eq!(g.get(&[2, 2, 2]), 1.0 / 3f64.sqrt());
    }

    #[test]
    fn line_subspace_examples() {
        let b = coordinate_line_subspace(3, 2, 2).unwrap();
        assert_eq!(b.rows()[0], vec![1.0, 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(b.rows()[1], vec![0.0, 0., 0., 1., 0., 0., 0., 0., 0.]);
        assert!(coordinate_line_subspace(3, 2, 4).is_err());

        let x = [0.5, -1.5, 2.0];
        let y = [1.2, 0.3, -0.7];
        let t = SimpleTensor::new(vec![x.to_vec(), y.to_vec()]).unwrap();
        let p = projection_norm(&t, &b).unwrap();
        assert!((p * p - (x[0] * x[0] + x[1] * x[1]) * y[0] * y[0]).abs() < 1e-14);

        let full = coordinate_line_subspace(3, 2, 3).unwrap();
        let p = projection_norm(&t, &full).unwrap();
        let nx: f64 = x.iter().map(|v| v * v).sum();
        assert!((p * p - nx * y[0] * y[0]).abs() < 1e-14);
    }

    #[test]
    fn orthonormalize_examples() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = orthonormalize(vec![2], rows.clone(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(b.rows(), &rows[..]);

        let b = orthonormalize(
            vec![2],
            vec![vec![1.0, 1.0], vec![1.0, 0.0]],
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert!(gram_residual(b.rows()) <= 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.rows()[0][0] - s).abs() < 1e-15 && (b.rows()[1][0] - s).abs() < 1e-15);
        assert!((b.rows()[1][1] + s).abs() < 1e-15);

        let dup = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        match orthonormalize(vec![3], dup, DEFAULT_RANK_TOL) {
            Err(Error::Degeneracy(msg)) => assert!(msg.contains("row 1")),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_rows_rejected() {
        assert!(SubspaceBasis::new(vec![2], vec![vec![1.0, 1.0]]).is_err());
        assert!(SubspaceBasis::new(vec![2], vec![vec![1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn basis_binary_roundtrip() {
        let b = haar_subspace(&[2, 3], 3, &mut stream(4)).unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TBSB");
        assert_eq!(SubspaceBasis::read_binary(&buf[..]).unwrap(), b);
    }

    #[test]
    fn permutation_keeps_orthonormality() {
        let b = haar_subspace(&[2, 2], 2, &mut stream(8)).unwrap();
        let p = b.permute_coordinates(&[3, 1, 0, 2]).unwrap();
        assert!(gram_residual(p.rows()) < 1e-10);
    }
}
