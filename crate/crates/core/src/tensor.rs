//! Simple (rank-one) tensors and their dense flattenings.
//!
//! Flattening order is row-major everywhere in the crate: the last mode has
//! stride 1, so the multi-index `(i_1, …, i_ℓ)` maps to
//! `((i_1·n_2 + i_2)·n_3 + …)·n_ℓ + i_ℓ`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::subspaces::SubspaceBasis;

/// Default cap on the number of entries of a materialized tensor.
pub const DEFAULT_SIZE_CAP: usize = 10_000_000;

const FLAT_MAGIC: &[u8; 4] = b"TBFT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleTensor {
    pub factors: Vec<Vec<f64>>,
}

impl SimpleTensor {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return validation("a simple tensor needs at least one factor");
        }
        if factors.iter().any(|f| f.is_empty()) {
            return validation("factor lengths must be positive");
        }
        Ok(Self { factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn flatten(&self) -> Result<FlatTensor> {
        flatten_with_cap(self, DEFAULT_SIZE_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FlatTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return validation("flat tensor shape must be nonempty with positive extents");
        }
        let len = checked_size(&shape)?;
        if data.len() != len {
            return validation(format!(
                "data has {} entries, shape needs {len}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = checked_size(&shape)?;
        Self::new(shape, vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Linear offset of a zero-based multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        linear_index(&self.shape, index)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// Little-endian binary: magic `TBFT`, `u32` order, `u64` extents, `f64` data.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FLAT_MAGIC)?;
        write_shape(&mut w, &self.shape)?;
        write_f64s(&mut w, &self.data)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, FLAT_MAGIC)?;
        let shape = read_shape(&mut r)?;
        let len = checked_size(&shape)?;
        let data = read_f64s(&mut r, len)?;
        Self::new(shape, data)
    }

    /// CSV with one column per mode (1-based indices) followed by `value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.shape.len()).map(|j| format!("i{j}")).collect();
        writeln!(w, "{},value", header.join(","))?;
        let mut idx = vec![0usize; self.shape.len()];
        for &v in &self.data {
            let cols: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(w, "{},{}", cols.join(","), v)?;
            increment(&mut idx, &self.shape);
        }
        Ok(())
    }
}

pub(crate) fn checked_size(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Resource("tensor size overflows usize".into()))
}

pub(crate) fn linear_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    index.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Advance a row-major multi-index by one.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Materialize `t`, refusing when the ambient size exceeds `cap`.
pub fn flatten_with_cap(t: &SimpleTensor, cap: usize) -> Result<FlatTensor> {
    let shape = t.shape();
    let size = checked_size(&shape)?;
    if size > cap {
        return Err(Error::Resource(format!(
            "flattened size {size} exceeds cap {cap}"
        )));
    }
    let mut data = Vec::with_capacity(size);
    data.push(1.0);
    for f in &t.factors {
        let mut next = Vec::with_capacity(data.len() * f.len());
        for &a in &data {
            next.extend(f.iter().map(|&b| a * b));
        }
        data = next;
    }
    Ok(FlatTensor { shape, data })
}

pub fn flatten(t: &SimpleTensor) -> Result<FlatTensor> {
    t.flatten()
}

fn check_shapes(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return validation(format!("shape mismatch: {a:?} vs {b:?}"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Π_j ⟨a_j, b_j⟩`.
pub fn inner_simple(a: &SimpleTensor, b: &SimpleTensor) -> Result<f64> {
    check_shapes(&a.shape(), &b.shape())?;
    Ok(a.factors
        .iter()
        .zip(&b.factors)
        .map(|(x, y)| dot(x, y))
        .product())
}

/// `Π_j ‖factor_j‖₂`.
pub fn frobenius_norm(t: &SimpleTensor) -> f64 {
    t.factors.iter().map(|f| dot(f, f).sqrt()).product()
}

/// Reusable buffers for repeated mode contractions.
#[derive(Debug, Default, Clone)]
pub struct Contraction {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Contraction {
    /// `⟨⊗ factors, data⟩` by successive contraction of the last remaining mode.
    ///
    /// `data` must hold `Π n_j` entries in row-major order. No shape checks.
    pub fn contract(&mut self, data: &[f64], factors: &[Vec<f64>]) -> f64 {
        let (last, rest) = factors.split_last().expect("order ≥ 1");
        let n = last.len();
        self.a.clear();
        self.a
            .extend(data.chunks_exact(n).map(|row| dot(row, last)));
        for f in rest.iter().rev() {
            let n = f.len();
            self.b.clear();
            self.b.extend(self.a.chunks_exact(n).map(|row| dot(row, f)));
            std::mem::swap(&mut self.a, &mut self.b);
        }
        debug_assert_eq!(self.a.len(), 1);
        self.a[0]
    }
}

/// `⟨⊗ t, f⟩` without materializing `t`.
pub fn inner_flat(t: &SimpleTensor, f: &FlatTensor) -> Result<f64> {
    check_shapes(&t.shape(), &f.shape)?;
    Ok(Contraction::default().contract(&f.data, &t.factors))
}

/// `‖Π_F t‖₂` for the subspace spanned by the rows of `basis`.
pub fn projection_norm(t: &SimpleTensor, basis: &SubspaceBasis) -> Result<f64> {
    check_shapes(&t.shape(), basis.shape())?;
    let mut c = Contraction::default();
    Ok(projection_norm_unchecked(&mut c, &t.factors, basis))
}

pub(crate) fn projection_norm_unchecked(
    c: &mut Contraction,
    factors: &[Vec<f64>],
    basis: &SubspaceBasis,
) -> f64 {
    basis
        .rows()
        .iter()
        .map(|row| {
            let v = c.contract(row, factors);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn write_shape<W: Write>(w: &mut W, shape: &[usize]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &n in shape {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_shape<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let order = u32::from_le_bytes(b4) as usize;
    if order == 0 || order > 64 {
        return validation(format!("implausible tensor order {order}"));
    }
    (0..order)
        .map(|_| read_u64(r).map(|n| n as usize))
        .collect()
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    Ok(u64::from_le_bytes(b8))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut b8 = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b8)?;
        out.push(f64::from_le_bytes(b8));
    }
    Ok(out)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return validation(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        ));
    }
    Ok(())
}
