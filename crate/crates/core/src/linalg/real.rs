use std::ops::{Add, Index, IndexMut, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::matrix::{CMatrix, C64};
use super::{herm_eigen, LinalgError, Result};

/// Dense real matrix, used for Fisher information and covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Self { rows: n, cols: m, data: rows.concat() }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn symmetric_residual(&self) -> f64 {
        (self - &self.transpose()).max_abs()
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum()).collect()
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows);
        Self::from_fn(self.rows, rhs.cols, |i, j| (0..self.cols).map(|k| self[(i, k)] * rhs[(k, j)]).sum())
    }

    pub fn to_complex(&self) -> CMatrix {
        CMatrix::from_fn(self.rows, self.cols, |i, j| C64::new(self[(i, j)], 0.0))
    }

    /// Eigenvalues ascending and real unit eigenvectors (one per entry of
    /// the returned vector) of the symmetric part. Vectors inside a
    /// degenerate eigenspace are not guaranteed mutually orthogonal.
    pub fn sym_eigen(&self) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let sym = (self + &self.transpose()).scale(0.5);
        let e = herm_eigen(&sym.to_complex())?;
        let vecs = (0..self.rows)
            .map(|k| {
                // Real symmetric input has real eigenvectors up to a phase.
                let col = e.vectors.col(k);
                let pivot = col.iter().copied().fold(C64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
                let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
                let re: Vec<f64> = col.iter().map(|z| (z * phase).re).collect();
                let norm = re.iter().map(|x| x * x).sum::<f64>().sqrt();
                re.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Ok((e.values, vecs))
    }

    /// Inverse of a symmetric positive definite matrix with its condition
    /// number. Fails with `Singular` if the smallest eigenvalue is not
    /// positive.
    pub fn spd_inverse(&self) -> Result<(Self, f64)> {
        if self.rows != self.cols {
            return Err(LinalgError::DimensionMismatch(format!("inverse of {}x{}", self.rows, self.cols)));
        }
        let sym = (self + &self.transpose()).scale(0.5);
        let e = herm_eigen(&sym.to_complex())?;
        let vals = e.values;
        let min = vals.first().copied().unwrap_or(0.0);
        let max = vals.last().copied().unwrap_or(0.0);
        if !(min > 0.0) {
            return Err(LinalgError::Singular);
        }
        let n = self.rows;
        let v = &e.vectors;
        let inv = Self::from_fn(n, n, |i, j| (0..n).map(|k| (v[(i, k)] * v[(j, k)].conj()).re / vals[k]).sum());
        Ok((inv, max / min))
    }
}

impl Index<(usize, usize)> for RMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &RMatrix {
    type Output = RMatrix;
    fn add(self, rhs: &RMatrix) -> RMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        RMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &RMatrix {
    type Output = RMatrix;
    fn sub(self, rhs: &RMatrix) -> RMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        RMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Serialize for RMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(RMatrix::from_rows(&rows))
    }
}
