//! Dense row-major matrices and the few kernels the estimators need.

use crate::error::{Error, Result};
use crate::numerics::SeededStream;
use rayon::prelude::*;

/// Work (in multiply-adds) above which products are split across rayon workers.
const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
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

    /// Entries i.i.d. N(0, stddev²), drawn in row-major order.
    pub fn gaussian(rows: usize, cols: usize, stddev: f64, stream: &mut SeededStream) -> Self {
        let mut m = Self::zeros(rows, cols);
        stream.fill_gaussian(&mut m.data, stddev);
        m
    }

    /// Entries i.i.d. uniform on [0, 1).
    pub fn uniform(rows: usize, cols: usize, stream: &mut SeededStream) -> Self {
        Self::from_fn(rows, cols, |_, _| stream.uniform())
    }

    /// Outer product u vᵀ.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// self ← self + c·other.
    pub fn axpy(&mut self, c: f64, other: &Mat) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "axpy of {}x{} into {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += c * b);
        Ok(())
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// X·Y.
pub fn matmul(x: &Mat, y: &Mat) -> Result<Mat> {
    if x.cols != y.rows {
        return Err(Error::Dimension(format!(
            "matmul {}x{} by {}x{}",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    let n = y.cols;
    let mut out = Mat::zeros(x.rows, n);
    if n == 0 {
        return Ok(out);
    }
    let kernel = |(i, out_row): (usize, &mut [f64])| {
        for (l, &a) in x.row(i).iter().enumerate() {
            if a != 0.0 {
                for (o, b) in out_row.iter_mut().zip(y.row(l)) {
                    *o += a * b;
                }
            }
        }
    };
    if x.rows * x.cols * n >= PAR_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(kernel);
    }
    Ok(out)
}

/// Xᵀ·Y without forming Xᵀ.
pub fn matmul_tn(x: &Mat, y: &Mat) -> Result<Mat> {
    if x.rows != y.rows {
        return Err(Error::Dimension(format!(
            "matmul_tn {}x{}ᵀ by {}x{}",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    let n = y.cols;
    let mut out = Mat::zeros(x.cols, n);
    if n == 0 {
        return Ok(out);
    }
    let kernel = |(i, out_row): (usize, &mut [f64])| {
        for t in 0..x.rows {
            let a = x.data[t * x.cols + i];
            if a != 0.0 {
                for (o, b) in out_row.iter_mut().zip(y.row(t)) {
                    *o += a * b;
                }
            }
        }
    };
    if x.rows * x.cols * n >= PAR_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(kernel);
    }
    Ok(out)
}

/// X·Yᵀ without forming Yᵀ.
pub fn matmul_nt(x: &Mat, y: &Mat) -> Result<Mat> {
    if x.cols != y.cols {
        return Err(Error::Dimension(format!(
            "matmul_nt {}x{} by {}x{}ᵀ",
            x.rows, x.cols, y.rows, y.cols
        )));
    }
    let n = y.rows;
    let mut out = Mat::zeros(x.rows, n);
    if n == 0 {
        return Ok(out);
    }
    let kernel = |(i, out_row): (usize, &mut [f64])| {
        let xi = x.row(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = xi.iter().zip(y.row(j)).map(|(a, b)| a * b).sum();
        }
    };
    if x.rows * x.cols * n >= PAR_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(kernel);
    }
    Ok(out)
}

/// Σ x²ᵢⱼ.
pub fn frob_norm_sq(x: &Mat) -> f64 {
    x.data.iter().map(|v| v * v).sum()
}

/// Orthonormal basis of Col(X) by Householder reflections.
///
/// Columns are processed left to right; a column whose component outside the span of
/// the accepted ones has norm below 1e-12 × the largest column norm is dropped, so the
/// result has as many columns as the numerical rank.
pub fn qr_orthonormal_basis(x: &Mat) -> Mat {
    let m = x.rows;
    let scale = (0..x.cols)
        .map(|j| (0..m).map(|i| x.get(i, j).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    // Householder vectors, each stored over rows r..m for its pivot r.
    let mut reflectors: Vec<Vec<f64>> = Vec::new();
    let mut col = vec![0.0; m];
    for j in 0..x.cols {
        let r = reflectors.len();
        if r == m || scale == 0.0 {
            break;
        }
        for (i, c) in col.iter_mut().enumerate() {
            *c = x.get(i, j);
        }
        for (q, v) in reflectors.iter().enumerate() {
            apply_reflector(v, &mut col[q..]);
        }
        let tail = &col[r..];
        let norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol {
            continue;
        }
        let alpha = if tail[0] >= 0.0 { -norm } else { norm };
        let mut v = tail.to_vec();
        v[0] -= alpha;
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= vn);
        reflectors.push(v);
    }
    let rank = reflectors.len();
    // Q = H_0 H_1 … H_{r−1} applied to the first `rank` unit vectors.
    let mut q = Mat::zeros(m, rank);
    let mut e = vec![0.0; m];
    for c in 0..rank {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        for (p, v) in reflectors.iter().enumerate().rev() {
            apply_reflector(v, &mut e[p..]);
        }
        for (i, &val) in e.iter().enumerate() {
            q.set(i, c, val);
        }
    }
    q
}

/// y ← (I − 2vvᵀ)y for unit v.
fn apply_reflector(v: &[f64], y: &mut [f64]) {
    let dot: f64 = v.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    for (yi, vi) in y.iter_mut().zip(v) {
        *yi -= 2.0 * dot * vi;
    }
}
