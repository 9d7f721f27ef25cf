//! Small dense matrix kernel: row-major storage, products, and a one-sided
//! Jacobi SVD sized for desk-scale decoders.

use thiserror::Error;

use crate::scalar::Real;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("matrix data has {len} entries, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength { rows, cols, len: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: i / cols.max(1), col: i % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows. Panics on ragged input; meant for literals.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix literal");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    /// `A·v`.
    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        if v.len() != self.cols {
            return Err(self.shape_err("mul_vec", v.len(), 1));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `Aᵀ·v`, without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::Shape {
                op: "tr_mul_vec",
                lhs_rows: self.cols,
                lhs_cols: self.rows,
                rhs_rows: v.len(),
                rhs_cols: 1,
            });
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(self.shape_err("sub", other.rows, other.cols));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn shape_err(&self, op: &'static str, rhs_rows: usize, rhs_cols: usize) -> LinalgError {
        LinalgError::Shape { op, lhs_rows: self.rows, lhs_cols: self.cols, rhs_rows, rhs_cols }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Matrix product with the inner index summed in ascending order.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
    if a.cols != b.rows {
        return Err(a.shape_err("matmul", b.rows, b.cols));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = T::zero();
            for p in 0..a.cols {
                acc += a.get(i, p) * b.get(p, j);
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    Ok(out)
}

/// Thin singular value decomposition `A = U·diag(s)·Vᵀ` with `r = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult<T> {
    /// m×r, orthonormal columns.
    pub u: Matrix<T>,
    /// Non-negative, descending.
    pub singular_values: Vec<T>,
    /// n×r, orthonormal columns.
    pub v: Matrix<T>,
}

impl<T: Real> SvdResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let mut us = self.u.clone();
        for r in 0..us.rows {
            for (c, &s) in self.singular_values.iter().enumerate() {
                let v = us.get(r, c) * s;
                us.set(r, c, v);
            }
        }
        matmul(&us, &self.v.transpose()).expect("svd factors conform")
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// One-sided Jacobi SVD.
///
/// Columns of a working copy are rotated pairwise until every pair is
/// orthogonal to within `T::SVD_TOLERANCE` relative to the pair's norms.
/// Each U column's largest-magnitude entry is made non-negative (V follows),
/// and U is completed to an orthonormal set when `A` is rank deficient.
pub fn svd<T: Real>(a: &Matrix<T>) -> Result<SvdResult<T>, LinalgError> {
    if let Some(i) = a.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { row: i / a.cols.max(1), col: i % a.cols.max(1) });
    }
    if a.rows < a.cols {
        let t = svd(&a.transpose())?;
        // Aᵀ = U' S V'ᵀ  =>  A = V' S U'ᵀ; re-normalize signs on the new U.
        let mut out = SvdResult { u: t.v, singular_values: t.singular_values, v: t.u };
        fix_signs(&mut out.u, &mut out.v);
        return Ok(out);
    }
    let (m, n) = (a.rows, a.cols);
    let mut g = a.transpose(); // rows of g are columns of A
    let mut v = Matrix::<T>::identity(n);
    let tol = T::of(T::SVD_TOLERANCE);

    let mut converged = n < 2;
    let mut residual = T::zero();
    for _ in 0..MAX_SWEEPS {
        residual = T::zero();
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(g.row(p), g.row(p));
                let beta = dot(g.row(q), g.row(q));
                let gamma = dot(g.row(p), g.row(q));
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(rel);
                if rel <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut g, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS, residual: residual.as_f64() });
    }

    let mut order: Vec<(usize, T)> =
        (0..n).map(|j| (j, dot(g.row(j), g.row(j)).sqrt())).collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).expect("finite norms").then(x.0.cmp(&y.0)));

    let scale = order.first().map_or(T::zero(), |o| o.1);
    let negligible = scale * T::epsilon() * T::of(m.max(n) as f64);
    let mut u = Matrix::zeros(m, n);
    let mut vout = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (col, &(j, sigma)) in order.iter().enumerate() {
        for r in 0..n {
            vout.set(r, col, v.get(j, r));
        }
        if sigma > negligible && sigma > T::zero() {
            for r in 0..m {
                u.set(r, col, g.get(j, r) / sigma);
            }
            s.push(sigma);
        } else {
            s.push(T::zero());
            missing.push(col);
        }
    }
    complete_orthonormal(&mut u, &missing);
    fix_signs(&mut u, &mut vout);
    Ok(SvdResult { u, singular_values: s, v: vout })
}

fn rotate_rows<T: Real>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols;
    for k in 0..cols {
        let xp = m.data[p * cols + k];
        let xq = m.data[q * cols + k];
        m.data[p * cols + k] = c * xp - s * xq;
        m.data[q * cols + k] = s * xp + c * xq;
    }
}

/// Fills the listed columns of `basis` with unit vectors orthogonal to every
/// other column, by Gram-Schmidt over the standard basis.
pub(crate) fn complete_orthonormal<T: Real>(basis: &mut Matrix<T>, missing: &[usize]) {
    let m = basis.rows;
    let mut filled: Vec<usize> = (0..basis.cols).filter(|c| !missing.contains(c)).collect();
    let mut candidate = 0;
    for &col in missing {
        loop {
            assert!(candidate < m, "cannot complete more than {m} orthonormal columns");
            let mut w = vec![T::zero(); m];
            w[candidate] = T::one();
            candidate += 1;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for &f in &filled {
                    let proj: T = (0..m).map(|r| basis.get(r, f) * w[r]).sum();
                    for (r, wr) in w.iter_mut().enumerate() {
                        *wr -= proj * basis.get(r, f);
                    }
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > T::of(1e-3) {
                for (r, wr) in w.iter().enumerate() {
                    basis.set(r, col, *wr / norm);
                }
                filled.push(col);
                break;
            }
        }
    }
}

fn fix_signs<T: Real>(u: &mut Matrix<T>, v: &mut Matrix<T>) {
    for c in 0..u.cols {
        let mut best = T::zero();
        let mut best_abs = T::zero();
        for r in 0..u.rows {
            let x = u.get(r, c);
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = x;
            }
        }
        if best < T::zero() {
            for r in 0..u.rows {
                let x = u.get(r, c);
                u.set(r, c, -x);
            }
            for r in 0..v.rows {
                let x = v.get(r, c);
                v.set(r, c, -x);
            }
        }
    }
}
