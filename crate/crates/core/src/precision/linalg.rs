use std::ops::{Deref, DerefMut, Index, IndexMut};

use thiserror::Error;

use super::{BigScalar, PrecisionContext, PrecisionError};

/// Dense vector of scalars sharing one context.
#[derive(Clone, Debug, PartialEq)]
pub struct BigVec(Vec<BigScalar>);

impl BigVec {
    pub fn zeros(ctx: &PrecisionContext, n: usize) -> Self {
        BigVec(vec![ctx.zero(); n])
    }

    pub fn into_inner(self) -> Vec<BigScalar> {
        self.0
    }

    pub fn dot(&self, other: &BigVec) -> BigScalar {
        assert_eq!(self.len(), other.len(), "dot product of unequal lengths");
        let mut acc = self.0[0].context().zero();
        for (a, b) in self.iter().zip(other.iter()) {
            acc.add_mul(a, b);
        }
        acc
    }

    /// Euclidean norm.
    pub fn norm(&self) -> BigScalar {
        self.dot(self).sqrt()
    }

    pub fn norm_sqr(&self) -> BigScalar {
        self.dot(self)
    }

    /// Max norm; zero for an empty vector is not defined, so callers pass nonempty vectors.
    pub fn norm_inf(&self) -> BigScalar {
        let mut m = self.0[0].abs();
        for x in &self.0[1..] {
            let a = x.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn scale(&self, s: &BigScalar) -> BigVec {
        BigVec(self.iter().map(|x| x * s).collect())
    }

    pub fn add(&self, other: &BigVec) -> BigVec {
        BigVec(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &BigVec) -> BigVec {
        BigVec(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    /// `self += s * x`
    pub fn axpy(&mut self, s: &BigScalar, x: &BigVec) {
        for (a, b) in self.0.iter_mut().zip(x.iter()) {
            a.add_mul(s, b);
        }
    }

    pub fn convert(&self, ctx: &PrecisionContext) -> BigVec {
        BigVec(self.iter().map(|x| ctx.convert(x)).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.iter().map(BigScalar::to_f64).collect()
    }
}

impl From<Vec<BigScalar>> for BigVec {
    fn from(v: Vec<BigScalar>) -> Self {
        BigVec(v)
    }
}

impl FromIterator<BigScalar> for BigVec {
    fn from_iter<I: IntoIterator<Item = BigScalar>>(iter: I) -> Self {
        BigVec(iter.into_iter().collect())
    }
}

impl Deref for BigVec {
    type Target = [BigScalar];
    fn deref(&self) -> &[BigScalar] {
        &self.0
    }
}

impl DerefMut for BigVec {
    fn deref_mut(&mut self) -> &mut [BigScalar] {
        &mut self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BigMat {
    rows: usize,
    cols: usize,
    data: Vec<BigScalar>,
}

impl BigMat {
    pub fn zeros(ctx: &PrecisionContext, rows: usize, cols: usize) -> Self {
        BigMat { rows, cols, data: vec![ctx.zero(); rows * cols] }
    }

    pub fn identity(ctx: &PrecisionContext, n: usize) -> Self {
        let mut m = Self::zeros(ctx, n, n);
        for i in 0..n {
            m[(i, i)] = ctx.one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<BigScalar>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        BigMat { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn diag(values: &[BigScalar]) -> Self {
        let ctx = values[0].context();
        let mut m = Self::zeros(&ctx, values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = v.clone();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[BigScalar] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> BigMat {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self[(i, j)].clone());
            }
        }
        BigMat { rows: self.cols, cols: self.rows, data }
    }

    pub fn mul_vec(&self, x: &[BigScalar]) -> BigVec {
        assert_eq!(self.cols, x.len(), "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut acc = &row[0] * &x[0];
                for j in 1..self.cols {
                    acc.add_mul(&row[j], &x[j]);
                }
                acc
            })
            .collect()
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &[BigScalar]) -> BigVec {
        assert_eq!(self.rows, x.len(), "matrix-vector shape mismatch");
        (0..self.cols)
            .map(|j| {
                let mut acc = &self[(0, j)] * &x[0];
                for i in 1..self.rows {
                    acc.add_mul(&self[(i, j)], &x[i]);
                }
                acc
            })
            .collect()
    }

    pub fn matmul(&self, other: &BigMat) -> BigMat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let ctx = self.data[0].context();
        let mut out = BigMat::zeros(&ctx, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)].add_mul(a, &other[(k, j)]);
                }
            }
        }
        out
    }

    pub fn scale(&self, s: &BigScalar) -> BigMat {
        BigMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &BigMat) -> BigMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        BigMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &BigMat) -> BigMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        BigMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> BigScalar {
        let mut m = self.data[0].abs();
        for x in &self.data[1..] {
            let a = x.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> BigScalar {
        (0..self.rows)
            .map(|i| {
                let mut s = self.data[0].context().zero();
                for x in self.row(i) {
                    s += x.abs();
                }
                s
            })
            .reduce(|a, b| a.max(&b))
            .expect("nonempty matrix")
    }
}

impl Index<(usize, usize)> for BigMat {
    type Output = BigScalar;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &BigScalar {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for BigMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut BigScalar {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with row pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: BigMat,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(mut a: BigMat) -> Result<Self, PrecisionError> {
        if a.rows != a.cols {
            return Err(PrecisionError::Dimension { expected: a.rows, found: a.cols });
        }
        let n = a.rows;
        let ctx = a.data[0].context();
        // pivots below n·ε·max|a| are treated as zero
        let threshold = ctx.eps().mul_i64(n as i64) * a.norm_max();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a[(i, k)].cmp_abs(&a[(p, k)]) == std::cmp::Ordering::Greater {
                    p = i;
                }
            }
            let best = a[(p, k)].abs();
            if best <= threshold || best.is_zero() {
                return Err(PrecisionError::Singular { column: k, pivot: best.to_sci(6) });
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let inv = ctx.one() / &a[(k, k)];
            for i in k + 1..n {
                if a[(i, k)].is_zero() {
                    continue;
                }
                let l = &a[(i, k)] * &inv;
                let (top, rest) = a.data.split_at_mut(i * n);
                let pivot_row = &top[k * n..(k + 1) * n];
                let row = &mut rest[..n];
                for j in k + 1..n {
                    row[j].sub_mul(&l, &pivot_row[j]);
                }
                row[k] = l;
            }
        }
        Ok(LuFactors { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn solve(&self, b: &[BigScalar]) -> Result<BigVec, PrecisionError> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(PrecisionError::Dimension { expected: n, found: b.len() });
        }
        let mut x: Vec<BigScalar> = self.perm.iter().map(|&i| b[i].clone()).collect();
        for i in 1..n {
            let (solved, rest) = x.split_at_mut(i);
            for (j, xj) in solved.iter().enumerate() {
                rest[0].sub_mul(&self.lu[(i, j)], xj);
            }
        }
        for i in (0..n).rev() {
            let (head, solved) = x.split_at_mut(i + 1);
            for (off, xj) in solved.iter().enumerate() {
                head[i].sub_mul(&self.lu[(i, i + 1 + off)], xj);
            }
            head[i] /= &self.lu[(i, i)];
        }
        Ok(BigVec::from(x))
    }
}

/// Solves `A x = b` by LU with row pivoting.
pub fn linsolve(a: &BigMat, b: &BigVec) -> Result<BigVec, PrecisionError> {
    if a.rows != b.len() {
        return Err(PrecisionError::Dimension { expected: a.rows, found: b.len() });
    }
    LuFactors::factor(a.clone())?.solve(b)
}

#[derive(Debug, Clone, Error)]
#[error("power iteration did not converge in {iterations} iterations (last estimate {last:?})")]
pub struct SpectralNormError {
    pub iterations: usize,
    pub last: BigScalar,
}

/// Relative tolerance on the dominant eigenvalue of `AᵀA`.
pub const SPECTRAL_NORM_TOL: f64 = 1e-8;
/// Iteration cap for the power method.
pub const SPECTRAL_NORM_MAX_ITERS: usize = 10_000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// This is a diagnostic (Lipschitz constants), so the tolerance is fixed at
/// [`SPECTRAL_NORM_TOL`] irrespective of the working precision.
pub fn spectral_norm(a: &BigMat) -> Result<BigScalar, SpectralNormError> {
    let ctx = a.data[0].context();
    let n = a.cols;
    if a.norm_max().is_zero() {
        return Ok(ctx.zero());
    }
    let ata = a.transpose().matmul(a);
    // a start vector with distinct entries avoids accidental orthogonality to
    // the dominant eigenvector of symmetric test matrices
    let mut v: BigVec = (0..n).map(|i| ctx.one() + ctx.ratio(1, i as i64 + 2)).collect();
    let nv = v.norm();
    v = v.scale(&(ctx.one() / nv));
    let tol = ctx.from_f64(SPECTRAL_NORM_TOL);
    let mut lambda = ctx.zero();
    for _ in 0..SPECTRAL_NORM_MAX_ITERS {
        let w = ata.mul_vec(&v);
        let next = v.dot(&w);
        let nw = w.norm();
        if nw.is_zero() {
            return Ok(ctx.zero());
        }
        v = w.scale(&(ctx.one() / nw));
        if (&next - &lambda).abs() <= &tol * &next.abs() {
            return Ok(next.abs().sqrt());
        }
        lambda = next;
    }
    Err(SpectralNormError { iterations: SPECTRAL_NORM_MAX_ITERS, last: lambda.abs().sqrt() })
}
