//! Dense row-major matrices and a one-sided Jacobi SVD.
//!
//! The SVD is the measurement substrate for everything else in this crate,
//! so it is built for determinism rather than raw speed: cyclic sweeps in a
//! fixed pair order, no pivoting heuristics, and a fixed sign convention.
//! Given identical input bytes it produces identical factor bytes on every
//! run and every thread.
//!
//! Factorization: `W = U diag(sigma) V^T` with `U: rows x R`, `V: cols x R`,
//! `R = min(rows, cols)`, `sigma` nonincreasing and nonnegative, and both
//! factor matrices having orthonormal columns.

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative threshold below which a column pair counts as orthogonal.
const ROTATION_TOL: f64 = 1e-14;
/// Hard cap on cyclic Jacobi sweeps. Quadratic convergence makes anything
/// near this bound pathological; random 128x96 inputs need about ten.
const MAX_SWEEPS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Validates length and finiteness. Row-major layout.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Matrix::new".into(),
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        for (idx, &x) in data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFiniteEntry {
                    context: "Matrix::new".into(),
                    row: idx / cols.max(1),
                    col: idx % cols.max(1),
                    value: x,
                });
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// C = self * rhs.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                context: "matmul".into(),
                expected: format!("rhs with {} rows", self.cols),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = rhs.row(k);
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// C = self * rhs^T. Rows of both operands are contiguous, which makes
    /// this the fast path for batched forward passes.
    pub fn matmul_transpose_rhs(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                context: "matmul_transpose_rhs".into(),
                expected: format!("rhs with {} cols", self.cols),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(arow, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// C = self^T * rhs.
    pub fn matmul_transpose_lhs(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                context: "matmul_transpose_lhs".into(),
                expected: format!("rhs with {} rows", self.rows),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for b in 0..self.rows {
            let arow = self.row(b);
            let brow = rhs.row(b);
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(k);
                for (o, &x) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * x;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                context: "sub".into(),
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Flat inner product of equal-shaped matrices, `<A, B> = sum A_ij B_ij`.
    pub fn frobenius_inner(&self, rhs: &Matrix) -> Result<f64> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                context: "frobenius_inner".into(),
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        Ok(dot(&self.data, &rhs.data))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// rows x R, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative, length R = min(rows, cols).
    pub sigma: Vec<f64>,
    /// cols x R, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank_bound(&self) -> usize {
        self.sigma.len()
    }

    /// U diag(sigma) V^T.
    pub fn reconstruct(&self) -> Matrix {
        let keep: Vec<usize> = (0..self.sigma.len()).collect();
        // Index set is complete and in range by construction.
        low_rank_reconstruct(self, &keep).expect("full reconstruction")
    }

    /// Frobenius distance between orthonormality and U^T U (resp. V^T V).
    pub fn orthogonality_defect(&self) -> (f64, f64) {
        (gram_defect(&self.u), gram_defect(&self.v))
    }
}

fn gram_defect(m: &Matrix) -> f64 {
    let k = m.cols();
    let mut acc = 0.0;
    for i in 0..k {
        let ci = m.column(i);
        for j in 0..k {
            let g = dot(&ci, &m.column(j));
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (g - target) * (g - target);
        }
    }
    acc.sqrt()
}

/// One-sided Jacobi SVD. Deterministic: fixed cyclic pair order, rotations
/// skipped once `|<a_p, a_q>| <= 1e-14 * |a_p| * |a_q|`, at most 60 sweeps.
/// Sign convention: the largest-magnitude entry of each column of U is
/// nonnegative (first such entry on ties), V's column flips with it.
pub fn svd(w: &Matrix) -> Result<SvdFactors> {
    for (idx, &x) in w.data.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteEntry {
                context: "svd".into(),
                row: idx / w.cols.max(1),
                col: idx % w.cols.max(1),
                value: x,
            });
        }
    }
    if w.rows == 0 || w.cols == 0 {
        return Err(Error::InvalidArgument {
            context: format!("svd of empty matrix {}x{}", w.rows, w.cols),
        });
    }

    let (u, sigma, v) = if w.rows >= w.cols {
        jacobi_tall(w)
    } else {
        // Factor the transpose and swap the roles of U and V.
        let t = w.transpose();
        let (ut, sigma, vt) = jacobi_tall(&t);
        (vt, sigma, ut)
    };

    let (u, v) = fix_signs(u, v);
    Ok(SvdFactors { u, sigma, v })
}

/// Core kernel for m >= n. Returns (U m x n, sigma n, V n x n).
fn jacobi_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let m = a.rows;
    let n = a.cols;
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = &cols[p];
                    let cq = &cols[q];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps tied columns in original index order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        let s = norms[j];
        sigma.push(s);
        v_cols.push(std::mem::take(&mut v[j]));
        if s > 0.0 {
            let col = cols[j].iter().map(|x| x / s).collect();
            u_cols.push(Some(col));
        } else {
            u_cols.push(None);
        }
    }
    fill_null_columns(&mut u_cols, m);

    let u = from_columns(m, u_cols.into_iter().map(|c| c.unwrap()).collect());
    let v = from_columns(n, v_cols);
    (u, sigma, v)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Zero singular values leave U columns undefined; fill them with an
/// orthonormal completion built from standard basis vectors. Greedy over the
/// largest projection residual, so the result is deterministic.
fn fill_null_columns(u_cols: &mut [Option<Vec<f64>>], m: usize) {
    let null_slots: Vec<usize> = (0..u_cols.len())
        .filter(|&j| u_cols[j].is_none())
        .collect();
    for slot in null_slots {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..m {
            let mut cand = vec![0.0; m];
            cand[k] = 1.0;
            // Two orthogonalization passes keep the completion orthonormal
            // to working precision.
            for _ in 0..2 {
                for col in u_cols.iter().flatten() {
                    let proj = dot(&cand, col);
                    for (c, u) in cand.iter_mut().zip(col.iter()) {
                        *c -= proj * u;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().map_or(true, |(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut cand) = best.expect("nonempty candidate set");
        for c in cand.iter_mut() {
            *c /= norm;
        }
        u_cols[slot] = Some(cand);
    }
}

fn from_columns(rows: usize, cols: Vec<Vec<f64>>) -> Matrix {
    let n = cols.len();
    let mut m = Matrix::zeros(rows, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m.data[i * n + j] = x;
        }
    }
    m
}

fn fix_signs(mut u: Matrix, mut v: Matrix) -> (Matrix, Matrix) {
    for j in 0..u.cols() {
        let mut arg = 0;
        let mut best = -1.0;
        for i in 0..u.rows() {
            let mag = u.get(i, j).abs();
            if mag > best {
                best = mag;
                arg = i;
            }
        }
        if u.get(arg, j) < 0.0 {
            for i in 0..u.rows() {
                let x = u.get(i, j);
                u.set(i, j, -x);
            }
            for i in 0..v.rows() {
                let x = v.get(i, j);
                v.set(i, j, -x);
            }
        }
    }
    (u, v)
}

/// Sum of `sigma_j u_j v_j^T` over the kept indices. Indices must be
/// distinct and within the rank bound.
pub fn low_rank_reconstruct(f: &SvdFactors, keep: &[usize]) -> Result<Matrix> {
    let r = f.sigma.len();
    let mut seen = vec![false; r];
    for &j in keep {
        if j >= r {
            return Err(Error::InvalidArgument {
                context: format!("low_rank_reconstruct: index {j} out of range (R = {r})"),
            });
        }
        if seen[j] {
            return Err(Error::InvalidArgument {
                context: format!("low_rank_reconstruct: duplicate index {j}"),
            });
        }
        seen[j] = true;
    }
    let mut out = Matrix::zeros(f.u.rows(), f.v.rows());
    for &j in keep {
        let s = f.sigma[j];
        if s == 0.0 {
            continue;
        }
        for i in 0..out.rows {
            let uij = f.u.get(i, j) * s;
            if uij == 0.0 {
                continue;
            }
            let orow = out.row_mut(i);
            for (k, o) in orow.iter_mut().enumerate() {
                *o += uij * f.v.get(k, j);
            }
        }
    }
    Ok(out)
}

/// Gaussian matrix with orthonormalized columns, for synthetic spectra and
/// balanced inits. Requires rows >= cols.
pub fn random_orthonormal_columns(rows: usize, cols: usize, stream: &mut Stream) -> Matrix {
    assert!(rows >= cols, "need rows >= cols for orthonormal columns");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while out.len() < cols {
        let mut cand: Vec<f64> = (0..rows).map(|_| stream.normal()).collect();
        for _ in 0..2 {
            for col in &out {
                let proj = dot(&cand, col);
                for (c, u) in cand.iter_mut().zip(col.iter()) {
                    *c -= proj * u;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        // A draw that collapses under projection is retried.
        if norm < 1e-8 {
            continue;
        }
        for c in cand.iter_mut() {
            *c /= norm;
        }
        out.push(cand);
    }
    from_columns(rows, out)
}

/// Builds `U diag(sigma) V^T` from fresh random orthonormal factors.
pub fn synthesize_with_spectrum(
    rows: usize,
    cols: usize,
    sigma: &[f64],
    stream: &mut Stream,
) -> Matrix {
    let r = rows.min(cols);
    assert!(sigma.len() == r, "spectrum length must equal min(rows, cols)");
    let u = random_orthonormal_columns(rows, r, stream);
    let v = random_orthonormal_columns(cols, r, stream);
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..r {
        for i in 0..rows {
            let uij = u.get(i, j) * sigma[j];
            let orow = out.row_mut(i);
            for (k, o) in orow.iter_mut().enumerate() {
                *o += uij * v.get(k, j);
            }
        }
    }
    out
}
