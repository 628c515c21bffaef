//! Minimal dense linear algebra used by the solvers: a column-major matrix,
//! Cholesky solves for the ridge/ADMM subproblems, and a column-pivoted
//! Householder QR for least squares with rank detection.
#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Dense column-major matrix. Column-major so coordinate descent can walk a
/// predictor column as one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMatrix<F> {
    nrows: usize,
    ncols: usize,
    data: Vec<F>,
}

impl<F: Scalar> ColMatrix<F> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        ColMatrix {
            nrows,
            ncols,
            data: vec![F::zero(); nrows * ncols],
        }
    }

    /// Builds from a row-major closure: `f(i, j)` is the entry at row `i`,
    /// column `j`.
    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zeros(nrows, ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                m.data[j * nrows + i] = f(i, j);
            }
        }
        m
    }

    pub fn from_columns(columns: &[Vec<F>]) -> Self {
        let ncols = columns.len();
        let nrows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == nrows));
        let mut data = Vec::with_capacity(nrows * ncols);
        for c in columns {
            data.extend_from_slice(c);
        }
        ColMatrix { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn col(&self, j: usize) -> &[F] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [F] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[j * self.nrows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[j * self.nrows + i] = v;
    }

    /// Extracts the rows at `indices` (in the given order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        ColMatrix::from_fn(indices.len(), self.ncols, |i, j| self.get(indices[i], j))
    }

    /// `self * x`
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.ncols);
        let mut out = vec![F::zero(); self.nrows];
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == F::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(j)) {
                *o += a * xj;
            }
        }
        out
    }

    /// `selfᵀ * x`
    pub fn tr_matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|j| dot(self.col(j), x)).collect()
    }

    /// `selfᵀ * self`, symmetric `ncols × ncols`.
    pub fn gram(&self) -> ColMatrix<F> {
        let p = self.ncols;
        let mut g = ColMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = dot(self.col(i), self.col(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    /// `self * selfᵀ`, symmetric `nrows × nrows`.
    pub fn outer_gram(&self) -> ColMatrix<F> {
        let n = self.nrows;
        let mut g = ColMatrix::zeros(n, n);
        for j in 0..self.ncols {
            let c = self.col(j);
            for b in 0..n {
                let cb = c[b];
                if cb == F::zero() {
                    continue;
                }
                for a in 0..=b {
                    let v = g.get(a, b) + c[a] * cb;
                    g.set(a, b, v);
                }
            }
        }
        for b in 0..n {
            for a in 0..b {
                let v = g.get(a, b);
                g.set(b, a, v);
            }
        }
        g
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cholesky factor (lower triangular) of a symmetric positive definite
/// matrix; `None` when a pivot is not strictly positive.
pub struct CholeskyFactor<F> {
    l: ColMatrix<F>,
}

pub fn cholesky<F: Scalar>(a: &ColMatrix<F>) -> Option<CholeskyFactor<F>> {
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    let mut l = ColMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let ljk = l.get(j, k);
            d -= ljk * ljk;
        }
        if d <= F::zero() {
            return None;
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / dj);
        }
    }
    Some(CholeskyFactor { l })
}

impl<F: Scalar> CholeskyFactor<F> {
    /// Solves `A x = b` given `A = L Lᵀ`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.l.nrows();
        assert_eq!(b.len(), n);
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = y[k] * self.l.get(i, k);
                y[i] -= v;
            }
            y[i] /= self.l.get(i, i);
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = y[k] * self.l.get(k, i);
                y[i] -= v;
            }
            y[i] /= self.l.get(i, i);
        }
        y
    }
}

/// Outcome of a column-pivoted QR least-squares solve.
pub enum LstsqOutcome<F> {
    /// Full column rank: the minimizer of `‖b − A x‖₂`.
    Solution(Vec<F>),
    /// Rank deficiency at the given relative tolerance; `dependent` holds the
    /// original indices of the columns pivoted past the numerical rank.
    RankDeficient { rank: usize, dependent: Vec<usize> },
}

/// Least squares via Householder QR with column pivoting. A column whose
/// remaining diagonal falls below `rel_tol` times the largest diagonal is
/// declared dependent.
pub fn lstsq_col_pivoted<F: Scalar>(a: &ColMatrix<F>, b: &[F], rel_tol: F) -> LstsqOutcome<F> {
    let n = a.nrows();
    let m = a.ncols();
    assert_eq!(b.len(), n);
    assert!(n >= m, "least squares requires nrows >= ncols");

    let mut r = a.clone();
    let mut qtb = b.to_vec();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut diag_first = F::zero();
    let mut rank = m;

    for k in 0..m {
        // pivot: column with largest remaining two-norm
        let mut best = k;
        let mut best_norm = F::zero();
        for j in k..m {
            let nrm = dot(&r.col(j)[k..], &r.col(j)[k..]);
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        if best != k {
            perm.swap(k, best);
            let (lo, hi) = (k.min(best), k.max(best));
            for i in 0..n {
                let t = r.get(i, lo);
                r.set(i, lo, r.get(i, hi));
                r.set(i, hi, t);
            }
        }

        // Householder reflector for column k, rows k..n
        let alpha = {
            let c = &r.col(k)[k..];
            let nrm = norm2(c);
            if c[0] >= F::zero() {
                -nrm
            } else {
                nrm
            }
        };
        if k == 0 {
            diag_first = alpha.abs();
        }
        if alpha.abs() <= rel_tol * diag_first || alpha == F::zero() {
            rank = k;
            break;
        }
        let mut v: Vec<F> = r.col(k)[k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 > F::zero() {
            // apply I - 2 v vᵀ / (vᵀv) to remaining columns and to qtb
            for j in k..m {
                let col = r.col_mut(j);
                let proj = dot(&v, &col[k..]);
                let scale = F::cast(2.0) * proj / vnorm2;
                for (ci, vi) in col[k..].iter_mut().zip(&v) {
                    *ci -= scale * *vi;
                }
            }
            let proj = dot(&v, &qtb[k..]);
            let scale = F::cast(2.0) * proj / vnorm2;
            for (bi, vi) in qtb[k..].iter_mut().zip(&v) {
                *bi -= scale * *vi;
            }
        }
        r.set(k, k, alpha);
        for i in (k + 1)..n {
            r.set(i, k, F::zero());
        }
    }

    if rank < m {
        return LstsqOutcome::RankDeficient {
            rank,
            dependent: perm[rank..].to_vec(),
        };
    }

    // back substitution on the m×m upper triangle
    let mut x_p = vec![F::zero(); m];
    for i in (0..m).rev() {
        let mut v = qtb[i];
        for j in (i + 1)..m {
            v -= r.get(i, j) * x_p[j];
        }
        x_p[i] = v / r.get(i, i);
    }
    let mut x = vec![F::zero(); m];
    for (k, &orig) in perm.iter().enumerate() {
        x[orig] = x_p[k];
    }
    LstsqOutcome::Solution(x)
}
