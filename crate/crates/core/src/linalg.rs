//! Sparse matrices and the two linear solvers used by the time stepper:
//! a Thomas factorization for 1D tridiagonal systems and a Jacobi
//! preconditioned conjugate gradient for the 2D five-point systems.

use crate::error::{Error, Result};

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Compressed sparse row matrix with sorted, de-duplicated columns per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// Bilinear form `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.values[k] * y[self.col_idx[k]];
            }
            acc += xi * row;
        }
        acc
    }

    /// `Σ cₖ Aₖ` over matrices of identical dimensions.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (n_rows, n_cols) = terms
            .first()
            .map(|(_, m)| (m.n_rows, m.n_cols))
            .expect("at least one term");
        let mut triplets = Vec::with_capacity(terms.iter().map(|(_, m)| m.nnz()).sum());
        for (c, m) in terms {
            assert_eq!((m.n_rows, m.n_cols), (n_rows, n_cols));
            for i in 0..m.n_rows {
                for (j, v) in m.row(i) {
                    triplets.push((i, j, c * v));
                }
            }
        }
        Self::from_triplets(n_rows, n_cols, triplets)
    }

    /// Extracts the block `A[rows, cols]`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                let new_j = col_map[j];
                if new_j != usize::MAX {
                    triplets.push((new_i, new_j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), triplets)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

/// LU factorization of a symmetric positive definite tridiagonal matrix
/// (Thomas algorithm, no pivoting).
#[derive(Clone, Debug)]
pub struct TridiagonalFactor {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    pivots: Vec<f64>,
}

impl TridiagonalFactor {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.n_rows();
        if matrix.n_cols() != n || matrix.bandwidth() > 1 {
            return Err(Error::ShapeMismatch("matrix is not square tridiagonal".into()));
        }
        let mut lower = vec![0.0; n];
        let mut upper_mod = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        for i in 0..n {
            let d = matrix.get(i, i);
            let a = if i > 0 { matrix.get(i, i - 1) } else { 0.0 };
            let c = if i + 1 < n { matrix.get(i, i + 1) } else { 0.0 };
            let pivot = if i > 0 { d - a * upper_mod[i - 1] } else { d };
            if !(pivot > 0.0) {
                return Err(Error::NotPositiveDefinite { row: i, pivot });
            }
            lower[i] = a;
            pivots[i] = pivot;
            upper_mod[i] = c / pivot;
        }
        Ok(Self { lower, upper_mod, pivots })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        assert_eq!(rhs.len(), n);
        let mut x = vec![0.0; n];
        for i in 0..n {
            let prev = if i > 0 { self.lower[i] * x[i - 1] } else { 0.0 };
            x[i] = (rhs[i] - prev) / self.pivots[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.upper_mod[i] * x[i + 1];
        }
        x
    }
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite band matrix,
/// stored row-wise over the band.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    band: usize,
    /// `factor[i * (band + 1) + (j + band - i)] = L[i][j]` for `i - band ≤ j ≤ i`.
    factor: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.n_rows();
        if matrix.n_cols() != n {
            return Err(Error::ShapeMismatch("matrix is not square".into()));
        }
        let band = matrix.bandwidth();
        let w = band + 1;
        let mut factor = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in matrix.row(i) {
                if j <= i {
                    factor[i * w + j + band - i] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(band);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(band));
                let mut s = factor[i * w + j + band - i];
                for k in klo..j {
                    s -= factor[i * w + k + band - i] * factor[j * w + k + band - j];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    factor[i * w + band] = s.sqrt();
                } else {
                    factor[i * w + j + band - i] = s / factor[j * w + band];
                }
            }
        }
        Ok(Self { n, band, factor })
    }

    pub fn bandwidth(&self) -> usize {
        self.band
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let (band, w) = (self.band, self.band + 1);
        let mut x = rhs.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(band);
            let row = &self.factor[i * w..(i + 1) * w];
            let s: f64 = (lo..i).map(|k| row[k + band - i] * x[k]).sum();
            x[i] = (x[i] - s) / row[band];
        }
        for i in (0..self.n).rev() {
            x[i] /= self.factor[i * w + band];
            let xi = x[i];
            for k in i.saturating_sub(band)..i {
                x[k] -= self.factor[i * w + k + band - i] * xi;
            }
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradient for SPD systems.
#[derive(Clone, Debug)]
pub struct PcgSolver {
    matrix: CsrMatrix,
    inv_diag: Vec<f64>,
    rel_tol: f64,
    max_iter: usize,
}

impl PcgSolver {
    pub const DEFAULT_REL_TOL: f64 = 1e-10;

    pub fn new(matrix: CsrMatrix, rel_tol: f64, max_iter: usize) -> Result<Self> {
        let diag = matrix.diagonal();
        if let Some((row, &pivot)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::NotPositiveDefinite { row, pivot });
        }
        let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
        Ok(Self { matrix, inv_diag, rel_tol, max_iter })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves `A x = b`, starting from `guess` when given.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = rhs.len();
        let b_norm = dot(rhs, rhs).sqrt();
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = guess.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut r = self.matrix.mul_vec(&x);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut res = dot(&r, &r).sqrt() / b_norm;
        for _ in 0..self.max_iter {
            if res <= self.rel_tol {
                return Ok(x);
            }
            self.matrix.mul_vec_into(&p, &mut ap);
            let step = rz / dot(&p, &ap);
            axpy(step, &p, &mut x);
            axpy(-step, &ap, &mut r);
            for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&self.inv_diag) {
                *zi = ri * di;
            }
            let rz_new = dot(&r, &z);
            let ratio = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + ratio * *pi;
            }
            res = dot(&r, &r).sqrt() / b_norm;
        }
        if res <= self.rel_tol {
            Ok(x)
        } else {
            Err(Error::SolverDivergence { iterations: self.max_iter, residual: res })
        }
    }
}
