//! Sparse CSR storage and a deterministic direct linear solver for the
//! nonsymmetric saddle-point systems produced by assembly.
//!
//! Factorization is a sparse LU with partial row pivoting, run sequentially so
//! identical inputs give bit-identical solutions. Dirichlet and zero-mean
//! constraints are applied by symmetric elimination: constrained rows become
//! identity rows, constrained columns are moved to the right-hand side. That
//! keeps the transpose of a constrained operator equal to the constrained
//! transpose, which the adjoint solver relies on.

use std::io::Write;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::{Error, Result};

/// Compressed sparse row matrix. Column indices are strictly increasing within
/// each row; duplicate triplets are summed during construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed in sorted
    /// order, so assembly order does not affect the result bit-for-bit.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> SparseMatrix {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) out of bounds");
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] = col_indices.len();
            last = Some((r, c));
        }
        // rows with no entries inherit the previous offset
        for i in 1..=n_rows {
            if row_offsets[i] < row_offsets[i - 1] {
                row_offsets[i] = row_offsets[i - 1];
            }
        }
        let m = SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        };
        debug_assert!(m.check_invariants());
        m
    }

    fn check_invariants(&self) -> bool {
        if self.row_offsets.len() != self.n_rows + 1 {
            return false;
        }
        if self.values.len() != *self.row_offsets.last().unwrap() {
            return false;
        }
        for r in 0..self.n_rows {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            if lo > hi {
                return false;
            }
            for k in lo..hi {
                if k > lo && self.col_indices[k - 1] >= self.col_indices[k] {
                    return false;
                }
                if self.col_indices[k] >= self.n_cols {
                    return false;
                }
            }
        }
        true
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

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored entry (r, c), or 0 if absent from the sparsity pattern.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Iterates stored entries as (row, col, value) in CSR order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1])
                .map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: x has length {}, matrix has {} columns",
                x.len(),
                self.n_cols
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// Transpose; column indices stay strictly increasing per row.
    pub fn transpose(&self) -> SparseMatrix {
        let nnz = self.nnz();
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = counts;
        for r in 0..self.n_rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = self.col_indices[k];
                let dst = next[c];
                next[c] += 1;
                col_indices[dst] = r;
                values[dst] = self.values[k];
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Dump in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                writeln!(w, "{} {} {:.17e}", r + 1, self.col_indices[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

/// Square system with Dirichlet/zero-mean constraints already applied: for each
/// constrained dof i, row i is the identity row and rhs[i] is the prescribed value.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    matrix: SparseMatrix,
    rhs: Vec<f64>,
    constrained: Vec<(usize, f64)>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Result<LinearSystem> {
        Self::with_constraints(matrix, rhs, &[])
    }

    /// Apply symmetric elimination: constrained rows become identity rows with
    /// the prescribed value on the right-hand side; constrained columns are
    /// moved to the right-hand side of the free rows.
    pub fn with_constraints(
        mut matrix: SparseMatrix,
        mut rhs: Vec<f64>,
        constraints: &[(usize, f64)],
    ) -> Result<LinearSystem> {
        if matrix.n_rows != matrix.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "system matrix is {}x{}, expected square",
                matrix.n_rows, matrix.n_cols
            )));
        }
        if rhs.len() != matrix.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "rhs has length {}, matrix has {} rows",
                rhs.len(),
                matrix.n_rows
            )));
        }
        let n = matrix.n_rows;
        let mut is_constrained = vec![false; n];
        let mut value = vec![0.0; n];
        for &(dof, v) in constraints {
            if dof >= n {
                return Err(Error::DimensionMismatch(format!(
                    "constrained dof {dof} out of range for system of size {n}"
                )));
            }
            is_constrained[dof] = true;
            value[dof] = v;
        }
        for r in 0..n {
            let (lo, hi) = (matrix.row_offsets[r], matrix.row_offsets[r + 1]);
            if is_constrained[r] {
                let mut saw_diag = false;
                for k in lo..hi {
                    let c = matrix.col_indices[k];
                    matrix.values[k] = if c == r { 1.0 } else { 0.0 };
                    saw_diag |= c == r;
                }
                assert!(saw_diag, "constrained dof {r} has no diagonal entry");
                rhs[r] = value[r];
            } else {
                for k in lo..hi {
                    let c = matrix.col_indices[k];
                    if is_constrained[c] {
                        rhs[r] -= matrix.values[k] * value[c];
                        matrix.values[k] = 0.0;
                    }
                }
            }
        }
        let mut constrained = constraints.to_vec();
        constrained.sort_by_key(|&(d, _)| d);
        constrained.dedup_by_key(|&mut (d, _)| d);
        Ok(LinearSystem {
            matrix,
            rhs,
            constrained,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn constrained_dofs(&self) -> &[(usize, f64)] {
        &self.constrained
    }

    /// Direct solve; `tol` bounds the relative residual ‖Ax−b‖₂/‖b‖₂
    /// (default 1e-10 via [`LinearSystem::solve_default`]).
    pub fn solve(&self, tol: f64) -> Result<Vec<f64>> {
        let fact = Factorization::new(&self.matrix)?;
        let x = fact.solve(&self.rhs);
        let r = self.matrix.spmv(&x)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let d = r[i] - self.rhs[i];
            num += d * d;
            den += self.rhs[i] * self.rhs[i];
        }
        let achieved = if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        };
        if !achieved.is_finite() || achieved > tol {
            return Err(Error::SolverFailure {
                reason: "direct solve residual above tolerance".into(),
                achieved,
            });
        }
        Ok(x)
    }

    pub fn solve_default(&self) -> Result<Vec<f64>> {
        self.solve(1e-10)
    }
}

/// Reusable sparse LU factorization (partial row pivoting, sequential).
pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl Factorization {
    pub fn new(matrix: &SparseMatrix) -> Result<Factorization> {
        let n = matrix.n_rows();
        let mut triplets = Vec::with_capacity(matrix.nnz());
        for r in 0..n {
            let (cols, vals) = matrix.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push(Triplet::new(r, c, v));
            }
        }
        let col_mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, matrix.n_cols(), &triplets)
            .map_err(|e| Error::SolverFailure {
                reason: format!("building column-major matrix failed: {e:?}"),
                achieved: f64::INFINITY,
            })?;
        let lu = col_mat.sp_lu().map_err(|e| Error::SolverFailure {
            reason: format!("sparse LU factorization failed: {e:?}"),
            achieved: f64::INFINITY,
        })?;
        Ok(Factorization { lu, n })
    }

    /// Triangular solves against a factored matrix. The caller is responsible
    /// for residual checks when it matters (see [`LinearSystem::solve`]).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n, "rhs length mismatch");
        let b = faer::col::Col::<f64>::from_fn(self.n, |i| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[i]).collect()
    }
}
