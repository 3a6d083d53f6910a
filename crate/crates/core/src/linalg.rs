//! Sparse matrices with a fixed, mesh-derived pattern and the direct solvers
//! used by the implicit steps.
//!
//! 1-D meshes without periodic edges yield tridiagonal systems, which are
//! solved by the Thomas algorithm. Everything else goes through a sparse LU
//! factorization whose symbolic analysis is computed once per pattern and
//! reused for every step.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Square CSR matrix whose pattern is the cell adjacency of a mesh (plus the
/// diagonal). The pattern is structurally symmetric.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Zero matrix with the cell-adjacency pattern of `mesh`.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        let n = mesh.n_cells();
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for e in mesh.edges() {
            if let Some(l) = e.neighbor {
                rows[e.owner].push(l);
                rows[l].push(e.owner);
            }
        }
        Self::from_rows(rows)
    }

    /// Zero matrix with an explicit pattern (one column list per row).
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        SparseMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| self.row_ptr[row] + k)
    }

    /// Adds `v` to entry (row, col), which must belong to the pattern.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) is outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Nonzero pattern entries of a row as (column, value).
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, a)| a * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                d[i][j] = a;
            }
        }
        d
    }

    /// |A_LL| - Σ_{K≠L} |A_KL| for every column L.
    pub fn column_dominance_gaps(&self) -> Vec<f64> {
        let mut gap = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                if i == j {
                    gap[j] += a.abs();
                } else {
                    gap[j] -= a.abs();
                }
            }
        }
        gap
    }

    /// True when the diagonal is positive and every off-diagonal entry is <= 0.
    pub fn has_m_matrix_signs(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, a)| if i == j { a > 0.0 } else { a <= 0.0 }))
    }

    fn is_tridiagonal(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, _)| j + 1 >= i && j <= i + 1))
    }
}

/// ‖A x - b‖_∞.
pub fn residual_norm(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| (ax - bi).abs()).fold(0.0, f64::max)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Thomas algorithm for a tridiagonal system stored in a [`SparseMatrix`].
/// No pivoting: the systems assembled here are column diagonally dominant.
pub fn solve_tridiagonal(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 0..n {
        let lower = if i > 0 { a.get(i, i - 1) } else { 0.0 };
        let upper = if i + 1 < n { a.get(i, i + 1) } else { 0.0 };
        let (cp, dp) = if i > 0 { (c_prime[i - 1], d_prime[i - 1]) } else { (0.0, 0.0) };
        let pivot = a.get(i, i) - lower * cp;
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular(format!("zero pivot in row {i}")));
        }
        c_prime[i] = upper / pivot;
        d_prime[i] = (b[i] - lower * dp) / pivot;
    }
    let mut x = d_prime;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c_prime[i] * x[i + 1];
    }
    Ok(x)
}

/// Direct solver bound to one sparsity pattern.
pub struct DirectSolver {
    kind: SolverKind,
}

enum SolverKind {
    Tridiagonal,
    Sparse {
        symbolic: SymbolicLu<usize>,
        pattern: SymbolicSparseColMat<usize>,
        /// CSC slot k holds CSR value `csr_slot[k]`.
        csr_slot: Vec<usize>,
    },
}

impl DirectSolver {
    pub fn new(pattern: &SparseMatrix) -> Result<Self> {
        if pattern.is_tridiagonal() {
            return Ok(DirectSolver { kind: SolverKind::Tridiagonal });
        }
        // The pattern is structurally symmetric, so the CSC column pattern
        // equals the CSR row pattern; only the values need transposing.
        let n = pattern.dim();
        let col_ptr = pattern.row_ptr.clone();
        let row_idx = pattern.col_idx.clone();
        let mut csr_slot = Vec::with_capacity(row_idx.len());
        for col in 0..n {
            for &row in &row_idx[col_ptr[col]..col_ptr[col + 1]] {
                let k = pattern
                    .slot(row, col)
                    .ok_or_else(|| Error::InvalidArgument("sparsity pattern is not symmetric".into()))?;
                csr_slot.push(k);
            }
        }
        let pattern = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let symbolic = SymbolicLu::try_new(pattern.as_ref())
            .map_err(|e| Error::Singular(format!("symbolic LU failed: {e:?}")))?;
        Ok(DirectSolver {
            kind: SolverKind::Sparse { symbolic, pattern, csr_slot },
        })
    }

    pub fn is_tridiagonal(&self) -> bool {
        matches!(self.kind, SolverKind::Tridiagonal)
    }

    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let x = match &self.kind {
            SolverKind::Tridiagonal => solve_tridiagonal(a, b)?,
            SolverKind::Sparse { symbolic, pattern, csr_slot } => {
                let n = a.dim();
                let values: Vec<f64> = csr_slot.iter().map(|&k| a.values[k]).collect();
                let mat = SparseColMatRef::new(pattern.as_ref(), &values);
                let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat)
                    .map_err(|e| Error::Singular(format!("numeric LU failed: {e:?}")))?;
                let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
                let sol = lu.solve(&rhs);
                (0..n).map(|i| sol[(i, 0)]).collect()
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(x)
    }
}
