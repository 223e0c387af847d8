//! Compressed sparse row storage and direct solves.
//!
//! Factorization is delegated to faer's sparse LU with partial pivoting,
//! which handles the indefinite velocity–pressure systems. Every solve is
//! followed by an explicit residual check; a non-finite or inaccurate result
//! is reported as an error instead of being returned.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};

use crate::{Error, Result};

/// Relative residual bound every accepted solve must meet.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Square or rectangular matrix in CSR form.
///
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Build from `(row, col, value)` entries, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(row, col, _) in entries {
            if row >= nrows || col >= ncols {
                return Err(Error::IndexOutOfRange {
                    row,
                    col,
                    nrows,
                    ncols,
                });
            }
        }
        // Counting sort by row, then sort each row by column. The sort is
        // stable, so duplicates are summed in insertion order.
        let mut counts = vec![0usize; nrows + 1];
        for &(row, _, _) in entries {
            counts[row + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); entries.len()];
        for &(row, col, v) in entries {
            by_row[next[row]] = (col, v);
            next[row] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut by_row[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == col {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(col);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let entries: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (j, i, v))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &entries).expect("transpose indices in range")
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other` over the union of both patterns.
    pub fn add(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows * self.ncols,
                actual: other.nrows * other.ncols,
            });
        }
        let mut entries = Vec::with_capacity(self.nnz() + other.nnz());
        entries.extend(
            self.triplets()
                .into_iter()
                .map(|(i, j, v)| (i, j, alpha * v)),
        );
        entries.extend(
            other
                .triplets()
                .into_iter()
                .map(|(i, j, v)| (i, j, beta * v)),
        );
        Self::from_triplets(self.nrows, self.ncols, &entries)
    }

    /// Linear combination `Σ cₖ Aₖ` of equally shaped matrices.
    pub fn combine(terms: &[(f64, &SparseMatrix)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination of matrices".into()))?;
        let mut entries = Vec::new();
        for (c, m) in terms {
            if m.nrows != first.nrows || m.ncols != first.ncols {
                return Err(Error::DimensionMismatch {
                    expected: first.nrows * first.ncols,
                    actual: m.nrows * m.ncols,
                });
            }
            entries.extend(m.triplets().into_iter().map(|(i, j, v)| (i, j, c * v)));
        }
        Self::from_triplets(first.nrows, first.ncols, &entries)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|A − Aᵀ|` entry.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        self.add(1.0, &t, -1.0)
            .map(|d| d.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .unwrap_or(f64::INFINITY)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Row sums, i.e. `A·1`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Matrix Market coordinate text (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_matrix_market()).map_err(|e| Error::io(path, e))
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// `‖b − Ax‖₂`, recomputed after the solve.
    pub residual_norm: f64,
    /// `RESIDUAL_TOLERANCE · (‖A‖_F ‖x‖₂ + ‖b‖₂)`.
    pub tolerance: f64,
    pub factor_time: Duration,
    pub solve_time: Duration,
}

impl SolveReport {
    pub fn relative_residual(&self) -> f64 {
        if self.tolerance > 0.0 {
            self.residual_norm * RESIDUAL_TOLERANCE / self.tolerance
        } else {
            self.residual_norm
        }
    }

    pub fn within_tolerance(&self) -> bool {
        self.residual_norm <= self.tolerance
    }
}

/// Reusable LU factorization of a square sparse matrix.
pub struct LuFactorization {
    what: String,
    matrix: SparseMatrix,
    frobenius: f64,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    factor_time: Duration,
}

impl std::fmt::Debug for LuFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactorization")
            .field("what", &self.what)
            .field("n", &self.matrix.nrows)
            .field("nnz", &self.matrix.nnz())
            .finish()
    }
}

impl LuFactorization {
    /// Factor `a`; `what` names the system in error messages.
    pub fn new(a: &SparseMatrix, what: &str) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::DimensionMismatch {
                expected: a.nrows,
                actual: a.ncols,
            });
        }
        let singular = |detail: String| Error::Singular {
            what: what.to_string(),
            detail,
        };
        if a.values.iter().any(|v| !v.is_finite()) {
            return Err(singular("matrix has non-finite entries".into()));
        }
        // Sequential factorization keeps results bitwise reproducible.
        faer::set_global_parallelism(Par::Seq);
        let start = Instant::now();
        let triplets: Vec<Triplet<usize, usize, f64>> = a
            .triplets()
            .into_iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows, a.ncols, &triplets)
            .map_err(|e| Error::Solver {
                what: what.to_string(),
                detail: format!("{e:?}"),
            })?;
        let lu = csc.sp_lu().map_err(|e| singular(format!("{e:?}")))?;
        Ok(Self {
            what: what.to_string(),
            frobenius: a.frobenius_norm(),
            matrix: a.clone(),
            lu,
            factor_time: start.elapsed(),
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solve `A x = b`, with up to two steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.matrix.nrows;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        let start = Instant::now();
        let bnorm = norm2(b);
        let residual = |x: &[f64]| -> Vec<f64> {
            self.matrix
                .matvec(x)
                .iter()
                .zip(b)
                .map(|(ax, bi)| bi - ax)
                .collect()
        };
        let mut x = self.raw_solve(b);
        let mut r = residual(&x);
        for _ in 0..2 {
            if !x.iter().all(|v| v.is_finite()) {
                break;
            }
            let tol = RESIDUAL_TOLERANCE * (self.frobenius * norm2(&x) + bnorm);
            if norm2(&r) <= tol {
                break;
            }
            let dx = self.raw_solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
            r = residual(&x);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular {
                what: self.what.clone(),
                detail: "factorization produced non-finite solution (zero pivot)".into(),
            });
        }
        let report = SolveReport {
            residual_norm: norm2(&r),
            tolerance: RESIDUAL_TOLERANCE * (self.frobenius * norm2(&x) + bnorm),
            factor_time: self.factor_time,
            solve_time: start.elapsed(),
        };
        if !report.within_tolerance() {
            return Err(Error::Solver {
                what: self.what.clone(),
                detail: format!(
                    "residual {:.3e} exceeds tolerance {:.3e}",
                    report.residual_norm, report.tolerance
                ),
            });
        }
        Ok((x, report))
    }
}

/// Factor and solve `A x = b` in one call.
pub fn solve(a: &SparseMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
    LuFactorization::new(a, "linear system")?.solve(b)
}
