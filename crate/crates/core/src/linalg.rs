//! Sparse storage, assembly and direct solves.
//!
//! Matrices are stored in compressed sparse row form. Factorization is
//! delegated to faer's sparse LU with partial pivoting; the symbolic
//! analysis is cached per sparsity pattern so repeated Newton solves on a
//! fixed structure only pay for the numeric phase.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::Mat;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Collects `(i, j, v)` contributions; duplicates are summed on [`AssemblyBuffer::finalize`].
#[derive(Clone, Debug)]
pub struct AssemblyBuffer {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl AssemblyBuffer {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        AssemblyBuffer {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        AssemblyBuffer {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if i >= self.n_rows || j >= self.n_cols {
            return Err(Error::InvalidArgument(format!(
                "entry ({i}, {j}) outside {}x{} matrix",
                self.n_rows, self.n_cols
            )));
        }
        self.entries.push((i, j, v));
        Ok(())
    }

    /// Unchecked variant for hot assembly loops whose indices are correct by construction.
    #[inline]
    pub(crate) fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.entries.push((i, j, v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn finalize(self) -> Result<SparseMatrix> {
        let AssemblyBuffer {
            n_rows,
            n_cols,
            mut entries,
        } = self;
        if let Some(&(i, j, _)) = entries.iter().find(|e| !e.2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value assembled at ({i}, {j})"
            )));
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[i + 1] += 1;
                col_idx.push(j);
                values.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
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

    /// Iterates `(col, value)` over the stored entries of row `i`.
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

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_rows);
        let mut total = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * y[self.col_idx[k]];
            }
            total += xi * s;
        }
        total
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let dst = next[j];
                col_idx[dst] = i;
                values[dst] = self.values[k];
                next[j] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        (0..self.n_rows).all(|i| {
            self.row(i)
                .all(|(j, v)| (v - t.get(i, j)).abs() <= tol * (1.0 + v.abs()))
                && t.row(i)
                    .all(|(j, v)| (v - self.get(i, j)).abs() <= tol * (1.0 + v.abs()))
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    fn pattern_key(&self) -> (usize, &[usize], &[usize]) {
        (self.n_rows, &self.row_ptr, &self.col_idx)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        // CSR of A is CSC of A^T; transpose first so faer sees A itself.
        let t = self.transpose();
        let symbolic =
            SymbolicSparseColMat::new_checked(self.n_rows, self.n_cols, t.row_ptr, None, t.col_idx);
        Ok(SparseColMat::new(symbolic, t.values))
    }

    fn first_empty_row(&self) -> Option<usize> {
        (0..self.n_rows).find(|&i| self.row(i).all(|(_, v)| v == 0.0))
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// An LU factorization ready for repeated right-hand sides.
pub struct Factorization {
    matrix: SparseMatrix,
    lu: Lu<usize, f64>,
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.n_rows;
        if b.len() != n {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let sol = self.lu.solve(&rhs);
        let x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix { pivot: k });
        }
        // numerically zero pivots are not flagged by the supernodal kernel
        let r = self.matrix.matvec(&x);
        let res: Vec<f64> = r.iter().zip(b).map(|(a, c)| a - c).collect();
        let rn = norm2(&res);
        if !(rn <= 1e-6 * (1.0 + norm2(b)) * (1.0 + norm_inf(&self.matrix.values))) {
            let k = res
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, _)| k)
                .unwrap_or(0);
            return Err(Error::SingularMatrix { pivot: k });
        }
        Ok(x)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// Direct solver that reuses the symbolic analysis while the sparsity pattern is unchanged.
#[derive(Default)]
pub struct DirectSolver {
    cached: Option<(usize, Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl DirectSolver {
    pub fn new() -> Self {
        DirectSolver { cached: None }
    }

    pub fn factorize(&mut self, a: SparseMatrix) -> Result<Factorization> {
        if a.n_rows != a.n_cols {
            return Err(Error::InvalidArgument(format!(
                "cannot factorize non-square {}x{} matrix",
                a.n_rows, a.n_cols
            )));
        }
        if let Some(i) = a.first_empty_row() {
            return Err(Error::SingularMatrix { pivot: i });
        }
        let fa = a.to_faer()?;
        let reuse = match &self.cached {
            Some((n, rp, ci, _)) => {
                let (an, arp, aci) = a.pattern_key();
                *n == an && rp.as_slice() == arp && ci.as_slice() == aci
            }
            None => false,
        };
        if !reuse {
            let symbolic = SymbolicLu::try_new(fa.symbolic())
                .map_err(|e| Error::InvalidArgument(format!("symbolic analysis failed: {e:?}")))?;
            self.cached = Some((a.n_rows, a.row_ptr.clone(), a.col_idx.clone(), symbolic));
        }
        let symbolic = self.cached.as_ref().unwrap().3.clone();
        let lu = Lu::try_new_with_symbolic(symbolic, fa.as_ref()).map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                Error::SingularMatrix { pivot: index }
            }
            faer::sparse::linalg::LuError::Generic(g) => {
                Error::InvalidArgument(format!("factorization failed: {g:?}"))
            }
        })?;
        Ok(Factorization { matrix: a, lu })
    }
}

/// One-shot direct solve of `A x = b`.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    DirectSolver::new().factorize(a.clone())?.solve(b)
}

/// Solver for a symmetric operator whose kernel is the constants, with the
/// solution normalized to zero lumped mean through a bordered system
/// `[[A, m], [m^T, 0]]`.
pub struct MeanConstrainedSolver {
    n: usize,
    mass_lumped: Vec<f64>,
    total_mass: f64,
    factor: Factorization,
}

impl MeanConstrainedSolver {
    pub fn new(a: &SparseMatrix, mass_lumped: &[f64]) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n || mass_lumped.len() != n {
            return Err(Error::InvalidArgument(
                "mean-constrained solve needs a square matrix and matching mass".into(),
            ));
        }
        let mut buf = AssemblyBuffer::with_capacity(n + 1, n + 1, a.nnz() + 2 * n);
        for i in 0..n {
            for (j, v) in a.row(i) {
                buf.push(i, j, v);
            }
            buf.push(i, n, mass_lumped[i]);
            buf.push(n, i, mass_lumped[i]);
        }
        let factor = DirectSolver::new().factorize(buf.finalize()?)?;
        Ok(MeanConstrainedSolver {
            n,
            mass_lumped: mass_lumped.to_vec(),
            total_mass: mass_lumped.iter().sum(),
            factor,
        })
    }

    /// Solves the projected problem `A x = b - m (sum b / sum m)` with `m^T x = 0`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::InvalidArgument("right-hand side length mismatch".into()));
        }
        let shift = b.iter().sum::<f64>() / self.total_mass;
        let projected: Vec<f64> = b
            .iter()
            .zip(&self.mass_lumped)
            .map(|(bi, mi)| bi - shift * mi)
            .collect();
        let scale = 1.0 + b.iter().map(|v| v.abs()).sum::<f64>();
        let mean = projected.iter().sum::<f64>();
        if !(mean.abs() <= 1e-9 * scale) {
            return Err(Error::Compatibility { mean });
        }
        let mut rhs = projected;
        rhs.push(0.0);
        let mut x = self.factor.solve(&rhs)?;
        x.truncate(self.n);
        Ok(x)
    }
}

/// One-shot form of [`MeanConstrainedSolver`].
pub fn solve_with_mean_constraint(
    a: &SparseMatrix,
    b: &[f64],
    mass_lumped: &[f64],
) -> Result<Vec<f64>> {
    MeanConstrainedSolver::new(a, mass_lumped)?.solve(b)
}
