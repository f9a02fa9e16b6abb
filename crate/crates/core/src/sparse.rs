//! Deterministic sparse-matrix helpers shared by the fine and coarse solvers.
//!
//! Assembly goes through [`TripletBuilder`], which compresses duplicate
//! entries by *stable* sort so that the floating-point summation order is a
//! pure function of the push order. Pushing symmetric contributions through
//! [`TripletBuilder::push_sym`] therefore yields matrices with
//! `‖A − Aᵀ‖_max = 0` exactly, not just up to rounding.
//!
//! Factorizations delegate to `faer`'s sparse direct solvers (fill-reducing
//! ordering, deterministic single-threaded execution).

use faer::sparse::SparseColMat;
use faer::sparse::Triplet;
use ndarray::Array2;

use crate::error::{FracError, Result};

/// Coordinate-format accumulator for building a [`CsrMatrix`].
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        assert!(row < self.nrows && col < self.ncols, "triplet out of range");
        self.triplets.push((row, col, val));
    }

    /// Push `val` at (row, col) and (col, row). The two mirrored entries are
    /// adjacent in the accumulation order, so compressed sums come out
    /// bit-identical across the diagonal.
    pub fn push_sym(&mut self, row: usize, col: usize, val: f64) {
        self.push(row, col, val);
        if row != col {
            self.push(col, row, val);
        }
    }

    /// Compress into CSR. Duplicates are summed in push order (stable sort),
    /// so the result is a pure function of the push sequence.
    pub fn build(self) -> CsrMatrix {
        let mut entries = self.triplets;
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut it = entries.iter().peekable();
        while let Some(&(i, j, v)) = it.next() {
            let mut acc = v;
            while let Some(&&(i2, j2, v2)) = it.peek() {
                if i2 == i && j2 == j {
                    acc += v2;
                    it.next();
                } else {
                    break;
                }
            }
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            vals.push(acc);
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

/// Compressed-sparse-row matrix with sorted, duplicate-free columns per row.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    /// Stored value at (i, j), or 0.0 when the entry is structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// xᵀ A y without materializing A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += v * y[j];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// `scale·A + diag(d)` with the union sparsity pattern.
    pub fn scaled_plus_diag(&self, scale: f64, diag: &[f64]) -> CsrMatrix {
        assert_eq!(diag.len(), self.nrows.min(self.ncols));
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for (i, &d) in diag.iter().enumerate() {
            b.push(i, i, d);
        }
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                b.push(i, j, scale * v);
            }
        }
        b.build()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max_{ij} |a_ij − a_ji|; 0.0 for matrices assembled via `push_sym`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[[i, j]] += v;
            }
        }
        d
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets).map_err(|e| {
            FracError::SolveFailure {
                context: "sparse conversion".into(),
                detail: format!("{e:?}"),
            }
        })
    }
}

fn vec_to_mat(v: &[f64]) -> faer::Mat<f64> {
    faer::Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn mat_col_to_vec(m: &faer::Mat<f64>, col: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, col)]).collect()
}

/// Sparse Cholesky factorization of a symmetric positive-definite matrix.
pub struct CholFactor {
    factor: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl CholFactor {
    pub fn new(a: &CsrMatrix, context: &str) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let f = a
            .to_faer()?
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| FracError::SolveFailure {
                context: context.into(),
                detail: format!("Cholesky failed: {e:?}"),
            })?;
        Ok(CholFactor {
            factor: f,
            n: a.nrows(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        use faer::linalg::solvers::SolveCore;
        let mut m = vec_to_mat(rhs);
        self.factor.solve_in_place_with_conj(faer::Conj::No, m.as_mut());
        mat_col_to_vec(&m, 0)
    }
}

/// Sparse LU factorization for symmetric-indefinite (saddle-point) systems.
pub struct LuFactor {
    factor: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: &CsrMatrix, context: &str) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let f = a.to_faer()?.sp_lu().map_err(|e| FracError::SolveFailure {
            context: context.into(),
            detail: format!("LU failed: {e:?}"),
        })?;
        Ok(LuFactor {
            factor: f,
            n: a.nrows(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        use faer::linalg::solvers::SolveCore;
        let mut m = vec_to_mat(rhs);
        self.factor.solve_in_place_with_conj(faer::Conj::No, m.as_mut());
        mat_col_to_vec(&m, 0)
    }

    /// Solve for several right-hand sides (columns) at once.
    pub fn solve_multi(&self, rhs_cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        use faer::linalg::solvers::SolveCore;
        let k = rhs_cols.len();
        let mut m = faer::Mat::from_fn(self.n, k, |i, j| rhs_cols[j][i]);
        self.factor.solve_in_place_with_conj(faer::Conj::No, m.as_mut());
        (0..k).map(|j| mat_col_to_vec(&m, j)).collect()
    }
}
