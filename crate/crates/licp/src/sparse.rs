//! Minimal sparse linear algebra: CSR matrices and a solver for symmetric
//! positive-definite systems.
//!
//! The deformation solvers assemble their normal equations explicitly and
//! hand them to [`SpdSolver`]. The primary route is a sparse Cholesky
//! factorisation; systems the factorisation rejects (or leaves above the
//! residual contract) fall back to preconditioned conjugate gradients with
//! zero-fill incomplete Cholesky, then Jacobi, preconditioning.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with `f64` values.
///
/// Rows keep their column indices sorted; duplicate entries are merged at
/// construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Build directly from per-row sorted (col, value) lists with no duplicates.
    /// Build from pre-validated raw CSR arrays (sorted, duplicate-free rows).
    pub fn from_raw_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), nrows + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        debug_assert_eq!(*row_ptr.last().unwrap(), col_idx.len());
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_sorted_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < ncols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// C = self * other (classic Gustavson row-by-row product).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut accum = vec![0.0; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut cols_here: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            cols_here.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.values[k];
                let mid = self.col_idx[k];
                for k2 in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    let c = other.col_idx[k2];
                    if marker[c] != r {
                        marker[c] = r;
                        accum[c] = 0.0;
                        cols_here.push(c);
                    }
                    accum[c] += a * other.values[k2];
                }
            }
            cols_here.sort_unstable();
            for &c in &cols_here {
                col_idx.push(c);
                values.push(accum[c]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// In-place scale of every stored value.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Add `delta` to the diagonal entry (r, r); the entry must exist or is inserted.
    pub fn add_to_diagonal(&mut self, r: usize, delta: f64) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k] += delta,
            Err(k) => {
                let at = range.start + k;
                self.col_idx.insert(at, r);
                self.values.insert(at, delta);
                for p in self.row_ptr[r + 1..].iter_mut() {
                    *p += 1;
                }
            }
        }
    }

    /// Dense copy for small-system tests and oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Zero-fill incomplete Cholesky factor (lower triangle, CSR) together with
/// its transpose for the backward sweep.
struct IncompleteCholesky {
    lower: CsrMatrix,
    upper: CsrMatrix,
}

impl IncompleteCholesky {
    /// Returns `None` if a pivot becomes non-positive (factorisation breakdown).
    fn factor(a: &CsrMatrix) -> Option<Self> {
        let n = a.nrows();
        // Lower-triangular pattern of A, values filled progressively.
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<(usize, f64)> = a.row(i).filter(|&(c, _)| c <= i).collect();
            rows.push(row);
        }
        let mut diag = vec![0.0; n];
        for i in 0..n {
            // Split borrow: rows[0..i] are finished, rows[i] is being built.
            let (done, rest) = rows.split_at_mut(i);
            let row_i = &mut rest[0];
            let mut row_i_diag = 0.0;
            for idx in 0..row_i.len() {
                let (j, a_ij) = row_i[idx];
                let mut sum = 0.0;
                if j < i {
                    // dot of rows i and j over columns < j
                    let row_j = &done[j];
                    let (mut p, mut q) = (0usize, 0usize);
                    while p < idx && q < row_j.len() {
                        let (cp, vp) = row_i[p];
                        let (cq, vq) = row_j[q];
                        if cp >= j || cq >= j {
                            break;
                        }
                        match cp.cmp(&cq) {
                            std::cmp::Ordering::Less => p += 1,
                            std::cmp::Ordering::Greater => q += 1,
                            std::cmp::Ordering::Equal => {
                                sum += vp * vq;
                                p += 1;
                                q += 1;
                            }
                        }
                    }
                    let l_ij = (a_ij - sum) / diag[j];
                    row_i[idx].1 = l_ij;
                } else {
                    // diagonal
                    for &(c, v) in row_i[..idx].iter() {
                        debug_assert!(c < i);
                        sum += v * v;
                    }
                    let d2 = a_ij - sum;
                    if d2 <= 0.0 || !d2.is_finite() {
                        return None;
                    }
                    row_i_diag = d2.sqrt();
                    row_i[idx].1 = row_i_diag;
                }
            }
            if row_i_diag == 0.0 {
                return None; // missing structural diagonal
            }
            diag[i] = row_i_diag;
        }
        let lower = CsrMatrix::from_sorted_rows(n, rows);
        let upper = transpose(&lower);
        Some(IncompleteCholesky { lower, upper })
    }

    /// z = (L L^T)^{-1} r
    fn apply(&self, r: &[f64], z: &mut [f64], tmp: &mut [f64]) {
        let n = r.len();
        // forward: L tmp = r
        for i in 0..n {
            let mut acc = r[i];
            let mut diag = 1.0;
            for (c, v) in self.lower.row(i) {
                if c < i {
                    acc -= v * tmp[c];
                } else {
                    diag = v;
                }
            }
            tmp[i] = acc / diag;
        }
        // backward: L^T z = tmp (upper is CSR of L^T, rows sorted ascending)
        for i in (0..n).rev() {
            let mut acc = tmp[i];
            let mut diag = 1.0;
            for (c, v) in self.upper.row(i) {
                if c > i {
                    acc -= v * z[c];
                } else {
                    diag = v;
                }
            }
            z[i] = acc / diag;
        }
    }
}

fn transpose(a: &CsrMatrix) -> CsrMatrix {
    let mut counts = vec![0usize; a.ncols()];
    for &c in &a.col_idx {
        counts[c] += 1;
    }
    let mut row_ptr = Vec::with_capacity(a.ncols() + 1);
    row_ptr.push(0usize);
    for c in 0..a.ncols() {
        row_ptr.push(row_ptr[c] + counts[c]);
    }
    let mut col_idx = vec![0usize; a.nnz()];
    let mut values = vec![0.0; a.nnz()];
    let mut next = row_ptr.clone();
    for r in 0..a.nrows() {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            let c = a.col_idx[k];
            let at = next[c];
            col_idx[at] = r;
            values[at] = a.values[k];
            next[c] += 1;
        }
    }
    CsrMatrix {
        nrows: a.ncols(),
        ncols: a.nrows(),
        row_ptr,
        col_idx,
        values,
    }
}

enum Preconditioner {
    Ic(IncompleteCholesky),
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    fn build(a: &CsrMatrix) -> Self {
        match IncompleteCholesky::factor(a) {
            Some(ic) => Preconditioner::Ic(ic),
            None => {
                let inv_diag = (0..a.nrows())
                    .map(|i| {
                        let d = a.get(i, i);
                        if d.abs() > 0.0 {
                            1.0 / d
                        } else {
                            1.0
                        }
                    })
                    .collect();
                Preconditioner::Jacobi(inv_diag)
            }
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64], tmp: &mut [f64]) {
        match self {
            Preconditioner::Ic(ic) => ic.apply(r, z, tmp),
            Preconditioner::Jacobi(inv) => {
                for i in 0..r.len() {
                    z[i] = r[i] * inv[i];
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Factorisation-first solver shared across several right-hand sides of one
/// SPD system (the three coordinate columns of a deformation solve).
pub struct SpdSolver<'a> {
    a: &'a CsrMatrix,
    direct: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
    precond: std::sync::OnceLock<Preconditioner>,
    pub rel_tol: f64,
    pub max_iterations: usize,
}

/// Recently used symbolic factorisations, keyed by the exact sparsity
/// pattern. Deformation pipelines factor a fixed pattern with fresh values
/// every iteration, so the fill-reducing analysis is paid once per topology.
struct SymbolicCacheEntry {
    nrows: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: faer::sparse::linalg::solvers::SymbolicLlt<usize>,
}

static SYMBOLIC_CACHE: std::sync::Mutex<Vec<SymbolicCacheEntry>> =
    std::sync::Mutex::new(Vec::new());

const SYMBOLIC_CACHE_SLOTS: usize = 4;

fn cached_symbolic(
    a: &CsrMatrix,
    pattern: &faer::sparse::SymbolicSparseColMat<usize>,
) -> Option<faer::sparse::linalg::solvers::SymbolicLlt<usize>> {
    let mut cache = SYMBOLIC_CACHE.lock().expect("symbolic cache lock");
    if let Some(at) = cache
        .iter()
        .position(|e| e.nrows == a.nrows && e.row_ptr == a.row_ptr && e.col_idx == a.col_idx)
    {
        let entry = cache.remove(at);
        let symbolic = entry.symbolic.clone();
        cache.insert(0, entry);
        return Some(symbolic);
    }
    drop(cache);
    let symbolic =
        faer::sparse::linalg::solvers::SymbolicLlt::try_new(pattern.as_ref(), faer::Side::Lower)
            .ok()?;
    let mut cache = SYMBOLIC_CACHE.lock().expect("symbolic cache lock");
    cache.insert(
        0,
        SymbolicCacheEntry {
            nrows: a.nrows,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            symbolic: symbolic.clone(),
        },
    );
    cache.truncate(SYMBOLIC_CACHE_SLOTS);
    Some(symbolic)
}

impl<'a> SpdSolver<'a> {
    /// `a` must be symmetric: its CSR arrays double as the CSC layout handed
    /// to the factorisation.
    pub fn new(a: &'a CsrMatrix, rel_tol: f64, max_iterations: usize) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        // single-threaded factorisation keeps floating-point summation
        // order, and therefore whole pipeline runs, bit-reproducible
        static SEQ: std::sync::Once = std::sync::Once::new();
        SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let direct = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let pattern = faer::sparse::SymbolicSparseColMat::<usize>::new_checked(
                a.nrows,
                a.ncols,
                a.row_ptr.clone(),
                None,
                a.col_idx.clone(),
            );
            let symbolic = cached_symbolic(a, &pattern)?;
            let mat = faer::sparse::SparseColMat::<usize, f64>::new(pattern, a.values.clone());
            faer::sparse::linalg::solvers::Llt::try_new_with_symbolic(
                symbolic,
                mat.as_ref(),
                faer::Side::Lower,
            )
            .ok()
        }))
        .unwrap_or(None);
        if direct.is_none() {
            log::debug!("sparse Cholesky unavailable; conjugate-gradient fallback");
        }
        SpdSolver {
            a,
            direct,
            precond: std::sync::OnceLock::new(),
            rel_tol,
            max_iterations,
        }
    }

    /// Solves A x = b to the residual contract
    /// ||b - A x|| <= rel_tol * ||b||, which for normal-equation systems is
    /// exactly the gradient contract ||A^T(A x - b)|| <= tol * ||A^T b|| of
    /// the callers.
    ///
    /// The Cholesky solution is residual-checked; if it misses the contract
    /// (or the factorisation was rejected) preconditioned CG continues from
    /// the best available start.
    pub fn solve(&self, b: &[f64], x0: &[f64]) -> Result<(Vec<f64>, CgReport)> {
        let n = self.a.nrows();
        assert_eq!(b.len(), n);
        assert_eq!(x0.len(), n);
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok((
                vec![0.0; n],
                CgReport {
                    iterations: 0,
                    relative_residual: 0.0,
                    converged: true,
                },
            ));
        }
        // a warm start that already meets the contract is the answer; at
        // extreme stiffness it is also better conditioned than any solve
        let r0 = {
            let ax = self.a.mul_vec(x0);
            b.iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt()
                / b_norm
        };
        if r0 <= self.rel_tol {
            return Ok((
                x0.to_vec(),
                CgReport {
                    iterations: 0,
                    relative_residual: r0,
                    converged: true,
                },
            ));
        }
        let mut start = x0.to_vec();
        if let Some(llt) = &self.direct {
            use faer::linalg::solvers::Solve;
            let rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
            let solved = llt.solve(&rhs);
            let x: Vec<f64> = (0..n).map(|i| solved[(i, 0)]).collect();
            let ax = self.a.mul_vec(&x);
            let res = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt()
                / b_norm;
            if res <= self.rel_tol {
                return Ok((
                    x,
                    CgReport {
                        iterations: 0,
                        relative_residual: res,
                        converged: true,
                    },
                ));
            }
            start = x; // polish from the factorisation's answer
        }
        self.solve_cg(b, &start, b_norm)
    }

    fn solve_cg(&self, b: &[f64], x0: &[f64], b_norm: f64) -> Result<(Vec<f64>, CgReport)> {
        let n = self.a.nrows();
        let mut x = x0.to_vec();
        let mut r = b.to_vec();
        let ax = self.a.mul_vec(&x);
        for i in 0..n {
            r[i] -= ax[i];
        }
        let precond = self.precond.get_or_init(|| Preconditioner::build(self.a));
        let mut z = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        precond.apply(&r, &mut z, &mut tmp);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut res = norm(&r) / b_norm;
        if res <= self.rel_tol {
            return Ok((
                x,
                CgReport {
                    iterations: 0,
                    relative_residual: res,
                    converged: true,
                },
            ));
        }
        let mut ap = vec![0.0; n];
        for iter in 1..=self.max_iterations {
            self.a.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::SolverDidNotConverge {
                    achieved: res,
                    target: self.rel_tol,
                    iterations: iter,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res = norm(&r) / b_norm;
            if res <= self.rel_tol {
                return Ok((
                    x,
                    CgReport {
                        iterations: iter,
                        relative_residual: res,
                        converged: true,
                    },
                ));
            }
            precond.apply(&r, &mut z, &mut tmp);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SolverDidNotConverge {
            achieved: res,
            target: self.rel_tol,
            iterations: self.max_iterations,
        })
    }
}

/// One-shot convenience wrapper around [`SpdSolver`].
pub fn solve_spd(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, CgReport)> {
    SpdSolver::new(a, rel_tol, max_iterations).solve(b, x0)
}
