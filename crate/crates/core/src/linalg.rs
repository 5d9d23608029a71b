//! Sparse linear systems: a thin wrapper over faer's sparse LU with a
//! residual check, and damped Gauss-Seidel sweeps for systems too large to
//! factor.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

/// Systems with more unknowns than this are solved iteratively.
pub const DIRECT_LIMIT: usize = 50_000;

/// Sparse square matrix stored by rows.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(n: usize) -> Self {
        SparseMatrix { n, rows: vec![Vec::new(); n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to entry `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if let Some(e) = self.rows[i].iter_mut().find(|e| e.0 == j) {
            e.1 += v;
        } else {
            self.rows[i].push((j, v));
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn replace_row(&mut self, i: usize, entries: Vec<(usize, f64)>) {
        self.rows[i] = entries;
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `‖A x − b‖_∞`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        self.mul(x)
            .iter()
            .zip(b)
            .map(|(ax, bi)| (ax - bi).abs())
            .fold(0.0, |m, r| if r.is_nan() { f64::INFINITY } else { m.max(r) })
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = SparseMatrix::new(self.n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                t.rows[j].push((i, v));
            }
        }
        t
    }
}

fn scale(b: &[f64]) -> f64 {
    b.iter().map(|v| v.abs()).fold(1.0, f64::max)
}

/// Solve `A x = b`, directly when small enough, to residual `tol·max(1, ‖b‖_∞)`.
pub fn solve(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    if a.n <= DIRECT_LIMIT {
        solve_direct(a, b, tol)
    } else {
        solve_iterative(a, b, tol, 200_000)
    }
}

pub fn solve_direct(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    // faer otherwise splits the factorization over the rayon pool, and the
    // rounding then depends on the worker count
    static SEQUENTIAL: std::sync::Once = std::sync::Once::new();
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    let mut trips = Vec::with_capacity(a.rows.iter().map(Vec::len).sum());
    for (i, r) in a.rows.iter().enumerate() {
        for &(j, v) in r {
            trips.push(Triplet::new(i, j, v));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| Error::Singular(format!("{e:?}")))?;
    let lu = m.sp_lu().map_err(|e| Error::Singular(format!("{e:?}")))?;
    let rhs = faer::col::Col::<f64>::from_fn(n, |i| b[i]);
    let sol = lu.solve(&rhs);
    let mut x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    let target = tol * scale(b);
    let mut res = a.residual(&x, b);
    // a couple of refinement steps absorb the LU rounding on badly scaled systems
    for _ in 0..3 {
        if res <= target {
            break;
        }
        let r: Vec<f64> = a.mul(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        let dr = lu.solve(&faer::col::Col::<f64>::from_fn(n, |i| r[i]));
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dr[i];
        }
        res = a.residual(&x, b);
    }
    if !res.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    if res > target {
        return Err(Error::NotConverged { residual: res, iterations: 3 });
    }
    Ok(x)
}

/// Gauss-Seidel sweeps; converges for the diagonally dominant M-matrices
/// `I − P` restricted to a domain the chain leaves.
pub fn solve_iterative(a: &SparseMatrix, b: &[f64], tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let mut diag = vec![0.0; n];
    for (i, r) in a.rows.iter().enumerate() {
        diag[i] = r.iter().find(|e| e.0 == i).map_or(0.0, |e| e.1);
        if diag[i] == 0.0 {
            return Err(Error::Singular(format!("zero diagonal in row {i}")));
        }
    }
    let mut x = vec![0.0; n];
    let target = tol * scale(b);
    let mut best = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        for i in 0..n {
            let mut s = b[i];
            for &(j, v) in &a.rows[i] {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / diag[i];
        }
        if sweep % 10 == 0 || sweep == max_sweeps {
            let res = a.residual(&x, b);
            best = best.min(res);
            if res <= target {
                return Ok(x);
            }
            if !res.is_finite() {
                break;
            }
        }
    }
    Err(Error::NotConverged { residual: best, iterations: max_sweeps })
}

/// Dense solve with partial pivoting; `a` is row-major `n × n`.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() < 1e-300 {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Ok(x)
}

/// Inverse of a small dense matrix by Gauss-Jordan elimination.
pub fn dense_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[piv * n + col].abs() < 1e-14 {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        for k in 0..n {
            m.swap(piv * n + k, col * n + k);
            inv.swap(piv * n + k, col * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[r * n + k] -= f * m[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> SparseMatrix {
        // I − P for the simple walk on {1..n} killed at 0 and n+1
        let mut a = SparseMatrix::new(n);
        for i in 0..n {
            a.add(i, i, 1.0);
            if i > 0 {
                a.add(i, i - 1, -0.5);
            }
            if i + 1 < n {
                a.add(i, i + 1, -0.5);
            }
        }
        a
    }

    #[test]
    fn direct_and_iterative_agree_on_exit_times() {
        // E^k τ = k (n + 1 − k) for the simple walk on a segment
        let n = 30;
        let a = path_laplacian(n);
        let b = vec![1.0; n];
        let x = solve_direct(&a, &b, 1e-12).unwrap();
        let y = solve_iterative(&a, &b, 1e-11, 1_000_000).unwrap();
        for k in 1..=n {
            let exact = (k * (n + 1 - k)) as f64;
            assert!((x[k - 1] - exact).abs() < 1e-9);
            assert!((y[k - 1] - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_helpers() {
        let a = vec![2.0, 1.0, 1.0, 3.0];
        let x = dense_solve(a.clone(), vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        let inv = dense_inverse(&a, 2).unwrap();
        assert!((inv[0] - 0.6).abs() < 1e-15 && (inv[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut a = SparseMatrix::new(2);
        a.add(0, 0, 1.0);
        a.add(0, 1, -1.0);
        a.add(1, 0, -1.0);
        a.add(1, 1, 1.0);
        let r = solve_direct(&a, &[1.0, 0.0], 1e-10);
        assert!(r.is_err(), "{r:?}");
    }
}
