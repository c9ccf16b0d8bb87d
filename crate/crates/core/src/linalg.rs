//! Small sparse linear-algebra toolkit: CSR storage, restarted GMRES with
//! diagonal preconditioning, and conjugate gradients in a weighted inner
//! product.

use crate::error::{QpatError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Inner product with a diagonal weight, `Σ w_i a_i b_i`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    w.iter()
        .zip(a.iter().zip(b))
        .map(|(wi, (x, y))| wi * x * y)
        .sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed
    /// in the order given, so identical input yields bitwise-identical output.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0u32; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = fill[r];
            cols[k] = c as u32;
            vals[k] = v;
            fill[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            // stable sort keeps duplicate summation order deterministic
            scratch.sort_by_key(|e| e.0);
            let mut iter = scratch.iter().peekable();
            while let Some(&(c, v)) = iter.next() {
                let mut acc = v;
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    acc += v2;
                    iter.next();
                }
                col_idx.push(c);
                values.push(acc);
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            *yr = acc;
        }
    }

    /// `y += A^T x`
    pub fn mul_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k] as usize] += self.values[k] * xr;
            }
        }
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.values[k] * x[self.col_idx[k] as usize];
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.nrows.min(self.ncols);
        let mut d = vec![0.0; n];
        for (r, dr) in d.iter_mut().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] as usize == r {
                    *dr += self.values[k];
                }
            }
        }
        d
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((self.col_idx[k] as usize, r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Dense row-major copy; meant for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row[self.col_idx[k] as usize] += self.values[k];
            }
        }
        d
    }
}

/// Square linear operator acting on `f64` slices.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl GmresConfig {
    /// Defaults used for transport solves: relative residual 1e-8, at most
    /// ten times the unknown count iterations.
    pub fn for_dim(n: usize) -> Self {
        GmresConfig {
            tol: 1e-8,
            restart: 60,
            max_iter: 10 * n.max(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Right preconditioner `z ≈ A⁻¹ r`.
pub trait Preconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

/// Jacobi: the slice holds the inverse diagonal.
impl Preconditioner for [f64] {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(self) {
            *zi = di * ri;
        }
    }
}

/// Incomplete LU factorization with zero fill on a square CSR pattern,
/// optionally in a permuted node order.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    diag_pos: Vec<usize>,
    /// Strict lower part holds L (unit diagonal implied), the rest U.
    values: Vec<f64>,
    /// `perm[new] = old`
    perm: Vec<usize>,
}

impl Ilu0 {
    /// Factorizes `P A Pᵀ` where `perm[new] = old`. The pattern must
    /// contain every diagonal entry.
    pub fn new(
        row_ptr: &[usize],
        col_idx: &[u32],
        values: &[f64],
        perm: Vec<usize>,
    ) -> Result<Self> {
        let n = row_ptr.len() - 1;
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut p_row_ptr = Vec::with_capacity(n + 1);
        let mut p_col = Vec::with_capacity(col_idx.len());
        let mut p_val = Vec::with_capacity(col_idx.len());
        p_row_ptr.push(0);
        let mut row: Vec<(u32, f64)> = Vec::new();
        for &old in &perm {
            row.clear();
            for k in row_ptr[old]..row_ptr[old + 1] {
                row.push((inv[col_idx[k] as usize] as u32, values[k]));
            }
            row.sort_unstable_by_key(|e| e.0);
            for &(c, v) in &row {
                p_col.push(c);
                p_val.push(v);
            }
            p_row_ptr.push(p_col.len());
        }
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in p_row_ptr[i]..p_row_ptr[i + 1] {
                if p_col[k] as usize == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(QpatError::Infeasible(format!(
                    "missing diagonal in row {i}"
                )));
            }
        }
        let mut marker = vec![usize::MAX; n];
        for i in 0..n {
            for k in p_row_ptr[i]..p_row_ptr[i + 1] {
                marker[p_col[k] as usize] = k;
            }
            for kk in p_row_ptr[i]..diag_pos[i] {
                let k = p_col[kk] as usize;
                let pivot = p_val[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(QpatError::Infeasible(format!("zero pivot in row {k}")));
                }
                let lik = p_val[kk] / pivot;
                p_val[kk] = lik;
                for jj in diag_pos[k] + 1..p_row_ptr[k + 1] {
                    let m = marker[p_col[jj] as usize];
                    if m != usize::MAX {
                        p_val[m] -= lik * p_val[jj];
                    }
                }
            }
            for k in p_row_ptr[i]..p_row_ptr[i + 1] {
                marker[p_col[k] as usize] = usize::MAX;
            }
            if p_val[diag_pos[i]] == 0.0 {
                return Err(QpatError::Infeasible(format!("zero pivot in row {i}")));
            }
        }
        Ok(Ilu0 {
            n,
            row_ptr: p_row_ptr,
            col_idx: p_col,
            diag_pos,
            values: p_val,
            perm,
        })
    }

    /// `z = (LU)⁻¹ r` in the original ordering.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let mut y: Vec<f64> = self.perm.iter().map(|&o| r[o]).collect();
        for i in 0..self.n {
            let mut acc = y[i];
            for k in self.row_ptr[i]..self.diag_pos[i] {
                acc -= self.values[k] * y[self.col_idx[k] as usize];
            }
            y[i] = acc;
        }
        for i in (0..self.n).rev() {
            let mut acc = y[i];
            for k in self.diag_pos[i] + 1..self.row_ptr[i + 1] {
                acc -= self.values[k] * y[self.col_idx[k] as usize];
            }
            y[i] = acc / self.values[self.diag_pos[i]];
        }
        for (new, &old) in self.perm.iter().enumerate() {
            z[old] = y[new];
        }
    }

    /// `z = (LU)⁻ᵀ r` in the original ordering.
    pub fn solve_transpose(&self, r: &[f64], z: &mut [f64]) {
        let mut y: Vec<f64> = self.perm.iter().map(|&o| r[o]).collect();
        for i in 0..self.n {
            y[i] /= self.values[self.diag_pos[i]];
            let yi = y[i];
            for k in self.diag_pos[i] + 1..self.row_ptr[i + 1] {
                y[self.col_idx[k] as usize] -= self.values[k] * yi;
            }
        }
        for i in (0..self.n).rev() {
            let yi = y[i];
            for k in self.row_ptr[i]..self.diag_pos[i] {
                y[self.col_idx[k] as usize] -= self.values[k] * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            z[old] = y[new];
        }
    }
}

/// Restarted GMRES with right preconditioning, starting from `x`.
///
/// Convergence is declared on the true relative residual `‖b − Ax‖/‖b‖`.
pub fn gmres<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized>(
    op: &A,
    prec: &P,
    b: &[f64],
    x: &mut [f64],
    cfg: &GmresConfig,
) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let m = cfg.restart.max(1).min(n.max(1));
    let mut total = 0usize;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = (0..=m).map(|_| vec![0.0; n]).collect();
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];

    loop {
        op.apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        let rel = beta / b_norm;
        if rel <= cfg.tol {
            return Ok(SolveStats {
                iterations: total,
                residual: rel,
            });
        }
        if total >= cfg.max_iter {
            return Err(QpatError::NoConvergence {
                iterations: total,
                residual: rel,
            });
        }
        for i in 0..n {
            basis[0][i] = r[i] / beta;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            prec.precondition(&basis[k], &mut z);
            op.apply(&z, &mut w);
            for j in 0..=k {
                let hjk = dot(&w, &basis[j]);
                hess[j][k] = hjk;
                axpy(-hjk, &basis[j], &mut w);
            }
            let hnorm = norm(&w);
            hess[k + 1][k] = hnorm;
            if hnorm > 0.0 {
                for i in 0..n {
                    basis[k + 1][i] = w[i] / hnorm;
                }
            }
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = (hess[k][k] * hess[k][k] + hess[k + 1][k] * hess[k + 1][k]).sqrt();
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = cs[k] * hess[k][k] + sn[k] * hess[k + 1][k];
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            // stop a little below tol so the true residual check passes
            if g[k + 1].abs() / b_norm <= 0.5 * cfg.tol || hnorm == 0.0 || total >= cfg.max_iter {
                break;
            }
        }
        // back substitution
        let mut yk = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= hess[i][j] * yk[j];
            }
            yk[i] = acc / hess[i][i];
        }
        w.iter_mut().for_each(|v| *v = 0.0);
        for (j, yj) in yk.iter().enumerate() {
            axpy(*yj, &basis[j], &mut w);
        }
        prec.precondition(&w, &mut z);
        axpy(1.0, &z, x);
    }
}

/// Conjugate gradients for an operator self-adjoint and positive definite in
/// the inner product `⟨a, b⟩ = Σ w_i a_i b_i`.
pub fn conjugate_gradient<F>(
    apply: F,
    weights: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = wdot(weights, b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = wdot(weights, &r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        let rel = rr.sqrt() / b_norm;
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: rel,
            });
        }
        if it == max_iter {
            return Err(QpatError::NoConvergence {
                iterations: it,
                residual: rel,
            });
        }
        apply(&p, &mut ap);
        let alpha = rr / wdot(weights, &p, &ap);
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = wdot(weights, &r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, lo: f64, d: f64, up: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            if i > 0 {
                t.push((i, i - 1, lo));
            }
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, up));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.to_dense(), vec![vec![0.0, 3.0], vec![4.0, 0.0]]);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let a = tridiag(200, -1.3, 3.0, 0.4);
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 200];
        a.mul_vec(&xs, &mut b);
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut x = vec![0.0; 200];
        let cfg = GmresConfig {
            tol: 1e-12,
            restart: 20,
            max_iter: 2000,
        };
        gmres(&a, inv.as_slice(), &b, &mut x, &cfg).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let a = tridiag(50, -1.0, 0.01, 1.0);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let cfg = GmresConfig {
            tol: 1e-14,
            restart: 2,
            max_iter: 4,
        };
        let err = gmres(&a, vec![1.0; 50].as_slice(), &b, &mut x, &cfg).unwrap_err();
        assert!(matches!(err, QpatError::NoConvergence { .. }));
    }

    #[test]
    fn cg_weighted() {
        // operator x -> W^{-1} S x with S symmetric is W-self-adjoint
        let s = tridiag(30, -1.0, 4.0, -1.0);
        let w: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * i as f64).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            s.mul_vec(x, y);
            for (yi, wi) in y.iter_mut().zip(&w) {
                *yi /= wi;
            }
        };
        let b: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; 30];
        conjugate_gradient(apply, &w, &b, &mut x, 1e-13, 200).unwrap();
        let mut y = vec![0.0; 30];
        apply(&x, &mut y);
        for (u, v) in y.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        // no fill for tridiagonal matrices in natural order
        let a = tridiag(30, -1.3, 3.0, 0.4);
        let perm: Vec<usize> = (0..30).collect();
        let ilu = Ilu0::new(&a.row_ptr, &a.col_idx, &a.values, perm).unwrap();
        let xs: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let mut b = vec![0.0; 30];
        a.mul_vec(&xs, &mut b);
        let mut z = vec![0.0; 30];
        ilu.solve(&b, &mut z);
        for (u, v) in z.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-12);
        }
        let at = a.transpose();
        at.mul_vec(&xs, &mut b);
        ilu.solve_transpose(&b, &mut z);
        for (u, v) in z.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ilu_respects_permutation() {
        // reversed order of a tridiagonal matrix is still tridiagonal
        let a = tridiag(20, 0.5, 4.0, -2.0);
        let perm: Vec<usize> = (0..20).rev().collect();
        let ilu = Ilu0::new(&a.row_ptr, &a.col_idx, &a.values, perm).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| i as f64 - 3.0).collect();
        let mut b = vec![0.0; 20];
        a.mul_vec(&xs, &mut b);
        let mut z = vec![0.0; 20];
        ilu.solve(&b, &mut z);
        for (u, v) in z.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-11);
        }
    }
}
