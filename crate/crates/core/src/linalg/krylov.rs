//! Restarted GMRES (right preconditioned) and preconditioned conjugate
//! gradients.

use super::sparse::{axpy, dot, norm2, LinearOperator};
use crate::error::{Error, Result};

/// Approximate inverse action `z = P^{-1} r`. Implementations must be linear
/// in `r` so they can be used with (non-flexible) GMRES.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(diag: &[f64]) -> Self {
        Jacobi {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

impl Preconditioner for super::cholesky::Cholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve_into(r, z);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||`, recomputed from the returned `x`.
    pub residual: f64,
    pub converged: bool,
    /// Relative residual estimate after every iteration (entry 0 is the
    /// initial residual).
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GmresConfig {
    pub restart: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            restart: 50,
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

impl GmresConfig {
    pub fn with_tol(tol: f64) -> Self {
        GmresConfig {
            tol,
            ..Default::default()
        }
    }
}

fn relative_residual(a: &dyn LinearOperator, b: &[f64], x: &[f64], b_norm: f64) -> f64 {
    let mut r = a.apply_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(&r) / b_norm
}

/// Right-preconditioned restarted GMRES.
///
/// Returns `Ok` with `converged == false` when the iteration budget runs out,
/// and `Err(Breakdown)` when the Arnoldi process stalls before the residual
/// target is met.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    precond: &dyn Preconditioner,
    x0: Option<&[f64]>,
    cfg: &GmresConfig,
) -> Result<SolveReport> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("GMRES tolerance {}", cfg.tol)));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(SolveReport {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            converged: true,
            history: vec![0.0],
        });
    }
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let m = cfg.restart.max(1).min(n.max(1));
    let mut total = 0usize;
    let mut history = Vec::new();
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];

    loop {
        a.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        if history.is_empty() {
            history.push(beta / b_norm);
        }
        if beta / b_norm <= cfg.tol || total >= cfg.max_iter {
            return Ok(SolveReport {
                x,
                iterations: total,
                residual: beta / b_norm,
                converged: beta / b_norm <= cfg.tol,
                history,
            });
        }

        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|ri| ri / beta).collect());
        // Hessenberg columns, already rotated into upper-triangular form
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        let mut broke_down = false;

        for j in 0..m {
            let mut zj = vec![0.0; n];
            precond.apply(&v[j], &mut zj);
            a.apply(&zj, &mut w);
            z.push(zj);

            let mut col = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] = hij;
                axpy(-hij, vi, &mut w);
            }
            let w_norm = norm2(&w);
            col[j + 1] = w_norm;

            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[j] / denom, col[j + 1] / denom)
            };
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            cs.push(c);
            sn.push(s);
            h.push(col);

            total += 1;
            k = j + 1;
            let estimate = g[j + 1].abs() / b_norm;
            history.push(estimate);

            if w_norm <= 1e-14 * beta || h[j][j] == 0.0 {
                broke_down = true;
                break;
            }
            if estimate <= cfg.tol || total >= cfg.max_iter {
                break;
            }
            v.push(w.iter().map(|wi| wi / w_norm).collect());
        }

        // back substitution on the k x k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in i + 1..k {
                s -= h[l][i] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yi, zi) in y.iter().zip(&z) {
            axpy(*yi, zi, &mut x);
        }

        if broke_down {
            let res = relative_residual(a, b, &x, b_norm);
            if res <= cfg.tol {
                return Ok(SolveReport {
                    x,
                    iterations: total,
                    residual: res,
                    converged: true,
                    history,
                });
            }
            return Err(Error::Breakdown {
                iteration: total,
                residual: res,
            });
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            max_iter: 1000,
            tol: 1e-10,
        }
    }
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn conjugate_gradient(
    a: &dyn LinearOperator,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &CgConfig,
) -> Result<SolveReport> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SolveReport {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
            history: vec![0.0],
        });
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut iterations = 0;

    while iterations < cfg.max_iter && norm2(&r) / b_norm > cfg.tol {
        a.apply(&p, &mut q);
        let curvature = dot(&p, &q);
        if curvature <= 0.0 {
            return Err(Error::Indefinite {
                iteration: iterations,
                curvature,
            });
        }
        let step = rz / curvature;
        axpy(step, &p, &mut x);
        axpy(-step, &q, &mut r);
        iterations += 1;
        history.push(norm2(&r) / b_norm);

        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let residual = relative_residual(a, b, &x, b_norm);
    Ok(SolveReport {
        x,
        iterations,
        residual,
        converged: residual <= cfg.tol,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::CsrMatrix;

    #[test]
    fn gmres_identity_one_iteration() {
        let a = CsrMatrix::identity(6);
        let b = [1.0, 2.0, -3.0, 4.0, 0.5, 0.0];
        let rep = gmres(&a, &b, &IdentityPreconditioner, None, &GmresConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        for (xi, bi) in rep.x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn gmres_two_by_two() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let rep = gmres(&a, &[3.0, 5.0], &IdentityPreconditioner, None, &GmresConfig::default()).unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 0.8).abs() < 1e-12);
        assert!((rep.x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn gmres_zero_rhs() {
        let a = CsrMatrix::identity(3);
        let rep = gmres(&a, &[0.0; 3], &IdentityPreconditioner, None, &GmresConfig::default()).unwrap();
        assert_eq!(rep.x, vec![0.0; 3]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn gmres_reports_breakdown_on_singular_system() {
        // A = diag(1, 0): b = (0, 1) is not in the range
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]);
        let err = gmres(&a, &[0.0, 1.0], &IdentityPreconditioner, None, &GmresConfig::default());
        assert!(matches!(err, Err(Error::Breakdown { .. })));
    }

    #[test]
    fn gmres_budget_exhausted_is_not_an_error() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let cfg = GmresConfig {
            restart: 5,
            max_iter: 7,
            tol: 1e-12,
        };
        let rep = gmres(&a, &vec![1.0; n], &IdentityPreconditioner, None, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 7);
    }

    #[test]
    fn cg_finite_termination() {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let rep = conjugate_gradient(&a, &[1.0; 5], &IdentityPreconditioner, &CgConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 5);
        for (i, xi) in rep.x.iter().enumerate() {
            assert!((xi - 1.0 / (i as f64 + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_detects_indefiniteness() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        let err = conjugate_gradient(&a, &[1.0, 1.0], &IdentityPreconditioner, &CgConfig::default());
        assert!(matches!(err, Err(Error::Indefinite { .. })));
    }
}
