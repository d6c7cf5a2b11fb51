//! Sparse storage, Krylov solvers, Chebyshev semi-iteration, envelope
//! Cholesky and the saddle-point preconditioners.

pub mod chebyshev;
pub mod cholesky;
pub mod krylov;
pub mod precond;
pub mod sparse;

pub use chebyshev::Chebyshev;
pub use cholesky::Cholesky;
pub use krylov::{
    conjugate_gradient, gmres, CgConfig, GmresConfig, IdentityPreconditioner, Jacobi, Preconditioner,
    SolveReport,
};
pub use precond::{block_matrix, Block, BlockDiagonal, BlockLowerTriangular, InnerSolver, Pmhss};
pub use sparse::{CsrMatrix, LinearOperator};

/// Largest eigenvalue of a symmetric positive semidefinite operator by plain
/// power iteration from the all-ones vector. Returns the final Rayleigh
/// quotient, which never exceeds the true value.
pub fn power_iteration<F>(n: usize, steps: usize, apply: F) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = 0.0;
    for _ in 0..steps.max(1) {
        let y = apply(&x);
        estimate = sparse::dot(&x, &y);
        let norm = sparse::norm2(&y);
        if norm == 0.0 {
            return 0.0;
        }
        x = y.iter().map(|v| v / norm).collect();
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_diagonal() {
        let d = [1.0, 3.0, 2.0];
        let a = CsrMatrix::from_diagonal(&d);
        let lam = power_iteration(3, 200, |x| a.mul_vec(x));
        assert!((lam - 3.0).abs() < 1e-10);
        assert!(lam <= 3.0 + 1e-14);
    }
}
