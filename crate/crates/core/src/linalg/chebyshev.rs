use super::krylov::Preconditioner;
use super::sparse::CsrMatrix;

/// Eigenvalue bounds of `D^{-1} M` for a P1 triangle mass matrix, `D = diag(M)`.
pub const P1_MASS_BOUNDS: (f64, f64) = (0.5, 2.0);

/// Fixed-step Chebyshev semi-iteration accelerating Jacobi for a mass-type
/// matrix. Starting from zero, the result is a fixed polynomial in
/// `D^{-1} M` applied to `D^{-1} b`, hence linear in `b`.
#[derive(Debug, Clone)]
pub struct Chebyshev {
    matrix: CsrMatrix,
    inv_diag: Vec<f64>,
    steps: usize,
    lower: f64,
    upper: f64,
}

impl Chebyshev {
    pub fn new(matrix: CsrMatrix, steps: usize) -> Self {
        Self::with_bounds(matrix, steps, P1_MASS_BOUNDS)
    }

    pub fn with_bounds(matrix: CsrMatrix, steps: usize, (lower, upper): (f64, f64)) -> Self {
        assert!(steps >= 1, "Chebyshev needs at least one step");
        assert!(0.0 < lower && lower < upper);
        let inv_diag = matrix.diagonal().iter().map(|d| 1.0 / d).collect();
        Chebyshev {
            matrix,
            inv_diag,
            steps,
            lower,
            upper,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x);
        x
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = b.len();
        let omega = 2.0 / (self.lower + self.upper);
        let rho = (self.upper - self.lower) / (self.upper + self.lower);
        // g = omega D^{-1} b; iteration x <- S x + g with S = I - omega D^{-1} M
        let g: Vec<f64> = b
            .iter()
            .zip(&self.inv_diag)
            .map(|(bi, di)| omega * bi * di)
            .collect();
        let mut prev = vec![0.0; n];
        let mut cur = g.clone();
        let mut ax = vec![0.0; n];
        let mut w = 1.0;
        for k in 1..self.steps {
            w = if k == 1 {
                1.0 / (1.0 - 0.5 * rho * rho)
            } else {
                1.0 / (1.0 - 0.25 * rho * rho * w)
            };
            self.matrix.mul_vec_into(&cur, &mut ax);
            for i in 0..n {
                let stationary = cur[i] - omega * self.inv_diag[i] * ax[i] + g[i];
                let next = w * (stationary - prev[i]) + prev[i];
                prev[i] = cur[i];
                cur[i] = next;
            }
        }
        x.copy_from_slice(&cur);
    }
}

impl Preconditioner for Chebyshev {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve_into(r, z);
    }
}
