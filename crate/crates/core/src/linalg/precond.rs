//! Saddle-point preconditioners built from inner solvers for the individual
//! blocks.

use super::chebyshev::Chebyshev;
use super::cholesky::Cholesky;
use super::krylov::{IdentityPreconditioner, Preconditioner};
use super::sparse::CsrMatrix;

/// Approximate inverse of one diagonal block.
pub enum InnerSolver {
    Identity,
    Direct(Cholesky),
    Chebyshev(Chebyshev),
    /// `K^{-1} M K^{-1}`, the inverse of the Schur complement approximation
    /// `K M^{-1} K`.
    StiffnessSchur { stiffness: std::sync::Arc<Cholesky>, mass: CsrMatrix },
}

impl Preconditioner for InnerSolver {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            InnerSolver::Identity => IdentityPreconditioner.apply(r, z),
            InnerSolver::Direct(f) => f.solve_into(r, z),
            InnerSolver::Chebyshev(c) => c.solve_into(r, z),
            InnerSolver::StiffnessSchur { stiffness, mass } => {
                let t = stiffness.solve(r);
                let mt = mass.mul_vec(&t);
                stiffness.solve_into(&mt, z);
            }
        }
    }
}

/// PMHSS preconditioner for the two-by-two system
/// `[[M/g, K], [-K, M]]`, applied as a 2x2 scalar mix of the residual
/// followed by two solves with `G = M + sqrt(g) K`.
pub struct Pmhss<S> {
    g_solver: S,
    gamma: f64,
    n: usize,
}

impl<S: Preconditioner> Pmhss<S> {
    pub fn new(g_solver: S, gamma: f64, n: usize) -> Self {
        assert!(gamma > 0.0, "PMHSS parameter must be positive");
        Pmhss { g_solver, gamma, n }
    }
}

impl<S: Preconditioner> Preconditioner for Pmhss<S> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        let (ra, rb) = r.split_at(n);
        let s = self.gamma.sqrt();
        let hat_a: Vec<f64> = ra
            .iter()
            .zip(rb)
            .map(|(a, b)| 0.5 * self.gamma * a - 0.5 * s * b)
            .collect();
        let hat_b: Vec<f64> = ra.iter().zip(rb).map(|(a, b)| 0.5 * s * a + 0.5 * b).collect();
        let (za, zb) = z.split_at_mut(n);
        self.g_solver.apply(&hat_a, za);
        self.g_solver.apply(&hat_b, zb);
    }
}

/// `diag(P_1, ..., P_k)^{-1}` with each block given by its inner solver.
pub struct BlockDiagonal {
    blocks: Vec<(usize, InnerSolver)>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<(usize, InnerSolver)>) -> Self {
        BlockDiagonal { blocks }
    }
}

impl Preconditioner for BlockDiagonal {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut start = 0;
        for (size, solver) in &self.blocks {
            let end = start + size;
            solver.apply(&r[start..end], &mut z[start..end]);
            start = end;
        }
    }
}

/// Lower block-triangular preconditioner
/// `[[A0, 0, 0], [0, A1, 0], [B0, B1, -S0]]`
/// applied by forward substitution in the order (first, second, last block).
pub struct BlockLowerTriangular {
    a0: InnerSolver,
    a1: InnerSolver,
    s0: InnerSolver,
    b0: CsrMatrix,
    b1: CsrMatrix,
}

impl BlockLowerTriangular {
    pub fn new(a0: InnerSolver, a1: InnerSolver, s0: InnerSolver, b0: CsrMatrix, b1: CsrMatrix) -> Self {
        assert_eq!(b0.n_rows(), b1.n_rows());
        BlockLowerTriangular { a0, a1, s0, b0, b1 }
    }
}

impl Preconditioner for BlockLowerTriangular {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n0 = self.b0.n_cols();
        let n1 = self.b1.n_cols();
        let (r0, rest) = r.split_at(n0);
        let (r1, r2) = rest.split_at(n1);
        let (z0, rest) = z.split_at_mut(n0);
        let (z1, z2) = rest.split_at_mut(n1);
        self.a0.apply(r0, z0);
        self.a1.apply(r1, z1);
        // -S0 z2 = r2 - B0 z0 - B1 z1
        let mut t: Vec<f64> = r2.iter().map(|v| -v).collect();
        self.b0.mul_vec_add(1.0, z0, &mut t);
        self.b1.mul_vec_add(1.0, z1, &mut t);
        self.s0.apply(&t, z2);
    }
}

/// One block entry `scale * matrix` at block position (row, col).
pub struct Block<'a> {
    pub row: usize,
    pub col: usize,
    pub scale: f64,
    pub matrix: &'a CsrMatrix,
}

/// Assembles a block matrix with the given block row/column sizes.
pub fn block_matrix(row_sizes: &[usize], col_sizes: &[usize], blocks: &[Block<'_>]) -> CsrMatrix {
    let offsets = |sizes: &[usize]| {
        let mut o = vec![0];
        for s in sizes {
            o.push(o.last().unwrap() + s);
        }
        o
    };
    let ro = offsets(row_sizes);
    let co = offsets(col_sizes);
    let mut triplets = Vec::new();
    for b in blocks {
        assert_eq!(b.matrix.n_rows(), row_sizes[b.row]);
        assert_eq!(b.matrix.n_cols(), col_sizes[b.col]);
        for i in 0..b.matrix.n_rows() {
            for (j, v) in b.matrix.row(i) {
                triplets.push((ro[b.row] + i, co[b.col] + j, b.scale * v));
            }
        }
    }
    CsrMatrix::from_triplets(*ro.last().unwrap(), *co.last().unwrap(), &triplets)
}
