//! P1 finite element assembly on interior (homogeneous Dirichlet) dofs.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{power_iteration, Cholesky, CsrMatrix};
use crate::mesh::Mesh;

/// Degree-5 seven-point rule on the reference triangle: barycentric
/// coordinates and weights (weights sum to one; multiply by the area).
pub fn quadrature_rule() -> [([f64; 3], f64); 7] {
    let s = 15f64.sqrt();
    let b1 = (6.0 + s) / 21.0;
    let a1 = 1.0 - 2.0 * b1;
    let b2 = (6.0 - s) / 21.0;
    let a2 = 1.0 - 2.0 * b2;
    let w1 = (155.0 + s) / 1200.0;
    let w2 = (155.0 - s) / 1200.0;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
        ([a1, b1, b1], w1),
        ([b1, a1, b1], w1),
        ([b1, b1, a1], w1),
        ([a2, b2, b2], w2),
        ([b2, a2, b2], w2),
        ([b2, b2, a2], w2),
    ]
}

fn map_point(v: &[[f64; 2]; 3], bary: &[f64; 3]) -> (f64, f64) {
    let x = bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0];
    let y = bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1];
    (x, y)
}

/// Gradients of the three barycentric coordinates and the (signed) area.
fn barycentric_gradients(v: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area = 0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]));
    let mut g = [[0.0; 2]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        *gi = [(v[j][1] - v[k][1]) / (2.0 * area), (v[k][0] - v[j][0]) / (2.0 * area)];
    }
    (g, area)
}

/// Element stiffness matrix `int grad phi_i . grad phi_j + c0 phi_i phi_j`.
pub fn element_stiffness(v: &[[f64; 2]; 3], c0: f64) -> [[f64; 3]; 3] {
    let (g, area) = barycentric_gradients(v);
    let mass = element_mass(v);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]) + c0 * mass[i][j];
        }
    }
    k
}

/// Element mass matrix `area/12 * [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(v: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let (_, area) = barycentric_gradients(v);
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

fn assemble_full<F>(mesh: &Mesh, element: F) -> CsrMatrix
where
    F: Fn(&[[f64; 2]; 3]) -> [[f64; 3]; 3],
{
    let mut triplets = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = element(&mesh.vertices(t));
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], e[a][b]));
            }
        }
    }
    let n = mesh.n_nodes();
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Stiffness matrix over all nodes (before Dirichlet restriction).
pub fn assemble_stiffness_full(mesh: &Mesh, c0: f64) -> Result<CsrMatrix> {
    if !(c0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reaction coefficient must be nonnegative, got {c0}"
        )));
    }
    Ok(assemble_full(mesh, |v| element_stiffness(v, c0)))
}

pub fn assemble_mass_full(mesh: &Mesh) -> CsrMatrix {
    assemble_full(mesh, element_mass)
}

/// Stiffness matrix restricted to interior dofs.
pub fn assemble_stiffness(mesh: &Mesh, c0: f64) -> Result<CsrMatrix> {
    let full = assemble_stiffness_full(mesh, c0)?;
    let dofs = mesh.interior_nodes();
    Ok(full.select(dofs, dofs))
}

/// Mass matrix restricted to interior dofs.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let dofs = mesh.interior_nodes();
    assemble_mass_full(mesh).select(dofs, dofs)
}

/// Row-sum lumping. Applied to the full (all-node) mass matrix this gives
/// `int phi_i`, i.e. the nodal quadrature weights.
pub fn lump_mass(m: &CsrMatrix) -> Vec<f64> {
    m.row_sums()
}

/// `b_i = int f phi_i` over all nodes.
pub fn load_vector_full<F: Fn(f64, f64) -> f64>(mesh: &Mesh, f: F) -> Vec<f64> {
    let rule = quadrature_rule();
    let mut b = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.vertices(t);
        let area = mesh.signed_area(t);
        for (bary, w) in &rule {
            let (x, y) = map_point(&v, bary);
            let fx = f(x, y) * w * area;
            for a in 0..3 {
                b[tri[a]] += fx * bary[a];
            }
        }
    }
    b
}

/// Load vector on interior dofs.
pub fn load_vector<F: Fn(f64, f64) -> f64>(mesh: &Mesh, f: F) -> Vec<f64> {
    let full = load_vector_full(mesh, f);
    mesh.interior_nodes().iter().map(|&i| full[i]).collect()
}

/// Assembled matrices of one mesh level, restricted to interior dofs.
#[derive(Debug)]
pub struct FemSystem {
    mesh: Mesh,
    c0: f64,
    k: CsrMatrix,
    m: CsrMatrix,
    w: Vec<f64>,
    k_factor: Arc<Cholesky>,
    m_factor: Arc<Cholesky>,
    mk_inv_norm: OnceLock<f64>,
    mass_norm_bound: OnceLock<f64>,
}

impl FemSystem {
    pub fn new(mesh: Mesh, c0: f64) -> Result<Self> {
        let dofs = mesh.interior_nodes().to_vec();
        if dofs.is_empty() {
            return Err(Error::InvalidMesh("mesh has no interior nodes".into()));
        }
        let k = assemble_stiffness_full(&mesh, c0)?.select(&dofs, &dofs);
        let m_full = assemble_mass_full(&mesh);
        let w_full = lump_mass(&m_full);
        let w = dofs.iter().map(|&i| w_full[i]).collect();
        let m = m_full.select(&dofs, &dofs);
        let k_factor = Arc::new(Cholesky::factor(&k)?);
        let m_factor = Arc::new(Cholesky::factor(&m)?);
        Ok(FemSystem {
            mesh,
            c0,
            k,
            m,
            w,
            k_factor,
            m_factor,
            mk_inv_norm: OnceLock::new(),
            mass_norm_bound: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn n(&self) -> usize {
        self.m.n_rows()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.k
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.m
    }

    /// Diagonal of the lumped mass matrix.
    pub fn lumped(&self) -> &[f64] {
        &self.w
    }

    pub fn stiffness_factor(&self) -> &Arc<Cholesky> {
        &self.k_factor
    }

    pub fn mass_factor(&self) -> &Arc<Cholesky> {
        &self.m_factor
    }

    /// `K^{-1} b`
    pub fn solve_stiffness(&self, b: &[f64]) -> Vec<f64> {
        self.k_factor.solve(b)
    }

    /// `M^{-1} b`
    pub fn solve_mass(&self, b: &[f64]) -> Vec<f64> {
        self.m_factor.solve(b)
    }

    /// Discrete L2 norm `sqrt(v^T M v)`.
    pub fn mass_norm(&self, v: &[f64]) -> f64 {
        crate::linalg::sparse::quad_form(&self.m, v).max(0.0).sqrt()
    }

    /// Upper estimate of `||M K^{-1}||_2`: 50 power-iteration steps on
    /// `K^{-1} M M K^{-1}` with a 10% safety factor. Cached.
    pub fn mk_inv_norm(&self) -> f64 {
        *self.mk_inv_norm.get_or_init(|| {
            let lam = power_iteration(self.n(), 50, |x| {
                let t = self.solve_stiffness(x);
                let t = self.m.mul_vec(&t);
                let t = self.m.mul_vec(&t);
                self.solve_stiffness(&t)
            });
            1.1 * lam.sqrt()
        })
    }

    /// Estimate of `||M||_2`: 1.05 times the power-iteration value, capped by
    /// the Gershgorin bound (largest row sum), which is always valid. Cached.
    pub fn mass_norm_bound(&self) -> f64 {
        *self.mass_norm_bound.get_or_init(|| {
            let lam = power_iteration(self.n(), 50, |x| self.m.mul_vec(x));
            let gershgorin = (0..self.n())
                .map(|i| self.m.row(i).map(|(_, v)| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            (1.05 * lam).min(gershgorin)
        })
    }

    pub fn lumped_norm_sq(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.w).map(|(x, w)| w * x * x).sum()
    }
}

/// L2 projection of `f` onto the interior-dof P1 space: solves `M v = b`.
pub fn project_l2<F: Fn(f64, f64) -> f64>(f: F, system: &FemSystem) -> Result<Vec<f64>> {
    let b = load_vector(system.mesh(), f);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("load vector"));
    }
    Ok(system.solve_mass(&b))
}

/// `|| v_h - exact ||_{L2}` by seven-point quadrature on every triangle, with
/// `v` given on interior dofs and extended by zero to the boundary.
pub fn l2_error<F: Fn(f64, f64) -> f64>(v: &[f64], exact: F, mesh: &Mesh) -> f64 {
    let full = mesh.extend_by_zero(v);
    nodal_l2_error(&full, exact, mesh)
}

/// Same as [`l2_error`] but with values given on every node.
pub fn nodal_l2_error<F: Fn(f64, f64) -> f64>(full: &[f64], exact: F, mesh: &Mesh) -> f64 {
    let rule = quadrature_rule();
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.vertices(t);
        let area = mesh.signed_area(t);
        for (bary, w) in &rule {
            let (x, y) = map_point(&v, bary);
            let uh = bary[0] * full[tri[0]] + bary[1] * full[tri[1]] + bary[2] * full[tri[2]];
            let e = uh - exact(x, y);
            sum += w * area * e * e;
        }
    }
    sum.sqrt()
}

/// Experimental order of convergence between consecutive levels.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() {
        return Err(Error::DimensionMismatch {
            expected: hs.len(),
            got: errors.len(),
        });
    }
    if errors.len() < 2 {
        return Err(Error::InvalidArgument("EOC needs at least two levels".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("errors must be positive".into()));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > 0.0)) {
        return Err(Error::InvalidArgument(
            "mesh sizes must be positive and strictly decreasing".into(),
        ));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0].ln() - e[1].ln()) / (h[0].ln() - h[1].ln()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_disk_mesh, unit_square_mesh};

    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn reference_element_matrices() {
        let k = element_stiffness(&REF, 0.0);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
        let m = element_mass(&REF);
        assert!((m[0][0] - 1.0 / 12.0).abs() < 1e-15);
        assert!((m[0][1] - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_is_exact_for_quintics() {
        // int_T x^a y^b over the reference triangle = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).product::<u32>().max(1) as f64;
        let rule = quadrature_rule();
        for a in 0..=5u32 {
            for b in 0..=(5 - a) {
                let q: f64 = rule
                    .iter()
                    .map(|(bary, w)| {
                        let (x, y) = map_point(&REF, bary);
                        0.5 * w * x.powi(a as i32) * y.powi(b as i32)
                    })
                    .sum();
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((q - exact).abs() < 1e-15, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn single_interior_dof_values() {
        let mesh = unit_square_mesh(2).unwrap();
        let fem = FemSystem::new(mesh, 0.0).unwrap();
        assert_eq!(fem.n(), 1);
        assert!((fem.stiffness().get(0, 0) - 4.0).abs() < 1e-14);
        assert!((fem.mass().get(0, 0) - 0.125).abs() < 1e-15);
        // int phi = 6 triangles * (1/8) / 3
        assert!((fem.lumped()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn full_matrices_partition_of_unity() {
        for mesh in [unit_square_mesh(5).unwrap(), unit_disk_mesh(2)] {
            let k = assemble_stiffness_full(&mesh, 0.0).unwrap();
            assert!(k.row_sums().iter().all(|s| s.abs() < 1e-13));
            let m = assemble_mass_full(&mesh);
            let ones = vec![1.0; mesh.n_nodes()];
            let total: f64 = m.mul_vec(&ones).iter().sum();
            assert!((total - mesh.area()).abs() < 1e-12 * mesh.area());
            let w = lump_mass(&m);
            assert_eq!(w, m.mul_vec(&ones));
            assert_eq!(k.asymmetry(), 0.0);
            assert_eq!(m.asymmetry(), 0.0);
        }
    }

    #[test]
    fn negative_reaction_rejected() {
        let mesh = unit_square_mesh(2).unwrap();
        assert!(assemble_stiffness(&mesh, -1.0).is_err());
    }

    #[test]
    fn projection_of_basis_function_and_zero() {
        let mesh = unit_square_mesh(4).unwrap();
        let fem = FemSystem::new(mesh, 0.0).unwrap();
        let zero = project_l2(|_, _| 0.0, &fem).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        // hat function of interior node (0.5, 0.5)
        let k = fem
            .mesh()
            .interior_nodes()
            .iter()
            .position(|&i| fem.mesh().nodes()[i] == [0.5, 0.5])
            .unwrap();
        let mut e = vec![0.0; fem.n()];
        e[k] = 1.0;
        let full = fem.mesh().extend_by_zero(&e);
        let hat = |x: f64, y: f64| evaluate_p1(fem.mesh(), &full, x, y);
        let v = project_l2(hat, &fem).unwrap();
        for (i, vi) in v.iter().enumerate() {
            assert!((vi - e[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_residual_is_orthogonal() {
        let mesh = unit_square_mesh(4).unwrap();
        let fem = FemSystem::new(mesh, 0.0).unwrap();
        let f = |x: f64, y: f64| x + y;
        let v = project_l2(f, &fem).unwrap();
        let b = load_vector(fem.mesh(), f);
        let r = crate::linalg::sparse::sub(&b, &fem.mass().mul_vec(&v));
        assert!(crate::linalg::sparse::norm2(&r) <= 1e-12);
    }

    #[test]
    fn l2_error_trivial_cases() {
        let mesh = unit_square_mesh(4).unwrap();
        let zero = vec![0.0; mesh.n_interior()];
        assert!((l2_error(&zero, |_, _| 1.0, &mesh) - 1.0).abs() < 1e-14);
        let v = mesh.interpolate(|x, y| x * (1.0 - x) * y);
        let full = mesh.extend_by_zero(&v);
        let own = l2_error(&v, |x, y| evaluate_p1(&mesh, &full, x, y), &mesh);
        assert!(own < 1e-14);
    }

    #[test]
    fn eoc_values() {
        let hs = [0.5, 0.25, 0.125];
        let errs: Vec<f64> = hs.iter().map(|h| h * h).collect();
        for r in eoc(&errs, &hs).unwrap() {
            assert!((r - 2.0).abs() < 1e-12);
        }
        let r = eoc(&[4.09e-3, 1.46e-3], &[2f64.powi(-4), 2f64.powi(-5)]).unwrap();
        // tabulated errors are rounded to three digits, so only ~1e-3 agreement
        assert!((r[0] - 1.4858).abs() < 2e-3);
        let r = eoc(&[0.0157, 5.95e-3], &[2f64.sqrt() / 16.0, 2f64.sqrt() / 32.0]).unwrap();
        assert!((r[0] - 1.3992).abs() < 2e-3);

        assert!(eoc(&[1.0, 0.0], &[1.0, 0.5]).is_err());
        assert!(eoc(&[1.0, 0.5], &[0.5, 1.0]).is_err());
        assert!(eoc(&[1.0], &[1.0]).is_err());
    }

    /// Point evaluation of a P1 function by brute-force point location.
    pub(crate) fn evaluate_p1(mesh: &Mesh, full: &[f64], x: f64, y: f64) -> f64 {
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let v = mesh.vertices(t);
            let (g, area) = barycentric_gradients(&v);
            let _ = area;
            let lam: Vec<f64> = (0..3)
                .map(|i| {
                    let j = (i + 1) % 3;
                    // lambda_i vanishes on the opposite edge through v[j]
                    g[i][0] * (x - v[j][0]) + g[i][1] * (y - v[j][1])
                })
                .collect();
            if lam.iter().all(|&l| l >= -1e-12) {
                return lam[0] * full[tri[0]] + lam[1] * full[tri[1]] + lam[2] * full[tri[2]];
            }
        }
        0.0
    }
}
