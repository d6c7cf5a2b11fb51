use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eoc_core::driver::interpolate_to_fine;
use eoc_core::fem::{eoc, l2_error, load_vector, FemSystem};
use eoc_core::linalg::cholesky::Cholesky;
use eoc_core::linalg::krylov::{conjugate_gradient, gmres, CgConfig, GmresConfig, IdentityPreconditioner, Jacobi};
use eoc_core::linalg::sparse::{norm2, quad_form, sub, CsrMatrix};
use eoc_core::mesh::{refine, unit_disk_mesh, unit_square_mesh, Mesh};
use eoc_core::problem::example2_spec;

fn total_area(mesh: &Mesh) -> f64 {
    (0..mesh.triangles().len()).map(|t| mesh.signed_area(t).abs()).sum()
}

#[test]
fn mesh_areas() {
    for n in [1, 2, 8, 32] {
        assert!((total_area(&unit_square_mesh(n).unwrap()) - 1.0).abs() < 1e-12);
    }
    let mut previous = 0.0;
    for level in 0..5 {
        let area = total_area(&unit_disk_mesh(level));
        assert!(area > previous && area <= PI);
        previous = area;
    }
    assert!((PI - previous) / PI < 0.01);
}

#[test]
fn triangles_are_positively_oriented() {
    for mesh in [unit_square_mesh(8).unwrap(), unit_disk_mesh(3)] {
        assert!((0..mesh.triangles().len()).all(|t| mesh.signed_area(t) > 0.0));
    }
}

#[test]
fn interior_numbering_is_a_bijection() {
    for mesh in [unit_square_mesh(16).unwrap(), unit_disk_mesh(3)] {
        let interior = mesh.interior_nodes();
        assert_eq!(interior.len(), mesh.n_interior());
        for (dof, &node) in interior.iter().enumerate() {
            assert_eq!(mesh.dof_of_node(node), Some(dof));
            assert!(!mesh.boundary_mask()[node]);
        }
        let mapped = (0..mesh.n_nodes()).filter(|&i| mesh.dof_of_node(i).is_some()).count();
        assert_eq!(mapped, mesh.n_interior());
    }
}

#[test]
fn refinement_keeps_interior_nodes_of_the_disk() {
    let coarse = unit_disk_mesh(2);
    let fine = refine(&coarse);
    for &i in coarse.interior_nodes() {
        assert_eq!(coarse.nodes()[i], fine.nodes()[i]);
        assert!(!fine.boundary_mask()[i]);
    }
}

#[test]
fn matrices_are_exactly_symmetric() {
    for mesh in [unit_square_mesh(8).unwrap(), unit_disk_mesh(2)] {
        let fem = FemSystem::new(mesh, 1.0).unwrap();
        assert_eq!(fem.stiffness().asymmetry(), 0.0);
        assert_eq!(fem.mass().asymmetry(), 0.0);
    }
}

#[test]
fn matrices_are_positive_definite_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fem = FemSystem::new(unit_disk_mesh(2), 0.0).unwrap();
    for _ in 0..100 {
        let v: Vec<f64> = (0..fem.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(quad_form(fem.stiffness(), &v) > 0.0);
        assert!(quad_form(fem.mass(), &v) > 0.0);
    }
}

#[test]
fn galerkin_solution_converges_quadratically() {
    let exact = |x: f64, y: f64| x * (1.0 - x) * y * (1.0 - y);
    let source = |x: f64, y: f64| 2.0 * (x * (1.0 - x) + y * (1.0 - y));
    let mut errors = Vec::new();
    let mut hs = Vec::new();
    for n in [8, 16, 32, 64] {
        let fem = FemSystem::new(unit_square_mesh(n).unwrap(), 0.0).unwrap();
        let y = fem.solve_stiffness(&load_vector(fem.mesh(), source));
        errors.push(l2_error(&y, exact, fem.mesh()));
        hs.push(fem.mesh().h());
    }
    for r in eoc(&errors, &hs).unwrap() {
        assert!((r - 2.0).abs() <= 0.2, "EOC {r}");
    }
}

fn random_rhs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn direct_and_cg_solves_agree() {
    let fem = FemSystem::new(unit_square_mesh(16).unwrap(), 0.0).unwrap();
    let gamma: f64 = 1.1e-4;
    let g = fem.mass().linear_combination(1.0, fem.stiffness(), gamma.sqrt());
    let systems: [&CsrMatrix; 3] = [fem.stiffness(), fem.mass(), &g];
    for (i, a) in systems.into_iter().enumerate() {
        let b = random_rhs(a.n_rows(), i as u64);
        let direct = Cholesky::factor(a).unwrap().solve(&b);
        let cg = conjugate_gradient(a, &b, &Jacobi::new(&a.diagonal()), &CgConfig { max_iter: 2000, tol: 1e-14 })
            .unwrap();
        assert!(cg.converged);
        let recomputed = norm2(&sub(&b, &a.mul_vec(&cg.x))) / norm2(&b);
        assert!((recomputed - cg.residual).abs() <= 1e-12);
        assert!(norm2(&sub(&direct, &cg.x)) <= 1e-9 * norm2(&direct));
    }
}

#[test]
fn gmres_history_is_monotone_and_residual_verified() {
    let fem = FemSystem::new(unit_square_mesh(16).unwrap(), 0.0).unwrap();
    let a = fem.stiffness().linear_combination(1.0, fem.mass(), -3.0);
    let b = random_rhs(a.n_rows(), 9);
    let report = gmres(&a, &b, &IdentityPreconditioner, None, &GmresConfig { restart: 30, max_iter: 3000, tol: 1e-10 })
        .unwrap();
    assert!(report.converged);
    assert!(report.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let recomputed = norm2(&sub(&b, &a.mul_vec(&report.x))) / norm2(&b);
    assert!(recomputed <= 1e-10);
}

#[test]
fn example2_target_state_settles_under_refinement() {
    // differences between consecutive levels, measured on the finer mesh
    let mut diffs = Vec::new();
    for level in 2..6 {
        let coarse = example2_spec(level).unwrap();
        let fine = example2_spec(level + 1).unwrap();
        let (cm, fm) = (coarse.fem.mesh(), fine.fem.mesh());
        let lifted = interpolate_to_fine(&cm.extend_by_zero(&coarse.y_d), cm, fm).unwrap();
        let full_mass = eoc_core::fem::assemble_mass_full(fm);
        diffs.push(quad_form(&full_mass, &sub(&lifted, &fm.extend_by_zero(&fine.y_d))).sqrt());
    }
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
}
