//! Phase-II: primal-dual active set (semismooth Newton) method, plain and
//! with an Armijo line search on the squared KKT residual.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::{norm2, sub};
use crate::linalg::{
    block_matrix, gmres, Block, BlockLowerTriangular, Chebyshev, CsrMatrix, GmresConfig, InnerSolver,
};
use crate::problem::{eta_pdas, IterateState, ProblemSpec};

/// Partition of the dofs into lower-active, upper-active and inactive sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
    pub inactive: Vec<usize>,
}

impl ActiveSets {
    pub fn n(&self) -> usize {
        self.lower.len() + self.upper.len() + self.inactive.len()
    }

    /// Active dofs (lower then upper).
    pub fn active(&self) -> Vec<usize> {
        self.lower.iter().chain(&self.upper).cloned().collect()
    }

    /// Size of the symmetric difference of the active sets.
    pub fn changes_from(&self, other: &ActiveSets) -> usize {
        let mark = |s: &ActiveSets| {
            let mut m = vec![0u8; s.n()];
            s.lower.iter().for_each(|&i| m[i] = 1);
            s.upper.iter().for_each(|&i| m[i] = 2);
            m
        };
        mark(self).iter().zip(mark(other)).filter(|(a, b)| **a != *b).count()
    }
}

/// `A_a = {mu + c(u - a) < 0}`, `A_b = {mu + c(u - b) > 0}`, rest inactive.
pub fn determine_sets(u: &[f64], mu: &[f64], a: f64, b: f64, c: f64) -> ActiveSets {
    let mut sets = ActiveSets {
        lower: Vec::new(),
        upper: Vec::new(),
        inactive: Vec::new(),
    };
    for (i, (&ui, &mi)) in u.iter().zip(mu).enumerate() {
        if mi + c * (ui - a) < 0.0 {
            sets.lower.push(i);
        } else if mi + c * (ui - b) > 0.0 {
            sets.upper.push(i);
        } else {
            sets.inactive.push(i);
        }
    }
    sets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdasConfig {
    pub c: f64,
    pub tol: f64,
    pub maxit: usize,
    pub line_search: bool,
    /// Relative residual for the reduced saddle-point solve.
    pub inner_tol: f64,
}

impl Default for PdasConfig {
    fn default() -> Self {
        PdasConfig {
            c: 1.0,
            tol: 1e-11,
            maxit: 100,
            line_search: false,
            inner_tol: 1e-12,
        }
    }
}

impl PdasConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument("c, tol and inner_tol must be positive".into()));
        }
        if self.maxit == 0 {
            return Err(Error::InvalidArgument("maxit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdasTraceRow {
    pub iter: usize,
    pub n_lower: usize,
    pub n_upper: usize,
    pub eta: [f64; 3],
    pub eta_max: f64,
    pub inner_iters: usize,
    pub step_length: f64,
    /// Active-set changes with respect to the previous iteration.
    pub changes: usize,
    pub time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PdasTrace {
    pub rows: Vec<PdasTraceRow>,
    pub converged: bool,
    /// Iterations where the line search gave up and took the full step.
    pub fallbacks: usize,
}

impl PdasTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn final_eta(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.eta_max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iter", "|A_a|", "|A_b|", "eta1", "eta2", "eta3", "eta_max", "inner_iters", "step_length", "time_s",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.iter.to_string(), r.n_lower.to_string(), r.n_upper.to_string()];
            rec.extend(r.eta.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", r.eta_max));
            rec.push(r.inner_iters.to_string());
            rec.push(format!("{}", r.step_length));
            rec.push(format!("{:.4}", r.time_s));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Solves the reduced KKT system for fixed active sets:
/// `u = a` on `A_a`, `u = b` on `A_b`, `mu = 0` on `I`, and recovers `mu` on
/// the active sets. Returns the new iterate and the number of GMRES
/// iterations. `guess` warm-starts the Krylov solve.
pub fn pdas_step(
    sets: &ActiveSets,
    spec: &ProblemSpec,
    inner_tol: f64,
    guess: Option<&IterateState>,
) -> Result<(IterateState, usize)> {
    let n = spec.n();
    if sets.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: sets.n() });
    }
    let fem = &spec.fem;
    let (m, k) = (fem.mass(), fem.stiffness());
    let alpha = spec.alpha;

    let mut u = vec![0.0; n];
    sets.lower.iter().for_each(|&i| u[i] = spec.a);
    sets.upper.iter().for_each(|&i| u[i] = spec.b);

    let (y, p, iterations) = if sets.inactive.is_empty() {
        let y = spec.state(&u);
        let p = spec.adjoint(&y);
        (y, p, 0)
    } else {
        let inactive = &sets.inactive;
        let ni = inactive.len();
        let all: Vec<usize> = (0..n).collect();
        let m_ii = m.select(inactive, inactive);
        let m_i_all = m.select(inactive, &all);
        let m_all_i = m_i_all.transpose();
        let matrix = block_matrix(
            &[n, ni, n],
            &[n, ni, n],
            &[
                Block { row: 0, col: 0, scale: 1.0, matrix: m },
                Block { row: 0, col: 2, scale: 1.0, matrix: k },
                Block { row: 1, col: 1, scale: alpha, matrix: &m_ii },
                Block { row: 1, col: 2, scale: -1.0, matrix: &m_i_all },
                Block { row: 2, col: 0, scale: 1.0, matrix: k },
                Block { row: 2, col: 1, scale: -1.0, matrix: &m_all_i },
            ],
        );
        // right-hand side; u is zero on I here, so M u = M_{:,A} u_A
        let mu_active = m.mul_vec(&u);
        let mut rhs = m.mul_vec(&spec.y_d);
        rhs.extend(inactive.iter().map(|&i| -alpha * mu_active[i]));
        let myc = m.mul_vec(&spec.y_c);
        rhs.extend(mu_active.iter().zip(&myc).map(|(a, c)| a + c));

        let precond = reduced_preconditioner(spec, &m_ii, m_all_i.scale(-1.0));
        let x0 = guess.map(|g| {
            let mut x = g.y.clone();
            x.extend(inactive.iter().map(|&i| g.u[i]));
            x.extend_from_slice(&g.p);
            x
        });
        let cfg = GmresConfig {
            restart: 100,
            max_iter: 2000,
            tol: inner_tol,
        };
        let sol = gmres(&matrix, &rhs, &precond, x0.as_deref(), &cfg)?;
        if !sol.converged {
            return Err(Error::NotConverged {
                solver: "reduced system GMRES",
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        for (j, &i) in inactive.iter().enumerate() {
            u[i] = sol.x[n + j];
        }
        (sol.x[..n].to_vec(), sol.x[n + ni..].to_vec(), sol.iterations)
    };

    // mu = M(p - alpha u) on the active sets, zero on I
    let mut mu = spec.multiplier(&u, &p);
    sets.inactive.iter().for_each(|&i| mu[i] = 0.0);
    let lambda: Vec<f64> = p.iter().zip(&u).map(|(p, u)| p - alpha * u).collect();
    let state = IterateState {
        z: u.clone(),
        u,
        lambda,
        y,
        p,
        mu,
    };
    if !state.is_finite() {
        return Err(Error::NonFinite("active-set step"));
    }
    Ok((state, iterations))
}

/// Lower block-triangular preconditioner with Chebyshev approximations of
/// `M` and `alpha M_II` and the Schur complement approximation `K M^{-1} K`.
fn reduced_preconditioner(spec: &ProblemSpec, m_ii: &CsrMatrix, coupling: CsrMatrix) -> BlockLowerTriangular {
    let fem = &spec.fem;
    let a0 = InnerSolver::Chebyshev(Chebyshev::new(fem.mass().clone(), 20));
    let a1 = InnerSolver::Chebyshev(Chebyshev::new(m_ii.scale(spec.alpha), 20));
    let s0 = InnerSolver::StiffnessSchur {
        stiffness: Arc::clone(fem.stiffness_factor()),
        mass: fem.mass().clone(),
    };
    BlockLowerTriangular::new(a0, a1, s0, fem.stiffness().clone(), coupling)
}

/// The full nonlinear KKT map `G(y, u, p, mu)`: state equation, adjoint
/// equation, gradient equation and the complementarity function
/// `mu - max(0, mu + c(u - b)) - min(0, mu + c(u - a))`.
pub fn kkt_map(state: &IterateState, spec: &ProblemSpec, c: f64) -> Vec<f64> {
    let fem = &spec.fem;
    let (m, k) = (fem.mass(), fem.stiffness());
    let mut g1 = k.mul_vec(&state.y);
    m.mul_vec_add(-1.0, &state.u, &mut g1);
    m.mul_vec_add(-1.0, &spec.y_c, &mut g1);
    let mut g2 = m.mul_vec(&sub(&state.y, &spec.y_d));
    k.mul_vec_add(1.0, &state.p, &mut g2);
    let d: Vec<f64> = state.u.iter().zip(&state.p).map(|(u, p)| spec.alpha * u - p).collect();
    let mut g3 = m.mul_vec(&d);
    for (g, mu) in g3.iter_mut().zip(&state.mu) {
        *g += mu;
    }
    let g4 = state.u.iter().zip(&state.mu).map(|(&u, &mu)| {
        mu - (mu + c * (u - spec.b)).max(0.0) - (mu + c * (u - spec.a)).min(0.0)
    });
    g1.into_iter().chain(g2).chain(g3).chain(g4).collect()
}

/// `1/2 |G|^2`
pub fn merit(state: &IterateState, spec: &ProblemSpec, c: f64) -> f64 {
    0.5 * norm2(&kkt_map(state, spec, c)).powi(2)
}

fn combine(from: &IterateState, to: &IterateState, t: f64) -> IterateState {
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a + t * (b - a)).collect::<Vec<f64>>();
    IterateState {
        u: mix(&from.u, &to.u),
        z: mix(&from.z, &to.z),
        lambda: mix(&from.lambda, &to.lambda),
        y: mix(&from.y, &to.y),
        p: mix(&from.p, &to.p),
        mu: mix(&from.mu, &to.mu),
    }
}

/// Plain active-set iteration; set `cfg.line_search` for the globalized
/// variant or call [`pdas_globalized`].
pub fn pdas_solve(spec: &ProblemSpec, cfg: &PdasConfig, init: &IterateState) -> Result<(IterateState, PdasTrace)> {
    cfg.validate()?;
    if init.dim() != spec.n() {
        return Err(Error::DimensionMismatch { expected: spec.n(), got: init.dim() });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial iterate"));
    }
    let start = Instant::now();
    let mut trace = PdasTrace::default();
    let mut state = init.clone();
    let mut prev_sets: Option<ActiveSets> = None;
    let mut last_step = 1.0;

    for iter in 1..=cfg.maxit {
        let sets = determine_sets(&state.u, &state.mu, spec.a, spec.b, cfg.c);
        if let Some(prev) = &prev_sets {
            // Identical sets reproduce the same Newton target; after a full
            // step that means the iteration has reached its fixed point.
            if *prev == sets && last_step == 1.0 {
                let eta = eta_pdas(&state, spec)?.eta_max;
                if eta < cfg.tol {
                    trace.converged = true;
                    return Ok((state, trace));
                }
                return Err(Error::Stagnation { iterations: iter - 1, eta });
            }
        }
        let (target, inner) = pdas_step(&sets, spec, cfg.inner_tol, Some(&state))?;
        let mut t = 1.0;
        if cfg.line_search {
            let theta0 = merit(&state, spec, cfg.c);
            let mut accepted = false;
            for _ in 0..=20 {
                let trial = combine(&state, &target, t);
                if merit(&trial, spec, cfg.c) <= (1.0 - 2.0 * 1e-4 * t) * theta0 {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                log::warn!("line search failed at iteration {iter}; taking the full step");
                trace.fallbacks += 1;
                t = 1.0;
            }
        }
        state = if t == 1.0 { target } else { combine(&state, &target, t) };
        last_step = t;

        let report = eta_pdas(&state, spec)?;
        let mut eta = [0.0; 3];
        eta.copy_from_slice(&report.eta);
        trace.rows.push(PdasTraceRow {
            iter,
            n_lower: sets.lower.len(),
            n_upper: sets.upper.len(),
            eta,
            eta_max: report.eta_max,
            inner_iters: inner,
            step_length: t,
            changes: prev_sets.as_ref().map_or(0, |p| sets.changes_from(p)),
            time_s: start.elapsed().as_secs_f64(),
        });
        log::debug!("pdas iter {iter}: eta = {:.3e}, t = {t}", report.eta_max);
        prev_sets = Some(sets);
        if report.eta_max < cfg.tol {
            trace.converged = true;
            return Ok((state, trace));
        }
    }
    Err(Error::MaxIterations {
        iterations: cfg.maxit,
        eta: trace.final_eta(),
    })
}

/// Active-set method with Armijo backtracking on `1/2 |G|^2`.
pub fn pdas_globalized(spec: &ProblemSpec, cfg: &PdasConfig, init: &IterateState) -> Result<(IterateState, PdasTrace)> {
    let cfg = PdasConfig {
        line_search: true,
        ..cfg.clone()
    };
    pdas_solve(spec, &cfg, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example2_spec, ProblemSpec};
    use crate::FemSystem;

    #[test]
    fn set_classification() {
        let s = determine_sets(&[0.5, -1.0, 3.0], &[0.0; 3], 0.0, 1.0, 1.0);
        assert_eq!(s.inactive, vec![0]);
        assert_eq!(s.lower, vec![1]);
        assert_eq!(s.upper, vec![2]);
        assert_eq!(s.changes_from(&s), 0);
    }

    #[test]
    fn unconstrained_step_matches_direct_solve() {
        // loose box: everything inactive; compare with the normal equations
        let mesh = crate::mesh::unit_square_mesh(4).unwrap();
        let fem = Arc::new(FemSystem::new(mesh, 0.0).unwrap());
        let n = fem.n();
        let y_d: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let spec = ProblemSpec::new(fem, 0.01, -1e6, 1e6, y_d, vec![0.0; n]).unwrap();
        let sets = determine_sets(&vec![0.0; n], &vec![0.0; n], spec.a, spec.b, 1.0);
        assert_eq!(sets.inactive.len(), n);
        let (s, _) = pdas_step(&sets, &spec, 1e-13, None).unwrap();
        // gradient of the reduced objective vanishes
        let g = crate::problem::reduced_gradient(&s.u, &spec).unwrap();
        assert!(norm2(&g) < 1e-10, "{}", norm2(&g));
        assert!(s.mu.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn fully_active_step() {
        let spec = example2_spec(3).unwrap();
        let n = spec.n();
        let sets = ActiveSets {
            lower: (0..n).collect(),
            upper: vec![],
            inactive: vec![],
        };
        let (s, inner) = pdas_step(&sets, &spec, 1e-12, None).unwrap();
        assert_eq!(inner, 0);
        assert!(s.u.iter().all(|&u| u == spec.a));
        let expected = spec.multiplier(&s.u, &s.p);
        assert_eq!(s.mu, expected);
    }

    #[test]
    fn kkt_map_vanishes_at_converged_point() {
        let spec = example2_spec(3).unwrap();
        let (s, trace) = pdas_globalized(&spec, &PdasConfig::default(), &IterateState::zeros(spec.n())).unwrap();
        assert!(trace.converged);
        assert!(norm2(&kkt_map(&s, &spec, 1.0)) < 1e-10);
        // restarting at the solution stops after one step
        let (_, t) = pdas_solve(&spec, &PdasConfig::default(), &s).unwrap();
        assert_eq!(t.iterations(), 1);
    }
}
