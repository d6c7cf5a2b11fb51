//! The discretized control problem
//!
//! ```text
//! min_u  1/2 |y - y_d|_M^2 + alpha/2 |u|_M^2   s.t.  K y = M (u + y_c),  a <= u <= b
//! ```
//!
//! together with its reduced objective, KKT residuals and the two benchmark
//! instances.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{load_vector, project_l2, FemSystem};
use crate::linalg::sparse::{norm2, sub};
use crate::mesh::{unit_disk_mesh, unit_square_mesh};

/// Serializable problem parameters; enough to rebuild a [`ProblemSpec`] for
/// the two benchmark examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub example: Option<u8>,
    pub level: usize,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub c0: f64,
    pub dofs: usize,
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub fem: Arc<FemSystem>,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub y_d: Vec<f64>,
    pub y_c: Vec<f64>,
    pub level: usize,
    pub example: Option<u8>,
}

impl ProblemSpec {
    pub fn new(
        fem: Arc<FemSystem>,
        alpha: f64,
        a: f64,
        b: f64,
        y_d: Vec<f64>,
        y_c: Vec<f64>,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("empty box [{a}, {b}]")));
        }
        let n = fem.n();
        for v in [&y_d, &y_c] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        if y_d.iter().chain(&y_c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("problem data"));
        }
        Ok(ProblemSpec {
            fem,
            alpha,
            a,
            b,
            y_d,
            y_c,
            level: 0,
            example: None,
        })
    }

    pub fn n(&self) -> usize {
        self.fem.n()
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams {
            example: self.example,
            level: self.level,
            alpha: self.alpha,
            a: self.a,
            b: self.b,
            c0: self.fem.c0(),
            dofs: self.n(),
            h: self.fem.mesh().h(),
        }
    }

    /// `y = K^{-1} M (u + y_c)`
    pub fn state(&self, u: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = u.iter().zip(&self.y_c).map(|(u, c)| u + c).collect();
        self.fem.solve_stiffness(&self.fem.mass().mul_vec(&rhs))
    }

    /// `p = K^{-1} M (y_d - y)`
    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.fem.solve_stiffness(&self.fem.mass().mul_vec(&sub(&self.y_d, y)))
    }

    /// `M (p - alpha u)`: the multiplier consistent with a state/adjoint pair.
    pub fn multiplier(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = p.iter().zip(u).map(|(p, u)| p - self.alpha * u).collect();
        self.fem.mass().mul_vec(&d)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        Ok(())
    }
}

/// Primal, auxiliary and dual variables shared by all solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
}

impl IterateState {
    pub fn zeros(n: usize) -> Self {
        IterateState {
            u: vec![0.0; n],
            z: vec![0.0; n],
            lambda: vec![0.0; n],
            y: vec![0.0; n],
            p: vec![0.0; n],
            mu: vec![0.0; n],
        }
    }

    /// Completes a control `u` into a consistent state: `z = u`, exact state
    /// and adjoint, `lambda = p - alpha u` and `mu = M lambda`.
    pub fn from_control(spec: &ProblemSpec, u: Vec<f64>) -> Self {
        let y = spec.state(&u);
        let p = spec.adjoint(&y);
        let lambda: Vec<f64> = p.iter().zip(&u).map(|(p, u)| p - spec.alpha * u).collect();
        let mu = spec.fem.mass().mul_vec(&lambda);
        IterateState {
            z: u.clone(),
            u,
            lambda,
            y,
            p,
            mu,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.u, &self.z, &self.lambda, &self.y, &self.p, &self.mu]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// The three terms of the KKT residual function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhBreakdown {
    pub gradient: f64,
    pub normal_cone: f64,
    pub consistency: f64,
}

impl RhBreakdown {
    pub fn total(&self) -> f64 {
        self.gradient + self.normal_cone + self.consistency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub eta: Vec<f64>,
    pub eta_max: f64,
    pub rh: RhBreakdown,
}

impl KktReport {
    fn new(eta: Vec<f64>, rh: RhBreakdown) -> Self {
        let eta_max = eta.iter().cloned().fold(0.0, f64::max);
        KktReport { eta, eta_max, rh }
    }
}

/// `f(u) = 1/2 |K^{-1}M(u + y_c) - y_d|_M^2 + alpha/2 |u|_M^2`
pub fn reduced_objective(u: &[f64], spec: &ProblemSpec) -> Result<f64> {
    spec.check_len(u)?;
    let y = spec.state(u);
    let r = sub(&y, &spec.y_d);
    let m = &spec.fem;
    Ok(0.5 * m.mass_norm(&r).powi(2) + 0.5 * spec.alpha * m.mass_norm(u).powi(2))
}

/// `grad f(u) = M K^{-1} M (K^{-1}M(u + y_c) - y_d) + alpha M u`, evaluated
/// with two stiffness solves.
pub fn reduced_gradient(u: &[f64], spec: &ProblemSpec) -> Result<Vec<f64>> {
    spec.check_len(u)?;
    let y = spec.state(u);
    let p = spec.adjoint(&y);
    // M K^{-1} M (y - y_d) = -M p
    let d: Vec<f64> = u.iter().zip(&p).map(|(u, p)| spec.alpha * u - p).collect();
    Ok(spec.fem.mass().mul_vec(&d))
}

/// Componentwise clamp onto `[a, b]`.
pub fn project_box(v: &[f64], a: f64, b: f64) -> Vec<f64> {
    v.iter().map(|x| x.clamp(a, b)).collect()
}

/// Squared distance of `m_lambda` to the normal cone of `[a,b]^n` at `z`.
pub fn normal_cone_distance_sq(z: &[f64], m_lambda: &[f64], a: f64, b: f64) -> f64 {
    const TIE: f64 = 1e-12;
    z.iter()
        .zip(m_lambda)
        .map(|(&zi, &l)| {
            if (zi - a).abs() <= TIE {
                l.max(0.0).powi(2)
            } else if (zi - b).abs() <= TIE {
                (-l).max(0.0).powi(2)
            } else {
                l * l
            }
        })
        .sum()
}

/// `R_h = |M lambda + grad f(u)|^2 + dist^2(M lambda, N(z)) + |u - z|^2`.
pub fn kkt_residual_rh(state: &IterateState, spec: &ProblemSpec) -> Result<RhBreakdown> {
    let grad = reduced_gradient(&state.u, spec)?;
    let ml = spec.fem.mass().mul_vec(&state.lambda);
    let g: Vec<f64> = ml.iter().zip(&grad).map(|(a, b)| a + b).collect();
    Ok(RhBreakdown {
        gradient: norm2(&g).powi(2),
        normal_cone: normal_cone_distance_sq(&state.z, &ml, spec.a, spec.b),
        consistency: norm2(&sub(&state.u, &state.z)).powi(2),
    })
}

fn state_residual(state: &IterateState, spec: &ProblemSpec) -> f64 {
    let m = spec.fem.mass();
    let mut r = spec.fem.stiffness().mul_vec(&state.y);
    m.mul_vec_add(-1.0, &state.u, &mut r);
    let myc = m.mul_vec(&spec.y_c);
    for (ri, ci) in r.iter_mut().zip(&myc) {
        *ri -= ci;
    }
    norm2(&r) / (1.0 + norm2(&myc))
}

fn adjoint_residual(state: &IterateState, spec: &ProblemSpec) -> f64 {
    let m = spec.fem.mass();
    let mut r = m.mul_vec(&sub(&state.y, &spec.y_d));
    spec.fem.stiffness().mul_vec_add(1.0, &state.p, &mut r);
    norm2(&r) / (1.0 + norm2(&m.mul_vec(&spec.y_d)))
}

/// The five normalized residuals used to stop the ADMM-type methods:
/// state equation, `u = z`, adjoint equation, gradient equation and the
/// projection fixed point for `z`.
pub fn eta_admm(state: &IterateState, spec: &ProblemSpec) -> Result<KktReport> {
    spec.check_len(&state.u)?;
    let m = spec.fem.mass();
    let nu = 1.0 + norm2(&state.u);
    let eta1 = state_residual(state, spec);
    let eta2 = norm2(&m.mul_vec(&sub(&state.u, &state.z))) / nu;
    let eta3 = adjoint_residual(state, spec);
    let ml = m.mul_vec(&state.lambda);
    let d: Vec<f64> = state.u.iter().zip(&state.p).map(|(u, p)| spec.alpha * u - p).collect();
    let mut g = m.mul_vec(&d);
    for (gi, li) in g.iter_mut().zip(&ml) {
        *gi += li;
    }
    let eta4 = norm2(&g) / nu;
    let shifted: Vec<f64> = state.z.iter().zip(&ml).map(|(z, l)| z + l).collect();
    let eta5 = norm2(&sub(&state.z, &project_box(&shifted, spec.a, spec.b))) / (1.0 + norm2(&state.z));
    let rh = kkt_residual_rh(state, spec)?;
    Ok(KktReport::new(vec![eta1, eta2, eta3, eta4, eta5], rh))
}

/// The three normalized residuals used to stop the active-set method:
/// state equation, adjoint equation and
/// `|u - Pi(u - alpha M u + M p)| / (1 + |u|)`.
pub fn eta_pdas(state: &IterateState, spec: &ProblemSpec) -> Result<KktReport> {
    spec.check_len(&state.u)?;
    let eta1 = state_residual(state, spec);
    let eta2 = adjoint_residual(state, spec);
    let d: Vec<f64> = state.p.iter().zip(&state.u).map(|(p, u)| p - spec.alpha * u).collect();
    let md = spec.fem.mass().mul_vec(&d);
    let shifted: Vec<f64> = state.u.iter().zip(&md).map(|(u, m)| u + m).collect();
    let eta3 = norm2(&sub(&state.u, &project_box(&shifted, spec.a, spec.b))) / (1.0 + norm2(&state.u));
    let rh = kkt_residual_rh(state, spec)?;
    Ok(KktReport::new(vec![eta1, eta2, eta3], rh))
}

/// Disk example: `alpha = 0.1`, box `[-0.2, 0.2]`, `y_d = (1 - |x|^2) x_1`,
/// `y_c = 0`. `level` counts refinements of the hexagon.
pub fn example1_spec(level: usize) -> Result<ProblemSpec> {
    if level > 8 {
        return Err(Error::InvalidArgument(format!("disk level {level} is out of range")));
    }
    let fem = Arc::new(FemSystem::new(unit_disk_mesh(level), 0.0)?);
    let y_d = project_l2(|x, y| (1.0 - (x * x + y * y)) * x, &fem)?;
    let n = fem.n();
    let mut spec = ProblemSpec::new(fem, 0.1, -0.2, 0.2, y_d, vec![0.0; n])?;
    spec.level = level;
    spec.example = Some(1);
    Ok(spec)
}

/// Exact control of the square example:
/// `min(1, max(0.3, 2 sin(pi x) sin(pi y)))`.
pub fn example2_exact_control(x: f64, y: f64) -> f64 {
    (2.0 * (PI * x).sin() * (PI * y).sin()).clamp(0.3, 1.0)
}

/// Square example with `n = 2^level` cells per side: `alpha = 0.001`, box
/// `[0.3, 1]`, `y_c = 0` and `y_d = S r + 4 pi^2 alpha sin(pi x) sin(pi y)`,
/// where `r` is [`example2_exact_control`] and `S r` is computed discretely.
/// With this choice the adjoint is `2 alpha sin sin`, so `r = Pi(p/alpha)`
/// is the optimal control.
pub fn example2_spec(level: usize) -> Result<ProblemSpec> {
    if !(1..=9).contains(&level) {
        return Err(Error::InvalidArgument(format!("square level {level} is out of range")));
    }
    let fem = Arc::new(FemSystem::new(unit_square_mesh(1 << level)?, 0.0)?);
    let alpha = 0.001;
    let psi = move |x: f64, y: f64| 4.0 * PI * PI * alpha * (PI * x).sin() * (PI * y).sin();
    let mut y_d = project_l2(psi, &fem)?;
    let sr = fem.solve_stiffness(&load_vector(fem.mesh(), example2_exact_control));
    for (d, s) in y_d.iter_mut().zip(&sr) {
        *d += s;
    }
    let n = fem.n();
    let mut spec = ProblemSpec::new(fem, alpha, 0.3, 1.0, y_d, vec![0.0; n])?;
    spec.level = level;
    spec.example = Some(2);
    Ok(spec)
}
