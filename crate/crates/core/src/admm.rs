//! Phase-I solvers: the inexact heterogeneous ADMM (M-weighted u-step,
//! W-weighted z-step) and, for comparison, the classical Euclidean ADMM and
//! the linearized ADMM.
//!
//! All three split `min f(u) + g(z)` with `u = z` and `g` the indicator of the
//! box. Iterates are stored with the multiplier `lambda` scaled so that
//! `M lambda` pairs with `u - z`; the classical method works with the
//! Euclidean multiplier `M lambda` internally.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::{norm2, sub};
use crate::linalg::{
    block_matrix, gmres, Block, BlockDiagonal, Chebyshev, Cholesky, CsrMatrix, GmresConfig, InnerSolver,
    Pmhss,
};
use crate::problem::{eta_admm, reduced_gradient, IterateState, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmmVariant {
    Ihadmm,
    Classical,
    Ladmm,
}

impl AdmmVariant {
    pub fn name(self) -> &'static str {
        match self {
            AdmmVariant::Ihadmm => "ihadmm",
            AdmmVariant::Classical => "classical",
            AdmmVariant::Ladmm => "ladmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub variant: AdmmVariant,
    pub sigma: f64,
    pub tau: f64,
    pub tol: f64,
    pub maxit: usize,
    /// Scale of the inexactness schedule; `None` means `1e-4 * |b_0|`.
    pub epsilon0: Option<f64>,
    /// LADMM proximal scalar; `None` means an estimate of `||M||_2`.
    pub theta: Option<f64>,
    /// Fixed relative tolerance for the u-step instead of the schedule.
    pub inner_tol: Option<f64>,
    /// Keep every iterate and its `delta` in the trace.
    pub record_iterates: bool,
}

impl AdmmConfig {
    /// Defaults for a problem with regularization `alpha`: `sigma = alpha/10`,
    /// `tau = 1` for ihADMM and `1.618` for the other two variants.
    pub fn new(variant: AdmmVariant, alpha: f64) -> Self {
        let tau = match variant {
            AdmmVariant::Ihadmm => 1.0,
            AdmmVariant::Classical | AdmmVariant::Ladmm => 1.618,
        };
        AdmmConfig {
            variant,
            sigma: 0.1 * alpha,
            tau,
            tol: 1e-6,
            maxit: 1000,
            epsilon0: None,
            theta: None,
            inner_tol: None,
            record_iterates: false,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        if !(self.sigma > 0.0 && self.tau > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma, tau and tol must be positive".into(),
            ));
        }
        if self.maxit == 0 {
            return Err(Error::InvalidArgument("maxit must be at least 1".into()));
        }
        if self.variant == AdmmVariant::Ihadmm && (self.tau > 1.0 || self.sigma > 0.25 * spec.alpha) {
            log::warn!(
                "ihADMM with tau = {} and sigma = {} is outside the range with a convergence guarantee",
                self.tau,
                self.sigma
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmTraceRow {
    pub iter: usize,
    pub eta: [f64; 5],
    pub eta_max: f64,
    pub rh: f64,
    pub inner_iters: usize,
    pub eps_k: f64,
    /// `|grad f(u) + M lambda + sigma B (u - z)|`, recomputed from scratch.
    pub delta: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmTrace {
    pub rows: Vec<AdmmTraceRow>,
    pub converged: bool,
    /// `(iterate, delta)` after every iteration when requested; entry 0 is the
    /// initial point with an empty `delta`.
    #[serde(skip)]
    pub iterates: Vec<(IterateState, Vec<f64>)>,
}

impl AdmmTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn final_eta(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.eta_max)
    }

    pub fn total_inner(&self) -> usize {
        self.rows.iter().map(|r| r.inner_iters).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iter", "eta1", "eta2", "eta3", "eta4", "eta5", "eta_max", "Rh", "inner_iters", "eps_k", "time_s",
            "delta",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.iter.to_string()];
            rec.extend(r.eta.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", r.eta_max));
            rec.push(format!("{:e}", r.rh));
            rec.push(r.inner_iters.to_string());
            rec.push(format!("{:e}", r.eps_k));
            rec.push(format!("{:.4}", r.time_s));
            rec.push(format!("{:e}", r.delta));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Summable inexactness schedule `eps_k = eps0 / (k+1)^2`.
pub fn epsilon_schedule(k: usize, epsilon0: f64) -> f64 {
    epsilon0 / ((k + 1) as f64).powi(2)
}

/// Classical (Euclidean) z-step: `Pi(u + lambda_e / sigma)`.
pub fn z_step_classical(u: &[f64], lambda_e: &[f64], sigma: f64, a: f64, b: f64) -> Vec<f64> {
    u.iter()
        .zip(lambda_e)
        .map(|(u, l)| (u + l / sigma).clamp(a, b))
        .collect()
}

/// Lumped-mass weighted z-step: `Pi(u + W^{-1} M lambda / sigma)`, with
/// `m_lambda = M lambda` and `w` the lumped mass diagonal.
pub fn z_step_lumped(u: &[f64], m_lambda: &[f64], w: &[f64], sigma: f64, a: f64, b: f64) -> Vec<f64> {
    u.iter()
        .zip(m_lambda)
        .zip(w)
        .map(|((u, l), w)| (u + l / (w * sigma)).clamp(a, b))
        .collect()
}

/// Linearized z-step `Pi(z_prev + M(sigma u + lambda - sigma z_prev) / (sigma theta))`,
/// given `m_v = M(sigma u + lambda - sigma z_prev)`.
pub fn z_step_linearized(z_prev: &[f64], m_v: &[f64], sigma: f64, theta: f64, a: f64, b: f64) -> Vec<f64> {
    z_prev
        .iter()
        .zip(m_v)
        .map(|(z, v)| (z + v / (sigma * theta)).clamp(a, b))
        .collect()
}

/// Everything the M-weighted u-step needs, built once per solve.
struct CoupledUStep {
    matrix: CsrMatrix,
    precond: Pmhss<Cholesky>,
    gamma: f64,
    /// estimate of `||M K^{-1}||`
    c: f64,
}

impl CoupledUStep {
    fn new(spec: &ProblemSpec, sigma: f64) -> Result<Self> {
        let fem = &spec.fem;
        let n = spec.n();
        let gamma = spec.alpha + sigma;
        let (m, k) = (fem.mass(), fem.stiffness());
        let matrix = block_matrix(
            &[n, n],
            &[n, n],
            &[
                Block { row: 0, col: 0, scale: 1.0 / gamma, matrix: m },
                Block { row: 0, col: 1, scale: 1.0, matrix: k },
                Block { row: 1, col: 0, scale: -1.0, matrix: k },
                Block { row: 1, col: 1, scale: 1.0, matrix: m },
            ],
        );
        let g = m.linear_combination(1.0, k, gamma.sqrt());
        let precond = Pmhss::new(Cholesky::factor(&g)?, gamma, n);
        Ok(CoupledUStep {
            matrix,
            precond,
            gamma,
            c: fem.mk_inv_norm(),
        })
    }

    fn rhs(&self, spec: &ProblemSpec, sigma: f64, z: &[f64], lambda: &[f64]) -> Vec<f64> {
        let fem = &spec.fem;
        let d: Vec<f64> = z.iter().zip(lambda).map(|(z, l)| sigma * z - l).collect();
        let mut b1 = fem.stiffness().mul_vec(&d);
        fem.mass().mul_vec_add(1.0, &spec.y_d, &mut b1);
        for v in b1.iter_mut() {
            *v /= self.gamma;
        }
        let b2: Vec<f64> = fem.mass().mul_vec(&spec.y_c).iter().map(|v| -v).collect();
        b1.extend(b2);
        b1
    }

    /// Euclidean residual target guaranteeing `|delta| <= eps`.
    fn residual_target(&self, eps: f64) -> f64 {
        eps / (2f64.sqrt() * self.c * self.c.max(self.gamma)) / 2f64.sqrt()
    }
}

/// Block-diagonally preconditioned 3x3 system of the Euclidean u-step.
struct EuclideanUStep {
    matrix: CsrMatrix,
    precond: BlockDiagonal,
    c: f64,
}

impl EuclideanUStep {
    fn new(spec: &ProblemSpec, sigma: f64) -> Self {
        let fem = &spec.fem;
        let n = spec.n();
        let (m, k) = (fem.mass(), fem.stiffness());
        let shifted = m.scale(spec.alpha).shift_diagonal(sigma);
        let matrix = block_matrix(
            &[n, n, n],
            &[n, n, n],
            &[
                Block { row: 0, col: 0, scale: 1.0, matrix: m },
                Block { row: 0, col: 2, scale: 1.0, matrix: k },
                Block { row: 1, col: 1, scale: 1.0, matrix: &shifted },
                Block { row: 1, col: 2, scale: -1.0, matrix: m },
                Block { row: 2, col: 0, scale: 1.0, matrix: k },
                Block { row: 2, col: 1, scale: -1.0, matrix: m },
            ],
        );
        let precond = BlockDiagonal::new(vec![
            (n, InnerSolver::Chebyshev(Chebyshev::new(m.clone(), 20))),
            (n, InnerSolver::Chebyshev(Chebyshev::new(shifted, 20))),
            (
                n,
                InnerSolver::StiffnessSchur {
                    stiffness: fem.stiffness_factor().clone(),
                    mass: m.clone(),
                },
            ),
        ]);
        EuclideanUStep {
            matrix,
            precond,
            c: fem.mk_inv_norm(),
        }
    }

    /// `|delta| <= |r2| + c |r1| + c^2 |r3| <= sqrt(3) max(1, c, c^2) |r|`.
    fn residual_target(&self, eps: f64) -> f64 {
        eps / (3f64.sqrt() * 1f64.max(self.c).max(self.c * self.c))
    }
}

fn check_init(spec: &ProblemSpec, init: &IterateState) -> Result<()> {
    if init.dim() != spec.n() {
        return Err(Error::DimensionMismatch { expected: spec.n(), got: init.dim() });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial iterate"));
    }
    Ok(())
}

/// Relative residual requested from GMRES, clamped to what double precision
/// can deliver on these systems.
const INNER_TOL_FLOOR: f64 = 1e-13;

fn inner_tol(cfg: &AdmmConfig, target_abs: f64, b: &[f64]) -> f64 {
    match cfg.inner_tol {
        Some(t) => t,
        None => {
            let bn = norm2(b);
            if bn > 0.0 {
                (target_abs / bn).clamp(INNER_TOL_FLOOR, 0.5)
            } else {
                0.5
            }
        }
    }
}

/// `grad f(u) + g` where `g` is the remaining part of the u-step optimality
/// condition, recomputed without using the inner residual.
fn optimality_defect(spec: &ProblemSpec, u: &[f64], rest: &[f64]) -> Result<Vec<f64>> {
    let mut d = reduced_gradient(u, spec)?;
    for (di, ri) in d.iter_mut().zip(rest) {
        *di += ri;
    }
    Ok(d)
}

struct Recorder {
    start: Instant,
    trace: AdmmTrace,
    record: bool,
}

impl Recorder {
    fn new(record: bool, init: &IterateState) -> Self {
        let mut trace = AdmmTrace::default();
        if record {
            trace.iterates.push((init.clone(), Vec::new()));
        }
        Recorder { start: Instant::now(), trace, record }
    }

    /// Logs one iteration and reports whether the tolerance is met.
    fn push(
        &mut self,
        spec: &ProblemSpec,
        cfg: &AdmmConfig,
        state: &IterateState,
        inner_iters: usize,
        eps_k: f64,
        delta: Vec<f64>,
    ) -> Result<bool> {
        if !state.is_finite() {
            return Err(Error::NonFinite("ADMM iterate"));
        }
        let report = eta_admm(state, spec)?;
        let iter = self.trace.rows.len() + 1;
        let mut eta = [0.0; 5];
        eta.copy_from_slice(&report.eta);
        self.trace.rows.push(AdmmTraceRow {
            iter,
            eta,
            eta_max: report.eta_max,
            rh: report.rh.total(),
            inner_iters,
            eps_k,
            delta: norm2(&delta),
            time_s: self.start.elapsed().as_secs_f64(),
        });
        if self.record {
            self.trace.iterates.push((state.clone(), delta));
        }
        log::debug!("{} iter {iter}: eta = {:.3e}", cfg.variant.name(), report.eta_max);
        Ok(report.eta_max < cfg.tol)
    }

    fn finish(mut self, converged: bool) -> AdmmTrace {
        self.trace.converged = converged;
        self.trace
    }
}

/// Inexact heterogeneous ADMM.
pub fn ihadmm_solve(spec: &ProblemSpec, cfg: &AdmmConfig, init: &IterateState) -> Result<(IterateState, AdmmTrace)> {
    coupled_admm(spec, cfg, init, false)
}

/// Linearized ADMM: the ihADMM u-step with a linearized (proximal) z-step.
pub fn ladmm_solve(spec: &ProblemSpec, cfg: &AdmmConfig, init: &IterateState) -> Result<(IterateState, AdmmTrace)> {
    coupled_admm(spec, cfg, init, true)
}

fn coupled_admm(
    spec: &ProblemSpec,
    cfg: &AdmmConfig,
    init: &IterateState,
    linearized: bool,
) -> Result<(IterateState, AdmmTrace)> {
    cfg.validate(spec)?;
    check_init(spec, init)?;
    let fem = &spec.fem;
    let m = fem.mass();
    let sigma = cfg.sigma;
    let step = CoupledUStep::new(spec, sigma)?;
    let theta = cfg.theta.unwrap_or_else(|| fem.mass_norm_bound());
    if linearized && !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
    }

    let mut s = init.clone();
    let mut x: Vec<f64> = s.y.iter().chain(&s.u).cloned().collect();
    let mut rec = Recorder::new(cfg.record_iterates, init);
    let mut eps0 = cfg.epsilon0;
    let n = spec.n();

    for k in 0..cfg.maxit {
        let b = step.rhs(spec, sigma, &s.z, &s.lambda);
        let eps0 = *eps0.get_or_insert_with(|| 1e-4 * norm2(&b));
        let eps_k = epsilon_schedule(k, eps0);
        let tol = inner_tol(cfg, step.residual_target(eps_k), &b);
        let sol = gmres(&step.matrix, &b, &step.precond, Some(&x), &GmresConfig::with_tol(tol))?;
        if !sol.converged {
            return Err(Error::NotConverged {
                solver: "u-step GMRES",
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        x = sol.x;
        let u = &x[n..];

        // delta = grad f(u) + M lambda + sigma M (u - z^k)
        let rest: Vec<f64> = (0..n).map(|i| s.lambda[i] + sigma * (u[i] - s.z[i])).collect();
        let delta = optimality_defect(spec, u, &m.mul_vec(&rest))?;

        let p: Vec<f64> = (0..n)
            .map(|i| step.gamma * u[i] - sigma * s.z[i] + s.lambda[i])
            .collect();
        let z = if linearized {
            let v: Vec<f64> = (0..n)
                .map(|i| sigma * u[i] + s.lambda[i] - sigma * s.z[i])
                .collect();
            z_step_linearized(&s.z, &m.mul_vec(&v), sigma, theta, spec.a, spec.b)
        } else {
            z_step_lumped(u, &m.mul_vec(&s.lambda), fem.lumped(), sigma, spec.a, spec.b)
        };
        for i in 0..n {
            s.lambda[i] += cfg.tau * sigma * (u[i] - z[i]);
        }
        // the y block of the inner solve is only accurate to the inner
        // tolerance; report the state of the new control instead
        s.y = spec.state(u);
        s.u = u.to_vec();
        s.p = p;
        s.z = z;
        s.mu = m.mul_vec(&s.lambda);

        if rec.push(spec, cfg, &s, sol.iterations, eps_k, delta)? {
            return Ok((s, rec.finish(true)));
        }
    }
    Ok((s, rec.finish(false)))
}

/// Classical ADMM with Euclidean augmentation; the u-step is a 3x3 saddle
/// system in `(y, u, p)` solved by block-diagonally preconditioned GMRES.
pub fn classical_admm_solve(
    spec: &ProblemSpec,
    cfg: &AdmmConfig,
    init: &IterateState,
) -> Result<(IterateState, AdmmTrace)> {
    cfg.validate(spec)?;
    check_init(spec, init)?;
    let fem = &spec.fem;
    let m = fem.mass();
    let sigma = cfg.sigma;
    let n = spec.n();
    let step = EuclideanUStep::new(spec, sigma);

    let mut s = init.clone();
    let mut lambda_e = m.mul_vec(&s.lambda);
    let mut x: Vec<f64> = s.y.iter().chain(&s.u).chain(&s.p).cloned().collect();
    let mut rec = Recorder::new(cfg.record_iterates, init);
    let my_d = m.mul_vec(&spec.y_d);
    let my_c = m.mul_vec(&spec.y_c);
    let mut eps0 = cfg.epsilon0;

    for k in 0..cfg.maxit {
        let mut b = my_d.clone();
        b.extend((0..n).map(|i| sigma * s.z[i] - lambda_e[i]));
        b.extend_from_slice(&my_c);
        let eps0 = *eps0.get_or_insert_with(|| 1e-4 * norm2(&b));
        let eps_k = epsilon_schedule(k, eps0);
        let tol = inner_tol(cfg, step.residual_target(eps_k), &b);
        let sol = gmres(&step.matrix, &b, &step.precond, Some(&x), &GmresConfig::with_tol(tol))?;
        if !sol.converged {
            return Err(Error::NotConverged {
                solver: "u-step GMRES",
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        x = sol.x;
        let u = &x[n..2 * n];

        let rest: Vec<f64> = (0..n).map(|i| lambda_e[i] + sigma * (u[i] - s.z[i])).collect();
        let delta = optimality_defect(spec, u, &rest)?;

        let z = z_step_classical(u, &lambda_e, sigma, spec.a, spec.b);
        for i in 0..n {
            lambda_e[i] += cfg.tau * sigma * (u[i] - z[i]);
        }
        s.y = x[..n].to_vec();
        s.u = u.to_vec();
        s.p = x[2 * n..].to_vec();
        s.z = z;
        s.lambda = fem.solve_mass(&lambda_e);
        s.mu = lambda_e.clone();

        if rec.push(spec, cfg, &s, sol.iterations, eps_k, delta)? {
            return Ok((s, rec.finish(true)));
        }
    }
    Ok((s, rec.finish(false)))
}

/// Dispatches on `cfg.variant`.
pub fn admm_solve(spec: &ProblemSpec, cfg: &AdmmConfig, init: &IterateState) -> Result<(IterateState, AdmmTrace)> {
    match cfg.variant {
        AdmmVariant::Ihadmm => ihadmm_solve(spec, cfg, init),
        AdmmVariant::Classical => classical_admm_solve(spec, cfg, init),
        AdmmVariant::Ladmm => ladmm_solve(spec, cfg, init),
    }
}

/// `v^T (Sigma_f - sigma/2 (W - M)) v` with `Sigma_f = M K^{-1} M K^{-1} M + alpha M`.
fn t_norm_sq(spec: &ProblemSpec, sigma: f64, v: &[f64]) -> f64 {
    let fem = &spec.fem;
    let mv = fem.mass().mul_vec(v);
    // |K^{-1} M v|_M^2 + alpha |v|_M^2
    let s = fem.solve_stiffness(&mv);
    let tracking = fem.mass_norm(&s).powi(2);
    let reg = spec.alpha * crate::linalg::sparse::dot(v, &mv);
    let w_minus_m = fem.lumped_norm_sq(v) - crate::linalg::sparse::dot(v, &mv);
    tracking + reg - 0.5 * sigma * w_minus_m
}

/// Left-hand side minus right-hand side of the one-step descent inequality of
/// ihADMM measured against a KKT point `reference`; nonnegative (up to the
/// accuracy of the inner solves and of the reference) for a genuine ihADMM
/// step from `prev` to `next` with u-step defect `delta`.
pub fn descent_diagnostic(
    prev: &IterateState,
    next: &IterateState,
    delta: &[f64],
    reference: &IterateState,
    spec: &ProblemSpec,
    cfg: &AdmmConfig,
) -> f64 {
    let fem = &spec.fem;
    let (sigma, tau) = (cfg.sigma, cfg.tau);
    let mn = |v: &[f64]| fem.mass_norm(v).powi(2);
    let du = sub(&next.u, &reference.u);
    let dz_next = sub(&next.z, &reference.z);
    let r_next = sub(&next.u, &next.z);

    let lhs = crate::linalg::sparse::dot(delta, &du)
        + mn(&sub(&prev.lambda, &reference.lambda)) / (2.0 * tau * sigma)
        + 0.5 * sigma * mn(&sub(&prev.z, &reference.z))
        - mn(&sub(&next.lambda, &reference.lambda)) / (2.0 * tau * sigma)
        - 0.5 * sigma * mn(&dz_next);
    let rhs = t_norm_sq(spec, sigma, &du)
        + 0.5 * sigma * (fem.lumped_norm_sq(&dz_next) - mn(&dz_next))
        + 0.5 * sigma * (fem.lumped_norm_sq(&r_next) - tau * mn(&r_next))
        + 0.5 * sigma * mn(&sub(&next.u, &prev.z));
    lhs - rhs
}
