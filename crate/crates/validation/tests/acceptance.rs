//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use eoc_core::admm::{admm_solve, AdmmConfig, AdmmTrace, AdmmVariant};
use eoc_core::checks::{all_solver_controls, interior_scalar_spec, run_checks, scalar_kkt_oracle};
use eoc_core::driver::{example2_control_error, two_phase_solve};
use eoc_core::fem::eoc;
use eoc_core::linalg::sparse::sub;
use eoc_core::pdas::{pdas_globalized, PdasConfig};
use eoc_core::problem::{example1_spec, example2_spec, IterateState, ProblemSpec};

const SQUARE_LEVELS: [usize; 3] = [4, 5, 6];
const DISK_LEVELS: [usize; 3] = [2, 3, 4];
const TABULATED_COARSE_E2: f64 = 0.0157;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, title: &str, outcome: &Outcome) {
    println!(
        "criterion {id} ({title}): {} -- {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.detail
    );
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fixed(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn phase1_config(spec: &ProblemSpec) -> AdmmConfig {
    AdmmConfig::new(AdmmVariant::Ihadmm, spec.alpha).with_tol(1e-3)
}

fn convergence_order() -> Outcome {
    let mut errors = Vec::new();
    let mut hs = Vec::new();
    for level in SQUARE_LEVELS {
        let spec = example2_spec(level).unwrap();
        let (s, _) = two_phase_solve(&spec, &phase1_config(&spec), &PdasConfig::default()).unwrap();
        errors.push(example2_control_error(&s.u, &spec));
        hs.push(spec.fem.mesh().h());
    }
    let orders = eoc(&errors, &hs).unwrap();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let in_band = orders.iter().all(|r| (1.2..=1.8).contains(r));
    let coarse_ok = errors[0] <= 2.0 * TABULATED_COARSE_E2 && errors[0] >= TABULATED_COARSE_E2 / 2.0;
    Outcome {
        passed: decreasing && in_band && coarse_ok,
        detail: format!(
            "E2 = {} (decreasing: {decreasing}), EOC = {} (all in [1.2, 1.8]: {in_band}), coarse E2 vs {TABULATED_COARSE_E2} within factor 2: {coarse_ok}",
            sci(&errors),
            fixed(&orders)
        ),
    }
}

struct AdmmRuns {
    ihadmm: Vec<AdmmTrace>,
    classical: Vec<AdmmTrace>,
    ladmm: Vec<AdmmTrace>,
    ihadmm_time: Vec<f64>,
    classical_time: Vec<f64>,
}

fn run_admm(spec: &ProblemSpec, variant: AdmmVariant) -> (AdmmTrace, f64) {
    let mut cfg = AdmmConfig::new(variant, spec.alpha).with_tol(1e-6);
    if variant == AdmmVariant::Ihadmm {
        cfg.sigma = 0.1 * spec.alpha;
        cfg.tau = 1.0;
    }
    let start = Instant::now();
    let (_, trace) = admm_solve(spec, &cfg, &IterateState::zeros(spec.n())).unwrap();
    (trace, start.elapsed().as_secs_f64())
}

fn admm_runs() -> AdmmRuns {
    let mut runs = AdmmRuns {
        ihadmm: vec![],
        classical: vec![],
        ladmm: vec![],
        ihadmm_time: vec![],
        classical_time: vec![],
    };
    for level in SQUARE_LEVELS {
        let spec = example2_spec(level).unwrap();
        let (t, s) = run_admm(&spec, AdmmVariant::Ihadmm);
        runs.ihadmm.push(t);
        runs.ihadmm_time.push(s);
        let (t, s) = run_admm(&spec, AdmmVariant::Classical);
        runs.classical.push(t);
        runs.classical_time.push(s);
        runs.ladmm.push(run_admm(&spec, AdmmVariant::Ladmm).0);
    }
    runs
}

fn counts(traces: &[AdmmTrace]) -> Vec<usize> {
    traces.iter().map(|t| t.iterations()).collect()
}

fn mesh_independence(runs: &AdmmRuns) -> Outcome {
    let its = counts(&runs.ihadmm);
    let converged = runs.ihadmm.iter().all(|t| t.converged);
    let (lo, hi) = (*its.iter().min().unwrap(), *its.iter().max().unwrap());
    let factor = hi as f64 / lo as f64;
    let window = its.iter().all(|&k| (10..=60).contains(&k));
    Outcome {
        passed: converged && factor <= 2.0 && window,
        detail: format!(
            "ihADMM iterations {its:?} (converged: {converged}), max/min = {factor:.2} (<= 2: {}), all in [10, 60]: {window}",
            factor <= 2.0
        ),
    }
}

fn ordering(runs: &AdmmRuns) -> Outcome {
    let (ih, cl, la) = (counts(&runs.ihadmm), counts(&runs.classical), counts(&runs.ladmm));
    let converged = runs.classical.iter().chain(&runs.ladmm).all(|t| t.converged);
    let classical_ok = cl.iter().zip(&ih).all(|(c, i)| c >= i);
    let ladmm_ok = la.iter().zip(&ih).all(|(l, i)| l >= i);
    Outcome {
        passed: converged && classical_ok && ladmm_ok,
        detail: format!(
            "levels {SQUARE_LEVELS:?}: ihADMM {ih:?}, classical {cl:?} (>= ihADMM: {classical_ok}), LADMM {la:?} (>= ihADMM: {ladmm_ok})"
        ),
    }
}

fn two_phase_efficiency() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    let specs = SQUARE_LEVELS
        .iter()
        .map(|&l| example2_spec(l).unwrap())
        .chain(DISK_LEVELS.iter().map(|&l| example1_spec(l).unwrap()));
    for spec in specs {
        let (warm, trace) = two_phase_solve(&spec, &phase1_config(&spec), &PdasConfig::default()).unwrap();
        let (cold, _) = pdas_globalized(&spec, &PdasConfig::default(), &IterateState::zeros(spec.n())).unwrap();
        let du = spec.fem.mass_norm(&sub(&warm.u, &cold.u));
        let its = trace.pdas.iterations();
        let eta = trace.pdas.final_eta();
        let ok = its <= 15 && eta <= 1e-11 && du <= 1e-8;
        passed &= ok;
        parts.push(format!(
            "ex{} L{}: {its} its, eta {eta:.1e}, |du|_M {du:.1e}",
            spec.example.unwrap_or(0),
            spec.level
        ));
    }
    Outcome {
        passed,
        detail: parts.join("; "),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut worst = 0f64;
    let mut parts = Vec::new();
    for spec in [example2_spec(1).unwrap(), interior_scalar_spec().unwrap()] {
        let oracle = scalar_kkt_oracle(&spec);
        for (_, u) in all_solver_controls(&spec, 1e-13).unwrap() {
            worst = worst.max((u[0] - oracle).abs());
        }
        parts.push(format!("{oracle:.10}"));
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!(
            "bisection oracles [{}], max deviation over ihADMM/classical/LADMM/PDAS/two-phase {worst:.2e}",
            parts.join(", ")
        ),
    }
}

/// The suite behind `eoc-solver check`.
fn property_suite() -> Outcome {
    let start = Instant::now();
    let results = run_checks(17).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    Outcome {
        passed: failed.is_empty() && elapsed < 30.0,
        detail: format!(
            "{} of {} checks passed in {elapsed:.1}s{}",
            results.len() - failed.len(),
            results.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" | ")) }
        ),
    }
}

/// Not a criterion: ihADMM iteration counts with the larger penalty
/// `sigma = alpha`, for comparison with criterion 2.
fn penalty_sensitivity() -> String {
    let its: Vec<usize> = SQUARE_LEVELS
        .iter()
        .map(|&l| {
            let spec = example2_spec(l).unwrap();
            let mut cfg = AdmmConfig::new(AdmmVariant::Ihadmm, spec.alpha).with_tol(1e-6);
            cfg.sigma = spec.alpha;
            admm_solve(&spec, &cfg, &IterateState::zeros(spec.n())).unwrap().1.iterations()
        })
        .collect();
    format!("with sigma = alpha, ihADMM needs {its:?} iterations on levels {SQUARE_LEVELS:?}")
}

fn relative_time(runs: &AdmmRuns) -> Outcome {
    let faster = runs.ihadmm_time.iter().zip(&runs.classical_time).all(|(i, c)| i < c);
    Outcome {
        passed: faster,
        detail: format!(
            "wall time ihADMM {}s vs classical ADMM {}s per level {SQUARE_LEVELS:?}; only the relative ordering is checked",
            fixed(&runs.ihadmm_time),
            fixed(&runs.classical_time)
        ),
    }
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; listing
    // requests get an empty answer so filters do not trigger the suite
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let mut results = Vec::new();
    let mut run = |id: usize, title: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        report(id, title, &outcome);
        println!("    ({:.1}s)", t.elapsed().as_secs_f64());
        results.push(outcome.passed);
    };
    run(1, "convergence order", &convergence_order);
    let runs = admm_runs();
    run(2, "mesh independence of ihADMM", &|| mesh_independence(&runs));
    println!("    info: {}", penalty_sensitivity());
    run(3, "algorithm ordering", &|| ordering(&runs));
    run(4, "two-phase efficiency", &two_phase_efficiency);
    run(5, "one-dof oracle equivalence", &oracle_equivalence);
    run(6, "property suite", &property_suite);
    run(7, "desk-scale substitutes", &|| relative_time(&runs));
    let passed = results.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
