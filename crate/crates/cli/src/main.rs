//! Command-line front end: mesh generation, single solves, campaigns and the
//! property-check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use eoc_core::admm::{admm_solve, AdmmConfig};
use eoc_core::driver::{example2_control_error, run_campaign, two_phase_solve, Algorithm, CampaignConfig};
use eoc_core::pdas::{pdas_globalized, PdasConfig};
use eoc_core::problem::{example1_spec, example2_spec, IterateState, ProblemSpec};
use eoc_core::{checks, Error};

#[derive(Parser, Debug)]
#[command(name = "eoc-solver", version, about = "Box-constrained elliptic optimal control with ihADMM and PDAS")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print mesh statistics, or write the mesh as text with --out.
    Mesh {
        /// 1: unit disk, 2: unit square.
        #[arg(long, default_value_t = 2)]
        example: u8,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one problem instance.
    Solve(SolveArgs),
    /// Run a mesh-ladder campaign.
    Campaign(CampaignArgs),
    /// Run the built-in property checks.
    Check {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// JSON file with any of the fields below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<u8>,
    #[arg(long)]
    level: Option<usize>,
    /// ihadmm, classical, ladmm, pdas or two-phase.
    #[arg(long)]
    algo: Option<String>,
    /// Penalty parameter as a multiple of alpha.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Stopping tolerance (phase I for two-phase).
    #[arg(long)]
    tol: Option<f64>,
    /// Phase II tolerance for two-phase.
    #[arg(long)]
    tol2: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    /// Emit a JSON summary line.
    #[arg(long)]
    json: bool,
    /// Directory for the trace CSVs and the final iterate.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CampaignArgs {
    /// JSON campaign file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<u8>,
    /// Comma-separated levels.
    #[arg(long = "level", value_delimiter = ',')]
    levels: Vec<usize>,
    /// Comma-separated algorithms.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Tolerance of stand-alone ADMM runs.
    #[arg(long)]
    tol: Option<f64>,
    /// Phase I tolerance of two-phase runs.
    #[arg(long)]
    tol1: Option<f64>,
    /// Phase II tolerance (also used by stand-alone PDAS).
    #[arg(long)]
    tol2: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// File form of `solve`; every field mirrors a flag.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    example: Option<u8>,
    level: Option<usize>,
    algo: Option<String>,
    sigma: Option<f64>,
    tau: Option<f64>,
    tol: Option<f64>,
    tol2: Option<f64>,
    maxit: Option<usize>,
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidMesh(_) | Error::DimensionMismatch { .. } => {
                Failure::Config(e.to_string())
            }
            Error::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("invalid config {}: {e}", path.display())))
}

fn spec_for(example: u8, level: usize) -> Result<ProblemSpec, Failure> {
    match example {
        1 => Ok(example1_spec(level)?),
        2 => Ok(example2_spec(level)?),
        e => Err(Failure::Config(format!("unknown example {e} (expected 1 or 2)"))),
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, Failure> {
    Algorithm::parse(s)
        .ok_or_else(|| Failure::Config(format!("unknown algorithm {s:?} (ihadmm, classical, ladmm, pdas, two-phase)")))
}

#[derive(Serialize)]
struct SolveSummary {
    example: u8,
    level: usize,
    dofs: usize,
    algo: &'static str,
    iterations: usize,
    iterations2: Option<usize>,
    eta: f64,
    converged: bool,
    e2: Option<f64>,
    time_s: f64,
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let file: SolveConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SolveConfig::default(),
    };
    let example = args.example.or(file.example).unwrap_or(2);
    let level = args.level.or(file.level).unwrap_or(4);
    let algorithm = parse_algorithm(args.algo.as_deref().or(file.algo.as_deref()).unwrap_or("two-phase"))?;
    let sigma = args.sigma.or(file.sigma);
    let tau = args.tau.or(file.tau);
    let tol = args.tol.or(file.tol);
    let tol2 = args.tol2.or(file.tol2);
    let maxit = args.maxit.or(file.maxit);
    let out = args.out.clone().or(file.out);

    let spec = spec_for(example, level)?;
    let admm_cfg = |variant, default_tol| {
        let mut cfg = AdmmConfig::new(variant, spec.alpha).with_tol(tol.unwrap_or(default_tol));
        if let Some(s) = sigma {
            cfg.sigma = s * spec.alpha;
        }
        if let Some(t) = tau {
            cfg.tau = t;
        }
        if let Some(m) = maxit {
            cfg.maxit = m;
        }
        cfg
    };
    let pdas_cfg = |default_tol: f64| {
        let mut cfg = PdasConfig {
            tol: default_tol,
            ..PdasConfig::default()
        };
        if let Some(m) = maxit {
            cfg.maxit = m;
        }
        cfg
    };
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    }

    let start = Instant::now();
    let init = IterateState::zeros(spec.n());
    let (state, iterations, iterations2, eta, converged) = match algorithm {
        Algorithm::TwoPhase => {
            let p2 = pdas_cfg(tol2.unwrap_or(1e-11));
            if let Some(t) = tol2 {
                if t >= tol.unwrap_or(1e-3) {
                    return Err(Failure::Config("--tol2 must be smaller than --tol".into()));
                }
            }
            let (s, t) = two_phase_solve(&spec, &admm_cfg(eoc_core::AdmmVariant::Ihadmm, 1e-3), &p2)?;
            if let Some(dir) = &out {
                t.admm.save_csv(&dir.join("trace_phase1.csv"))?;
                t.pdas.save_csv(&dir.join("trace_phase2.csv"))?;
            }
            (s, t.admm.iterations(), Some(t.pdas.iterations()), t.pdas.final_eta(), t.pdas.converged)
        }
        Algorithm::Pdas => {
            let (s, t) = pdas_globalized(&spec, &pdas_cfg(tol.unwrap_or(1e-11)), &init)?;
            if let Some(dir) = &out {
                t.save_csv(&dir.join("trace.csv"))?;
            }
            (s, t.iterations(), None, t.final_eta(), t.converged)
        }
        admm => {
            let variant = match admm {
                Algorithm::Ihadmm => eoc_core::AdmmVariant::Ihadmm,
                Algorithm::Classical => eoc_core::AdmmVariant::Classical,
                _ => eoc_core::AdmmVariant::Ladmm,
            };
            let cfg = admm_cfg(variant, 1e-6);
            cfg.validate(&spec)?;
            let (s, t) = admm_solve(&spec, &cfg, &init)?;
            if let Some(dir) = &out {
                t.save_csv(&dir.join("trace.csv"))?;
            }
            (s, t.iterations(), None, t.final_eta(), t.converged)
        }
    };
    let time_s = start.elapsed().as_secs_f64();
    if let Some(dir) = &out {
        let text = serde_json::to_string(&state).map_err(|e| Failure::Solver(e.to_string()))?;
        std::fs::write(dir.join("solution.json"), text)
            .map_err(|e| Failure::Config(format!("cannot write solution: {e}")))?;
    }
    let e2 = (example == 2).then(|| example2_control_error(&state.u, &spec));
    let summary = SolveSummary {
        example,
        level,
        dofs: spec.n(),
        algo: algorithm.name(),
        iterations,
        iterations2,
        eta,
        converged,
        e2,
        time_s,
    };
    let iters = match iterations2 {
        Some(i2) => format!("{iterations}+{i2}"),
        None => iterations.to_string(),
    };
    let target = match algorithm {
        Algorithm::TwoPhase => tol2.unwrap_or(1e-11),
        Algorithm::Pdas => tol.unwrap_or(1e-11),
        _ => tol.unwrap_or(1e-6),
    };
    let relation = if eta < target { "<" } else { ">=" };
    print!("iters={iters}, eta={eta:.3e}{relation}{target:e}");
    if let Some(e) = e2 {
        print!(", E2={e:.4e}");
    }
    println!(", time={time_s:.2}s");
    if args.json {
        println!("{}", serde_json::to_string(&summary).map_err(|e| Failure::Solver(e.to_string()))?);
    }
    if converged {
        Ok(())
    } else {
        Err(Failure::Solver(format!("not converged after {iterations} iterations")))
    }
}

fn campaign(args: CampaignArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<CampaignConfig>(p)?,
        None => CampaignConfig::new(args.example.unwrap_or(2), vec![]),
    };
    if let Some(e) = args.example {
        cfg.example = e;
    }
    if !args.levels.is_empty() {
        cfg.levels = args.levels.clone();
    }
    if !args.algo.is_empty() {
        cfg.algorithms = args.algo.iter().map(|a| parse_algorithm(a)).collect::<Result<_, _>>()?;
    }
    if args.sigma.is_some() {
        cfg.sigma = args.sigma;
    }
    if args.tau.is_some() {
        cfg.tau = args.tau;
    }
    if let Some(t) = args.tol {
        cfg.comparison_tol = t;
    }
    if let Some(t) = args.tol1 {
        cfg.phase1_tol = t;
    }
    if let Some(t) = args.tol2 {
        cfg.phase2_tol = t;
    }
    if let Some(m) = args.maxit {
        cfg.maxit = m;
    }
    if args.out.is_some() {
        cfg.out_dir = args.out.clone();
    }
    cfg.validate()?;
    let records = run_campaign(&cfg)?;
    println!(
        "{:>5} {:>7} {:>10} {:>8} {:>11} {:>9} {:>10} {:>8}  status",
        "level", "dofs", "algo", "iters", "E2", "EOC", "eta", "time"
    );
    let fmt = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$e}"));
    for r in &records {
        let iters = match r.iterations2 {
            Some(i2) => format!("{}+{}", r.iterations, i2),
            None => r.iterations.to_string(),
        };
        println!(
            "{:>5} {:>7} {:>10} {:>8} {:>11} {:>9} {:>10.2e} {:>7.2}s  {}",
            r.level,
            r.dofs,
            r.algorithm.name(),
            iters,
            fmt(r.e2, 4),
            r.eoc.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
            r.eta,
            r.time_s,
            r.status
        );
    }
    if args.json {
        println!("{}", serde_json::to_string(&records).map_err(|e| Failure::Solver(e.to_string()))?);
    }
    match records.iter().find(|r| !r.succeeded()) {
        Some(r) => Err(Failure::Solver(format!(
            "level {} {}: {}",
            r.level,
            r.algorithm.name(),
            r.status
        ))),
        None => Ok(()),
    }
}

fn check(seed: u64, json: bool) -> Result<(), Failure> {
    let start = Instant::now();
    let results = checks::run_checks(seed)?;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("{} checks in {:.1}s", results.len(), start.elapsed().as_secs_f64());
    if json {
        println!("{}", serde_json::to_string(&results).map_err(|e| Failure::Solver(e.to_string()))?);
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Solver("property checks failed".into()))
    }
}

fn mesh(example: u8, level: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let mesh = match example {
        1 => eoc_core::unit_disk_mesh(level),
        2 => eoc_core::unit_square_mesh(1usize.checked_shl(level as u32).unwrap_or(0))?,
        e => return Err(Failure::Config(format!("unknown example {e} (expected 1 or 2)"))),
    };
    println!(
        "nodes={} triangles={} dofs={} h={:.6}",
        mesh.n_nodes(),
        mesh.triangles().len(),
        mesh.n_interior(),
        mesh.h()
    );
    if let Some(path) = out {
        std::fs::write(&path, mesh.to_text())
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Mesh { example, level, out } => mesh(example, level, out),
        Command::Solve(args) => solve(args),
        Command::Campaign(args) => campaign(args),
        Command::Check { seed, json } => check(seed, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
