//! Two-phase orchestration and mesh-ladder campaigns.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{admm_solve, ihadmm_solve, AdmmConfig, AdmmTrace, AdmmVariant};
use crate::error::{Error, Result};
use crate::fem::{assemble_mass_full, eoc, nodal_l2_error};
use crate::linalg::sparse::{quad_form, sub};
use crate::mesh::{refine, Mesh};
use crate::pdas::{pdas_globalized, pdas_solve, PdasConfig, PdasTrace};
use crate::problem::{example1_spec, example2_exact_control, example2_spec, IterateState, ProblemSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseTrace {
    pub admm: AdmmTrace,
    pub pdas: PdasTrace,
}

/// ihADMM to `phase1.tol`, then the active-set method from
/// `mu = M(p - alpha u)` to `phase2.tol`.
pub fn two_phase_solve(
    spec: &ProblemSpec,
    phase1: &AdmmConfig,
    phase2: &PdasConfig,
) -> Result<(IterateState, TwoPhaseTrace)> {
    if phase1.variant != AdmmVariant::Ihadmm {
        return Err(Error::InvalidArgument("phase I must use ihADMM".into()));
    }
    let (s, admm) = ihadmm_solve(spec, phase1, &IterateState::zeros(spec.n())).map_err(|e| e.in_phase("phase I"))?;
    let mut init = s;
    init.mu = spec.multiplier(&init.u, &init.p);
    let (sol, pdas) = pdas_solve(spec, phase2, &init).map_err(|e| e.in_phase("phase II"))?;
    Ok((sol, TwoPhaseTrace { admm, pdas }))
}

/// Nodal control on the whole mesh. Boundary values follow the projection
/// formula `u = Pi(p / alpha)` with the homogeneous adjoint boundary value
/// `p = 0`, i.e. `u = Pi(0)`.
pub fn extend_control(u: &[f64], spec: &ProblemSpec) -> Vec<f64> {
    let mesh = spec.fem.mesh();
    let boundary_value = 0f64.clamp(spec.a, spec.b);
    let mut full = mesh.extend_by_zero(u);
    for (v, &on_boundary) in full.iter_mut().zip(mesh.boundary_mask()) {
        if on_boundary {
            *v = boundary_value;
        }
    }
    full
}

/// P1 prolongation of nodal values from `coarse` to `fine`, where `fine` must
/// coincide (up to node numbering) with `coarse` after repeated [`refine`].
/// New vertices get the average of their parent edge's end values (for the
/// disk this is the value at the unprojected midpoint).
pub fn interpolate_to_fine(v_coarse: &[f64], coarse: &Mesh, fine: &Mesh) -> Result<Vec<f64>> {
    if v_coarse.len() != coarse.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: coarse.n_nodes(),
            got: v_coarse.len(),
        });
    }
    let mut mesh = coarse.clone();
    let mut values = v_coarse.to_vec();
    while mesh.n_nodes() < fine.n_nodes() {
        let edges = mesh.edges();
        let mids: Vec<f64> = edges.order.iter().map(|&(i, j)| 0.5 * (values[i] + values[j])).collect();
        values.extend(mids);
        mesh = refine(&mesh);
    }
    let not_nested = || {
        Error::NotNested(format!(
            "{} coarse nodes do not refine into the {} fine nodes",
            coarse.n_nodes(),
            fine.n_nodes()
        ))
    };
    if mesh.n_nodes() != fine.n_nodes() || mesh.triangles().len() != fine.triangles().len() {
        return Err(not_nested());
    }
    // match nodes by position, then require identical triangles
    let key = |p: &[f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let index: HashMap<_, usize> = fine.nodes().iter().enumerate().map(|(i, p)| (key(p), i)).collect();
    let mut perm = Vec::with_capacity(mesh.n_nodes());
    for p in mesh.nodes() {
        perm.push(*index.get(&key(p)).ok_or_else(not_nested)?);
    }
    let sorted = |t: [usize; 3]| {
        let mut t = t;
        t.sort_unstable();
        t
    };
    let fine_triangles: HashSet<[usize; 3]> = fine.triangles().iter().map(|&t| sorted(t)).collect();
    if !mesh
        .triangles()
        .iter()
        .all(|t| fine_triangles.contains(&sorted([perm[t[0]], perm[t[1]], perm[t[2]]])))
    {
        return Err(not_nested());
    }
    let mut out = vec![0.0; fine.n_nodes()];
    for (v, &i) in values.iter().zip(&perm) {
        out[i] = *v;
    }
    Ok(out)
}

/// `|| u - exact ||_{L2}` for the square example, with the control extended
/// to the boundary by [`extend_control`].
pub fn example2_control_error(u: &[f64], spec: &ProblemSpec) -> f64 {
    nodal_l2_error(&extend_control(u, spec), example2_exact_control, spec.fem.mesh())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ihadmm,
    Classical,
    Ladmm,
    /// Globalized active-set method from a cold start.
    Pdas,
    TwoPhase,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ihadmm => "ihadmm",
            Algorithm::Classical => "classical",
            Algorithm::Ladmm => "ladmm",
            Algorithm::Pdas => "pdas",
            Algorithm::TwoPhase => "two-phase",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Algorithm::Ihadmm,
            Algorithm::Classical,
            Algorithm::Ladmm,
            Algorithm::Pdas,
            Algorithm::TwoPhase,
        ]
        .into_iter()
        .find(|a| a.name() == s)
    }

    fn admm_variant(self) -> Option<AdmmVariant> {
        match self {
            Algorithm::Ihadmm => Some(AdmmVariant::Ihadmm),
            Algorithm::Classical => Some(AdmmVariant::Classical),
            Algorithm::Ladmm => Some(AdmmVariant::Ladmm),
            _ => None,
        }
    }
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::TwoPhase]
}
fn default_phase1_tol() -> f64 {
    1e-3
}
fn default_phase2_tol() -> f64 {
    1e-11
}
fn default_comparison_tol() -> f64 {
    1e-6
}
fn default_maxit() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub example: u8,
    pub levels: Vec<usize>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_phase1_tol")]
    pub phase1_tol: f64,
    #[serde(default = "default_phase2_tol")]
    pub phase2_tol: f64,
    /// Stopping tolerance for stand-alone ADMM runs.
    #[serde(default = "default_comparison_tol")]
    pub comparison_tol: f64,
    /// Penalty as a multiple of alpha (default 0.1).
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn new(example: u8, levels: Vec<usize>) -> Self {
        CampaignConfig {
            example,
            levels,
            algorithms: default_algorithms(),
            phase1_tol: default_phase1_tol(),
            phase2_tol: default_phase2_tol(),
            comparison_tol: default_comparison_tol(),
            sigma: None,
            tau: None,
            maxit: default_maxit(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_level = match self.example {
            1 => 5,
            2 => 7,
            e => return Err(Error::InvalidArgument(format!("unknown example {e}"))),
        };
        if self.levels.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("levels and algorithms must be nonempty".into()));
        }
        if let Some(&l) = self.levels.iter().find(|&&l| l > max_level || (self.example == 2 && l == 0)) {
            return Err(Error::InvalidArgument(format!(
                "level {l} outside the supported range for example {}",
                self.example
            )));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("levels must be strictly increasing".into()));
        }
        let tols = [self.phase1_tol, self.phase2_tol, self.comparison_tol];
        if tols.iter().any(|t| !(*t > 0.0)) || self.phase2_tol >= self.phase1_tol {
            return Err(Error::InvalidArgument(
                "tolerances must be positive with phase2_tol < phase1_tol".into(),
            ));
        }
        if self.maxit == 0 {
            return Err(Error::InvalidArgument("maxit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn spec(&self, level: usize) -> Result<ProblemSpec> {
        match self.example {
            1 => example1_spec(level),
            2 => example2_spec(level),
            e => Err(Error::InvalidArgument(format!("unknown example {e}"))),
        }
    }

    pub fn admm_config(&self, variant: AdmmVariant, alpha: f64, tol: f64) -> AdmmConfig {
        let mut cfg = AdmmConfig::new(variant, alpha).with_tol(tol);
        if let Some(s) = self.sigma {
            cfg.sigma = s * alpha;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.maxit = self.maxit;
        cfg
    }

    pub fn pdas_config(&self) -> PdasConfig {
        PdasConfig {
            tol: self.phase2_tol,
            ..PdasConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub algorithm: Algorithm,
    /// Iterations of the (first) phase.
    pub iterations: usize,
    /// Active-set iterations of the second phase, if any.
    pub iterations2: Option<usize>,
    pub e2: Option<f64>,
    pub eoc: Option<f64>,
    /// Final residual of the first phase (two-phase runs) or of the run.
    pub eta1: f64,
    pub eta: f64,
    pub time_s: f64,
    pub status: String,
    pub trace_files: Vec<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

pub enum RunTrace {
    Admm(AdmmTrace),
    Pdas(PdasTrace),
    TwoPhase(TwoPhaseTrace),
}

/// One solve of one algorithm: the final iterate (if any) and its record.
pub struct RunOutcome {
    pub state: Option<IterateState>,
    pub record: RunRecord,
    pub trace: Option<RunTrace>,
}

/// Runs `algorithm` on `spec` with the campaign's tolerances.
pub fn run_algorithm(spec: &ProblemSpec, algorithm: Algorithm, cfg: &CampaignConfig) -> RunOutcome {
    let start = Instant::now();
    let mut record = RunRecord {
        level: spec.level,
        h: spec.fem.mesh().h(),
        dofs: spec.n(),
        algorithm,
        iterations: 0,
        iterations2: None,
        e2: None,
        eoc: None,
        eta1: f64::NAN,
        eta: f64::NAN,
        time_s: 0.0,
        status: "ok".into(),
        trace_files: Vec::new(),
    };
    let init = IterateState::zeros(spec.n());
    let result: Result<(IterateState, RunTrace)> = match algorithm {
        Algorithm::TwoPhase => {
            let p1 = cfg.admm_config(AdmmVariant::Ihadmm, spec.alpha, cfg.phase1_tol);
            two_phase_solve(spec, &p1, &cfg.pdas_config()).map(|(s, t)| (s, RunTrace::TwoPhase(t)))
        }
        Algorithm::Pdas => pdas_globalized(spec, &cfg.pdas_config(), &init).map(|(s, t)| (s, RunTrace::Pdas(t))),
        other => {
            let variant = other.admm_variant().expect("ADMM variant");
            let acfg = cfg.admm_config(variant, spec.alpha, cfg.comparison_tol);
            admm_solve(spec, &acfg, &init).map(|(s, t)| (s, RunTrace::Admm(t)))
        }
    };
    record.time_s = (start.elapsed().as_secs_f64() * 100.0).round() / 100.0;
    match result {
        Ok((state, trace)) => {
            match &trace {
                RunTrace::Admm(t) => {
                    record.iterations = t.iterations();
                    record.eta = t.final_eta();
                    record.eta1 = record.eta;
                    if !t.converged {
                        record.status = format!("max iterations ({})", t.iterations());
                    }
                }
                RunTrace::Pdas(t) => {
                    record.iterations = t.iterations();
                    record.eta = t.final_eta();
                    record.eta1 = record.eta;
                }
                RunTrace::TwoPhase(t) => {
                    record.iterations = t.admm.iterations();
                    record.iterations2 = Some(t.pdas.iterations());
                    record.eta1 = t.admm.final_eta();
                    record.eta = t.pdas.final_eta();
                }
            }
            RunOutcome {
                state: Some(state),
                record,
                trace: Some(trace),
            }
        }
        Err(e) => {
            log::error!("level {} {}: {e}", spec.level, algorithm.name());
            record.status = e.to_string();
            RunOutcome {
                state: None,
                record,
                trace: None,
            }
        }
    }
}

fn write_traces(dir: &Path, record: &mut RunRecord, trace: &RunTrace) -> Result<()> {
    let stem = format!("trace_L{}_{}", record.level, record.algorithm.name());
    let mut files = Vec::new();
    match trace {
        RunTrace::Admm(t) => {
            let f = format!("{stem}.csv");
            t.save_csv(&dir.join(&f))?;
            files.push(f);
        }
        RunTrace::Pdas(t) => {
            let f = format!("{stem}.csv");
            t.save_csv(&dir.join(&f))?;
            files.push(f);
        }
        RunTrace::TwoPhase(t) => {
            let f1 = format!("{stem}_phase1.csv");
            let f2 = format!("{stem}_phase2.csv");
            t.admm.save_csv(&dir.join(&f1))?;
            t.pdas.save_csv(&dir.join(&f2))?;
            files.extend([f1, f2]);
        }
    }
    record.trace_files = files;
    Ok(())
}

/// Per-level results, ordered as `cfg.levels` x `cfg.algorithms`.
struct LevelResult {
    spec: ProblemSpec,
    outcomes: Vec<RunOutcome>,
}

fn worker_threads() -> Option<usize> {
    std::env::var("EOC_SOLVER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs every configured algorithm on every level, fills in E2 and EOC and,
/// when `out_dir` is set, writes `campaign.csv`, `campaign.json` and one
/// trace CSV per run. Failures of individual runs are recorded, not fatal.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let solve_level = |level: usize| -> Result<LevelResult> {
        let spec = cfg.spec(level)?;
        let outcomes = cfg.algorithms.iter().map(|&a| run_algorithm(&spec, a, cfg)).collect();
        Ok(LevelResult { spec, outcomes })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let levels: Vec<LevelResult> = pool.install(|| {
        cfg.levels
            .par_iter()
            .map(|&l| solve_level(l))
            .collect::<Result<Vec<_>>>()
    })?;

    let e2 = control_errors(cfg, &levels)?;

    let mut records = Vec::new();
    for mut level in levels {
        for outcome in level.outcomes.iter_mut() {
            if let (Some(dir), Some(trace)) = (&cfg.out_dir, &outcome.trace) {
                write_traces(dir, &mut outcome.record, trace)?;
            }
        }
        records.extend(level.outcomes.into_iter().map(|o| o.record));
    }
    for (r, e) in records.iter_mut().zip(e2) {
        r.e2 = e;
    }
    attach_eoc(cfg.algorithms.len(), &mut records)?;
    if let Some(dir) = &cfg.out_dir {
        write_campaign(dir, cfg, &records)?;
    }
    Ok(records)
}

/// E2 for every outcome, row-major in levels x algorithms. The square example
/// is measured against the exact control; the disk example against the same
/// algorithm's solution on the finest level (which itself gets `None`).
fn control_errors(cfg: &CampaignConfig, levels: &[LevelResult]) -> Result<Vec<Option<f64>>> {
    let mut e2 = Vec::new();
    if cfg.example == 2 {
        for level in levels {
            for o in &level.outcomes {
                e2.push(o.state.as_ref().map(|s| example2_control_error(&s.u, &level.spec)));
            }
        }
        return Ok(e2);
    }
    let finest = levels.last().expect("nonempty levels");
    let fine_mesh = finest.spec.fem.mesh();
    let m_full = assemble_mass_full(fine_mesh);
    for level in levels {
        for (a, o) in level.outcomes.iter().enumerate() {
            let reference = finest.outcomes[a].state.as_ref();
            let value = match (o.state.as_ref(), reference) {
                (Some(s), Some(r)) if level.spec.level != finest.spec.level => {
                    let coarse = extend_control(&s.u, &level.spec);
                    let fine = extend_control(&r.u, &finest.spec);
                    let lifted = interpolate_to_fine(&coarse, level.spec.fem.mesh(), fine_mesh)?;
                    Some(quad_form(&m_full, &sub(&lifted, &fine)).max(0.0).sqrt())
                }
                _ => None,
            };
            e2.push(value);
        }
    }
    Ok(e2)
}

/// EOC per algorithm between consecutive levels with positive errors.
fn attach_eoc(n_algorithms: usize, records: &mut [RunRecord]) -> Result<()> {
    for i1 in n_algorithms..records.len() {
        let i0 = i1 - n_algorithms;
        if let (Some(e0), Some(e1)) = (records[i0].e2, records[i1].e2) {
            if e0 > 0.0 && e1 > 0.0 {
                records[i1].eoc = eoc(&[e0, e1], &[records[i0].h, records[i1].h])?.first().copied();
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CampaignReport<'a> {
    config: &'a CampaignConfig,
    records: &'a [RunRecord],
}

fn write_campaign(dir: &Path, cfg: &CampaignConfig, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("campaign.csv"))?;
    w.write_record([
        "level", "h", "dofs", "algorithm", "iterations", "iterations2", "E2", "EOC", "eta1", "eta", "time_s",
        "status",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:e}"));
    for r in records {
        w.write_record([
            r.level.to_string(),
            format!("{:e}", r.h),
            r.dofs.to_string(),
            r.algorithm.name().to_string(),
            r.iterations.to_string(),
            r.iterations2.map_or_else(|| "-".to_string(), |v| v.to_string()),
            opt(r.e2),
            opt(r.eoc),
            format!("{:e}", r.eta1),
            format!("{:e}", r.eta),
            format!("{:.2}", r.time_s),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    let report = CampaignReport { config: cfg, records };
    std::fs::write(dir.join("campaign.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
