use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use crate::apdagd::{approx_pot_apdagd_with, ApdagdOptions, EntropicConfig};
use crate::dualextra::{de_solve_with, normalize, DeOptions, DeSchedule, KAPPA};
use crate::error::{PotError, Result};
use crate::harness::io::{read_cost_file, read_marginal_file, write_trace, ConfigRecord, ErrorRecord, SummaryRecord, TraceLine};
use crate::problem::{PotProblem, SolveReport, TraceOptions};
use crate::reference::{solve_exact, solve_exact_with_limit, DEFAULT_SIZE_LIMIT};
use crate::sinkhorn::{entropic_gamma, feasible_dummy_cost, solve_feasible, solve_infeasible, SinkhornOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    SinkhornInfeasible,
    Sinkhorn,
    Apdagd,
    De,
    Exact,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::SinkhornInfeasible, Algo::Sinkhorn, Algo::Apdagd, Algo::De, Algo::Exact];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::SinkhornInfeasible => "sinkhorn_infeasible",
            Algo::Sinkhorn => "sinkhorn",
            Algo::Apdagd => "apdagd",
            Algo::De => "de",
            Algo::Exact => "exact",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = PotError;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| PotError::InvalidParameter(format!("unknown algorithm {s:?}")))
    }
}

/// Solver selection and its knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub algo: Algo,
    pub eps: f64,
    pub max_iter: Option<u64>,
    /// Dummy cost for the infeasible Sinkhorn baseline; defaults to `2‖C‖max`.
    pub a_val: Option<f64>,
    /// Known optimum. Without it, instances with `n ≤ 64` are solved exactly
    /// first so trace rows carry a primal gap.
    pub fstar: Option<f64>,
    /// Trace every k-th iteration; 0 disables per-iteration records.
    pub trace_every: usize,
}

impl SolverSettings {
    pub fn new(algo: Algo, eps: f64) -> Self {
        SolverSettings { algo, eps, max_iter: None, a_val: None, fstar: None, trace_every: 10 }
    }
}

/// A solve driven from files.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub settings: SolverSettings,
    pub r: PathBuf,
    pub c: PathBuf,
    pub cost: PathBuf,
    pub s: f64,
    /// Trace destination; `None` writes to stdout.
    pub out: Option<PathBuf>,
}

/// Everything a run produced, ready to be written.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub lines: Vec<TraceLine>,
    pub exit_code: i32,
    pub report: Option<SolveReport>,
}

fn default_infeasible_a(problem: &PotProblem) -> f64 {
    let c_max = problem.cost_max();
    if c_max > 0.0 {
        2.0 * c_max
    } else {
        1.0
    }
}

/// Constants the chosen solver will derive, resolved up front.
pub fn resolved_constants(problem: &PotProblem, settings: &SolverSettings) -> Result<BTreeMap<String, f64>> {
    let eps = settings.eps;
    let mut k = BTreeMap::new();
    let mut put = |name: &str, v: f64| {
        k.insert(name.to_string(), v);
    };
    match settings.algo {
        Algo::SinkhornInfeasible | Algo::Sinkhorn => {
            let a_val = if settings.algo == Algo::Sinkhorn {
                feasible_dummy_cost(problem.cost_max(), eps)
            } else {
                settings.a_val.unwrap_or_else(|| default_infeasible_a(problem))
            };
            put("gamma", entropic_gamma(eps, problem.n()));
            put("a_val", a_val);
            put("inner_tol", eps / (8.0 * a_val));
        }
        Algo::Apdagd => {
            let cfg = EntropicConfig::for_problem(problem, eps)?;
            let (eps_f, eps_eq) = cfg.tolerances(problem);
            put("gamma", cfg.gamma);
            put("eps_tilde", cfg.eps_tilde);
            put("eps_f", eps_f);
            put("eps_eq", eps_eq);
            put("l0", 1.0);
        }
        Algo::De => {
            let np = normalize(problem)?;
            let eps_norm = eps / np.d_total;
            put("d_total", np.d_total);
            put("eps_norm", eps_norm);
            put("kappa", KAPPA);
            if np.d_inf > 0.0 {
                let sched = DeSchedule::new(&np, eps_norm, crate::dualextra::DEFAULT_PROX_CAP);
                put("theta", sched.theta);
                put("iterations_t", sched.iterations as f64);
                put("prox_steps_m", sched.prox_steps as f64);
                put("prox_steps_m_raw", sched.prox_steps_raw);
            }
        }
        Algo::Exact => put("size_limit", DEFAULT_SIZE_LIMIT.max(problem.n()) as f64),
    }
    Ok(k)
}

fn dispatch(problem: &PotProblem, settings: &SolverSettings, trace: TraceOptions) -> Result<SolveReport> {
    let eps = settings.eps;
    match settings.algo {
        Algo::SinkhornInfeasible | Algo::Sinkhorn => {
            let mut opts = SinkhornOptions { trace, ..SinkhornOptions::default() };
            if let Some(m) = settings.max_iter {
                opts.max_iter = m as usize;
            }
            if settings.algo == Algo::Sinkhorn {
                solve_feasible(problem, eps, opts)
            } else {
                let a_val = settings.a_val.unwrap_or_else(|| default_infeasible_a(problem));
                solve_infeasible(problem, eps, a_val, opts)
            }
        }
        Algo::Apdagd => {
            let mut opts = ApdagdOptions { trace, ..ApdagdOptions::default() };
            if let Some(m) = settings.max_iter {
                opts.max_iter = m as usize;
            }
            approx_pot_apdagd_with(problem, eps, opts)
        }
        Algo::De => {
            let mut opts = DeOptions { trace, ..DeOptions::default() };
            if let Some(m) = settings.max_iter {
                opts.iteration_cap = m;
            }
            de_solve_with(problem, eps, opts)
        }
        Algo::Exact => {
            let sol = solve_exact_with_limit(problem, DEFAULT_SIZE_LIMIT.max(problem.n()))?;
            Ok(SolveReport::new(sol.plan, problem, sol.pivots).diagnostic("f_star", sol.value))
        }
    }
}

fn error_line(e: &PotError) -> TraceLine {
    TraceLine::Error(ErrorRecord { kind: e.kind().to_string(), message: e.to_string() })
}

/// Solves an in-memory instance and assembles the trace: a config record,
/// iteration records, then a summary (or error) record.
pub fn solve_problem(problem: &PotProblem, settings: &SolverSettings) -> ExperimentResult {
    let start = Instant::now();
    let constants = match resolved_constants(problem, settings) {
        Ok(k) => k,
        Err(e) => return ExperimentResult { lines: vec![error_line(&e)], exit_code: EXIT_USAGE, report: None },
    };

    let mut notes = Vec::new();
    let f_star = match (settings.fstar, settings.algo) {
        (Some(f), _) => Some(f),
        (None, Algo::Exact) => None,
        (None, _) if problem.n() <= DEFAULT_SIZE_LIMIT => match solve_exact(problem) {
            Ok(sol) => Some(sol.value),
            Err(e) => {
                notes.push(format!("exact oracle unavailable: {e}"));
                None
            }
        },
        _ => None,
    };

    let mut lines = vec![TraceLine::Config(ConfigRecord {
        algo: settings.algo.to_string(),
        n: problem.n(),
        eps: settings.eps,
        s: problem.s(),
        max_iter: settings.max_iter,
        constants,
        f_star,
        notes,
    })];

    let mut trace = TraceOptions::every(settings.trace_every);
    trace.fstar = f_star;
    let (report, status, exit_code) = match dispatch(problem, settings, trace) {
        Ok(r) => (Some(r), "ok".to_string(), EXIT_OK),
        Err(e) => {
            let kind = e.kind().to_string();
            match e {
                PotError::NotConverged { report: Some(r), .. } => (Some(*r), kind, EXIT_SOLVE),
                other => {
                    lines.push(error_line(&other));
                    (None, kind, EXIT_SOLVE)
                }
            }
        }
    };

    if let Some(r) = &report {
        let f_star = if settings.algo == Algo::Exact { r.diagnostics.get("f_star").copied() } else { f_star };
        lines.extend(r.trace.iter().cloned().map(TraceLine::Iter));
        lines.push(TraceLine::Summary(SummaryRecord {
            algo: settings.algo.to_string(),
            n: problem.n(),
            eps: settings.eps,
            f_star,
            objective: r.objective,
            violation: r.violation,
            primal_gap: f_star.map(|f| r.objective - f),
            iterations: r.iterations,
            total_s: start.elapsed().as_secs_f64(),
            status,
            diagnostics: r.diagnostics.clone(),
        }));
    }
    ExperimentResult { lines, exit_code, report }
}

/// Loads the instance files named in `config`.
pub fn load_problem(config: &RunConfig) -> Result<PotProblem> {
    let r = read_marginal_file(&config.r)?;
    let c = read_marginal_file(&config.c)?;
    let cost = read_cost_file(&config.cost)?;
    PotProblem::new(r, c, config.s, cost)
}

/// Reads the inputs, solves, writes the trace and returns the exit code:
/// 0 on success, 1 for unreadable or invalid input, 2 when the solver fails.
pub fn run_experiment(config: &RunConfig) -> i32 {
    let result = match load_problem(config) {
        Ok(problem) => solve_problem(&problem, &config.settings),
        Err(e) => ExperimentResult { lines: vec![error_line(&e)], exit_code: EXIT_USAGE, report: None },
    };
    let text = write_trace(&result.lines);
    match &config.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("cannot write {}: {e}", path.display());
                return EXIT_USAGE;
            }
        }
        None => print!("{text}"),
    }
    result.exit_code
}
