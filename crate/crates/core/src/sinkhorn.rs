//! Sinkhorn for partial transport through the dummy-point reduction.
//!
//! The instance is embedded in a balanced `(n+1) × (n+1)` OT problem: the
//! extra row absorbs `‖c‖₁ − s` mass, the extra column absorbs `‖r‖₁ − s`,
//! and the dummy-to-dummy cell costs `A`. Two procedures are built on it:
//!
//! - [`solve_infeasible`]: the classic pipeline (Sinkhorn, then OT
//!   rounding, then keep the top-left block). The transported mass exceeds
//!   `s` by exactly the dummy-to-dummy entry.
//! - [`solve_feasible`]: `A = ‖C‖max / ε` and the POT rounding, which gives
//!   an exactly feasible plan.
//!
//! Scaling runs in the log domain throughout.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{PotError, Result};
use crate::problem::{constraint_violation, pot_objective, PotProblem, PrimalPoint, SolveReport, TraceOptions, TraceRecorder};
use crate::rounding::{fit_marginals, round_pot};

/// Smallest entropic strength used, whatever `ε` is.
pub const GAMMA_FLOOR: f64 = 1e-9;
/// Default iteration cap for the scaling loop.
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Zero marginal entries are lifted to this value before taking logs.
const MARGINAL_FLOOR: f64 = 1e-16;

/// The balanced OT instance obtained by adding a dummy point.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedOtProblem {
    pub cost: Array2<f64>,
    pub rt: Array1<f64>,
    pub ct: Array1<f64>,
    pub a_val: f64,
}

impl ExtendedOtProblem {
    /// `n + 1`.
    pub fn size(&self) -> usize {
        self.rt.len()
    }

    pub fn cost_max(&self) -> f64 {
        self.cost.iter().fold(0.0_f64, |m, &v| m.max(v))
    }
}

/// Log-domain scalings: the plan is `exp(−C/γ + u 1ᵀ + 1 vᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingState {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub gamma: f64,
}

/// Builds the extended instance. Requires `a_val > ‖C‖max`.
pub fn extend(problem: &PotProblem, a_val: f64) -> Result<ExtendedOtProblem> {
    let c_max = problem.cost_max();
    if !(a_val > c_max) || !a_val.is_finite() {
        return Err(PotError::DummyCostTooSmall { a_val, c_max });
    }
    let n = problem.n();
    let mut cost = Array2::zeros((n + 1, n + 1));
    cost.slice_mut(s![..n, ..n]).assign(&problem.cost());
    cost[[n, n]] = a_val;
    let mut rt = Array1::zeros(n + 1);
    rt.slice_mut(s![..n]).assign(&problem.r());
    rt[n] = (problem.c_mass() - problem.s()).max(0.0);
    let mut ct = Array1::zeros(n + 1);
    ct.slice_mut(s![..n]).assign(&problem.c());
    ct[n] = (problem.r_mass() - problem.s()).max(0.0);
    Ok(ExtendedOtProblem { cost, rt, ct, a_val })
}

/// `γ = ε / (4 log n)`, floored at [`GAMMA_FLOOR`]. `n` is taken as at
/// least 2 so the logarithm is positive.
pub fn entropic_gamma(eps: f64, n: usize) -> f64 {
    (eps / (4.0 * (n.max(2) as f64).ln())).max(GAMMA_FLOOR)
}

/// Output of the scaling loop.
#[derive(Clone, Debug)]
pub struct SinkhornRun {
    pub plan: Array2<f64>,
    pub state: ScalingState,
    pub iterations: usize,
    /// `‖X̃1 − r̃‖₁ + ‖X̃ᵀ1 − c̃‖₁` at exit.
    pub marginal_error: f64,
    pub converged: bool,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Evaluates `exp(log K + u 1ᵀ + 1 vᵀ)`, zeroing rows and columns whose
/// marginal is zero.
fn plan_from_state(
    log_kernel: ArrayView2<'_, f64>,
    state: &ScalingState,
    rt: ArrayView1<'_, f64>,
    ct: ArrayView1<'_, f64>,
) -> Array2<f64> {
    Array2::from_shape_fn(log_kernel.raw_dim(), |(i, j)| {
        if rt[i] == 0.0 || ct[j] == 0.0 {
            0.0
        } else {
            (log_kernel[[i, j]] + state.u[i] + state.v[j]).exp()
        }
    })
}

/// Alternating row/column scaling. `observe` sees the plan after every
/// iteration it asks for (via `wants`), e.g. for tracing.
fn run_scaling(
    ext: &ExtendedOtProblem,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    wants: &dyn Fn(usize) -> bool,
    observe: &mut dyn FnMut(usize, &Array2<f64>) -> Result<()>,
) -> Result<SinkhornRun> {
    if !(gamma > 0.0) {
        return Err(PotError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let m = ext.size();
    let log_kernel = ext.cost.mapv(|c| -c / gamma);
    let log_rt = ext.rt.mapv(|v| v.max(MARGINAL_FLOOR).ln());
    let log_ct = ext.ct.mapv(|v| v.max(MARGINAL_FLOOR).ln());
    let ct_lifted = ext.ct.mapv(|v| v.max(MARGINAL_FLOOR));

    let mut state = ScalingState { u: Array1::zeros(m), v: Array1::zeros(m), gamma };
    let mut col_max = Array1::<f64>::zeros(m);
    let mut col_acc = Array1::<f64>::zeros(m);
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        for (i, row) in log_kernel.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.iter().zip(state.v.iter()).map(|(k, v)| k + v));
            state.u[i] = log_rt[i] - lse;
        }

        // Column log-sums of the row-normalized plan, in two row-major sweeps.
        col_max.fill(f64::NEG_INFINITY);
        for (row, &ui) in log_kernel.rows().into_iter().zip(state.u.iter()) {
            for (cm, &k) in col_max.iter_mut().zip(row.iter()) {
                *cm = cm.max(k + ui);
            }
        }
        col_acc.fill(0.0);
        for (row, &ui) in log_kernel.rows().into_iter().zip(state.u.iter()) {
            for ((acc, &cm), &k) in col_acc.iter_mut().zip(col_max.iter()).zip(row.iter()) {
                *acc += (k + ui - cm).exp();
            }
        }
        let col_lse: Array1<f64> = col_acc.iter().zip(col_max.iter()).map(|(a, m)| m + a.ln()).collect();

        marginal_error = col_lse
            .iter()
            .zip(state.v.iter())
            .zip(ct_lifted.iter())
            .map(|((l, v), c)| ((l + v).exp() - c).abs())
            .sum();
        if !marginal_error.is_finite() || state.u.iter().any(|v| !v.is_finite()) {
            return Err(PotError::NonFinite { what: "sinkhorn scaling" });
        }

        if marginal_error <= tol {
            converged = true;
            break;
        }
        if wants(iterations) {
            observe(iterations, &plan_from_state(log_kernel.view(), &state, ext.rt.view(), ext.ct.view()))?;
        }
        for j in 0..m {
            state.v[j] = log_ct[j] - col_lse[j];
        }
        if state.v.iter().any(|v| !v.is_finite()) {
            return Err(PotError::NonFinite { what: "sinkhorn scaling" });
        }
    }

    let plan = plan_from_state(log_kernel.view(), &state, ext.rt.view(), ext.ct.view());
    if converged && wants(iterations) {
        observe(iterations, &plan)?;
    }
    Ok(SinkhornRun { plan, state, iterations, marginal_error, converged })
}

/// Plain Sinkhorn on the extended instance. Stops when the ℓ1 marginal
/// error is at most `tol`.
pub fn sinkhorn_ot(ext: &ExtendedOtProblem, gamma: f64, tol: f64, max_iter: usize) -> Result<Array2<f64>> {
    let run = sinkhorn_run(ext, gamma, tol, max_iter)?;
    if !run.converged {
        return Err(PotError::NotConverged { iterations: run.iterations, residual: run.marginal_error, report: None });
    }
    Ok(run.plan)
}

/// Like [`sinkhorn_ot`] but returns the last iterate instead of an error
/// when the cap is reached.
pub fn sinkhorn_run(ext: &ExtendedOtProblem, gamma: f64, tol: f64, max_iter: usize) -> Result<SinkhornRun> {
    run_scaling(ext, gamma, tol, max_iter, &|_| false, &mut |_, _| Ok(()))
}

/// Classic OT rounding onto `U(rt, ct)`: shrink rows, then columns, then
/// add the rank-one fill of the deficits.
pub fn round_ot(xt: ArrayView2<'_, f64>, rt: ArrayView1<'_, f64>, ct: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    if xt.iter().any(|&v| !(v >= 0.0)) {
        return Err(PotError::NegativeEntry { what: "plan", index: 0, value: f64::NAN });
    }
    let scale = rt.sum().max(ct.sum()).max(1.0);
    fit_marginals(xt, rt, ct, true, scale)
}

/// Options shared by both Sinkhorn procedures.
#[derive(Clone, Copy, Debug)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    /// Overrides the default inner tolerance `ε / (8 ‖C̃‖max)`.
    pub tol: Option<f64>,
    pub trace: TraceOptions,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { max_iter: DEFAULT_MAX_ITER, tol: None, trace: TraceOptions::off() }
    }
}

/// Splits an extended plan into `(X, p, q, corner)`: `p` is the dummy
/// column, `q` the dummy row.
fn split_extended(plan: &Array2<f64>) -> (PrimalPoint, f64) {
    let n = plan.nrows() - 1;
    let x = plan.slice(s![..n, ..n]).to_owned();
    let p = plan.slice(s![..n, n]).to_owned();
    let q = plan.slice(s![n, ..n]).to_owned();
    (PrimalPoint::new(x, p, q), plan[[n, n]])
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(PotError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Sinkhorn followed by OT rounding on the extended instance, keeping the
/// top-left block. The result satisfies both marginal inequalities but in
/// general transports more than `s`.
pub fn solve_infeasible(problem: &PotProblem, eps: f64, a_val: f64, opts: SinkhornOptions) -> Result<SolveReport> {
    check_eps(eps)?;
    let ext = extend(problem, a_val)?;
    let gamma = entropic_gamma(eps, problem.n());
    let tol = opts.tol.unwrap_or(eps / (8.0 * ext.cost_max()));

    let mut recorder = TraceRecorder::new(opts.trace);
    let run = {
        let wants = |k| recorder.wants(k);
        let mut records = Vec::new();
        let run = run_scaling(&ext, gamma, tol, opts.max_iter, &wants, &mut |k, plan| {
            let rounded = round_ot(plan.view(), ext.rt.view(), ext.ct.view())?;
            let (point, _) = split_extended(&rounded);
            records.push((k, pot_objective(point.x.view(), problem.cost()), constraint_violation(&point, problem)));
            Ok(())
        })?;
        for (k, obj, viol) in records {
            recorder.push(k, obj, viol);
        }
        run
    };

    let rounded = round_ot(run.plan.view(), ext.rt.view(), ext.ct.view())?;
    let (plan, corner) = split_extended(&rounded);
    let report = SolveReport::new(plan, problem, run.iterations)
        .with_trace(recorder.finish())
        .diagnostic("gamma", gamma)
        .diagnostic("a_val", a_val)
        .diagnostic("inner_tol", tol)
        .diagnostic("marginal_error", run.marginal_error)
        .diagnostic("dummy_corner_mass", corner);
    finish(report, run.converged, run.marginal_error)
}

/// Dummy cost used by [`solve_feasible`]: `‖C‖max / ε`, kept strictly above
/// `‖C‖max`.
pub fn feasible_dummy_cost(cost_max: f64, eps: f64) -> f64 {
    if cost_max > 0.0 {
        (cost_max / eps).max(2.0 * cost_max)
    } else {
        1.0
    }
}

/// Sinkhorn on the extended instance with a large dummy cost, followed by
/// Round-POT against the original `(r, c, s)`. Always exactly feasible.
pub fn solve_feasible(problem: &PotProblem, eps: f64, opts: SinkhornOptions) -> Result<SolveReport> {
    check_eps(eps)?;
    let a_val = feasible_dummy_cost(problem.cost_max(), eps);
    let ext = extend(problem, a_val)?;
    let gamma = entropic_gamma(eps, problem.n());
    let tol = opts.tol.unwrap_or(eps / (8.0 * ext.cost_max()));

    let mut recorder = TraceRecorder::new(opts.trace);
    let mut records = Vec::new();
    let run = {
        let wants = |k| recorder.wants(k);
        run_scaling(&ext, gamma, tol, opts.max_iter, &wants, &mut |k, plan| {
            let (point, _) = split_extended(plan);
            let violation = constraint_violation(&point, problem);
            let rounded = round_pot(&point, problem)?;
            records.push((k, pot_objective(rounded.rounded.x.view(), problem.cost()), violation));
            Ok(())
        })?
    };
    for (k, obj, viol) in records {
        recorder.push(k, obj, viol);
    }

    let (point, corner) = split_extended(&run.plan);
    let pre_violation = constraint_violation(&point, problem);
    let rounded = round_pot(&point, problem)?;
    let report = SolveReport::new(rounded.rounded, problem, run.iterations)
        .with_trace(recorder.finish())
        .diagnostic("gamma", gamma)
        .diagnostic("a_val", a_val)
        .diagnostic("inner_tol", tol)
        .diagnostic("marginal_error", run.marginal_error)
        .diagnostic("dummy_corner_mass", corner)
        .diagnostic("pre_rounding_violation", pre_violation)
        .diagnostic("rounding_moved_l1", rounded.moved_l1);
    finish(report, run.converged, run.marginal_error)
}

fn finish(mut report: SolveReport, converged: bool, residual: f64) -> Result<SolveReport> {
    if converged {
        Ok(report)
    } else {
        report.converged = false;
        Err(PotError::NotConverged { iterations: report.iterations, residual, report: Some(Box::new(report)) })
    }
}
