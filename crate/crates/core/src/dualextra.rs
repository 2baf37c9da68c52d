//! Dual extrapolation on the ℓ1-penalized saddle formulation.
//!
//! After dividing by `D = ‖r‖₁ + ‖c‖₁ − s`, feasible points lie on the
//! simplex `Δ_{n²+2n}`, and the constraint `A x = b` is moved into the
//! objective as `23‖d‖∞ ‖A x − b‖₁ = max_{y ∈ [−1,1]^{2n+1}} 23‖d‖∞ yᵀ(A x − b)`.
//! The resulting bilinear game is solved with dual extrapolation, using the
//! area-convex regularizer `r(x, y) = 2‖d‖∞ (10⟨x, log x⟩ + xᵀAᵀ(y²))` and
//! alternating minimization for its proximal steps.

use ndarray::{Array1, ArrayView1};

use crate::error::{PotError, Result};
use crate::problem::{constraint_violation, pot_objective, PotProblem, PrimalPoint, SolveReport, TraceOptions, TraceRecorder};
use crate::rounding::round_pot;

/// Penalty weight on `‖A x − b‖₁`, in units of `‖d‖∞`.
pub const PENALTY: f64 = 23.0;
/// Area-convexity coefficient of the regularizer.
pub const KAPPA: f64 = 9.0;
pub const DEFAULT_ITERATION_CAP: u64 = 10_000_000;
pub const DEFAULT_PROX_CAP: usize = 100_000;

/// The instance rescaled onto the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedProblem {
    pub n: usize,
    /// `(vec C, 0_{2n})`.
    pub d: Array1<f64>,
    /// `(r, c, s) / D`.
    pub b_norm: Array1<f64>,
    /// `D = ‖r‖₁ + ‖c‖₁ − s`.
    pub d_total: f64,
    /// `‖d‖∞ = ‖C‖max`.
    pub d_inf: f64,
}

impl NormalizedProblem {
    /// `n² + 2n`.
    pub fn primal_dim(&self) -> usize {
        self.n * self.n + 2 * self.n
    }

    /// `2n + 1`.
    pub fn dual_dim(&self) -> usize {
        2 * self.n + 1
    }

    /// `A x` on the stacked layout `(vec X, p, q)`.
    pub fn apply_a(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.n;
        let mut out = Array1::zeros(2 * n + 1);
        for i in 0..n {
            let row = x.slice(ndarray::s![i * n..(i + 1) * n]);
            let mut acc = 0.0;
            for (j, &v) in row.iter().enumerate() {
                acc += v;
                out[n + j] += v;
            }
            out[i] += acc;
            out[2 * n] += acc;
        }
        for i in 0..n {
            out[i] += x[n * n + i];
            out[n + i] += x[n * n + n + i];
        }
        out
    }

    /// `Aᵀ y`: the matrix block is `y_i + y_{n+j} + y_{2n}`.
    pub fn apply_at(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.n;
        let mut out = Array1::zeros(self.primal_dim());
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = y[i] + y[n + j] + y[2 * n];
            }
            out[n * n + i] = y[i];
            out[n * n + n + i] = y[n + i];
        }
        out
    }
}

/// Divides the instance by `D`. Errors with `DegenerateMass` if `D ≤ 0`.
pub fn normalize(problem: &PotProblem) -> Result<NormalizedProblem> {
    let n = problem.n();
    let d_total = problem.feasible_l1();
    if !(d_total > 0.0) {
        return Err(PotError::DegenerateMass { d: d_total });
    }
    let mut d = Array1::zeros(n * n + 2 * n);
    for (o, &c) in d.iter_mut().zip(problem.cost().iter()) {
        *o = c;
    }
    let b_norm: Array1<f64> = problem
        .r()
        .iter()
        .chain(problem.c().iter())
        .copied()
        .chain(std::iter::once(problem.s()))
        .map(|v| v / d_total)
        .collect();
    Ok(NormalizedProblem { n, d, b_norm, d_total, d_inf: problem.cost_max() })
}

/// Accumulators and iterates of the extrapolation loop.
#[derive(Clone, Debug)]
pub struct SaddleState {
    pub sx: Array1<f64>,
    pub sy: Array1<f64>,
    pub zx: Array1<f64>,
    pub zy: Array1<f64>,
    pub wx: Array1<f64>,
    pub wy: Array1<f64>,
    pub wx_bar: Array1<f64>,
    pub wy_bar: Array1<f64>,
}

/// `g(x, y) = (d + 23‖d‖∞ Aᵀy, −23‖d‖∞ (A x − b))`.
pub fn saddle_gradient(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    np: &NormalizedProblem,
) -> (Array1<f64>, Array1<f64>) {
    let w = PENALTY * np.d_inf;
    let gx = &np.d + &(np.apply_at(y) * w);
    let gy = (np.apply_a(x) - &np.b_norm) * (-w);
    (gx, gy)
}

/// Normalized softmax of `−ζ` with max-subtraction. Entries are kept at
/// least the smallest positive double.
fn softmax_neg(zeta: &Array1<f64>) -> Array1<f64> {
    let lo = zeta.iter().fold(f64::INFINITY, |m, &z| m.min(z));
    let mut x = zeta.mapv(|z| (lo - z).exp());
    let total = x.sum();
    x.mapv_inplace(|v| (v / total).max(f64::MIN_POSITIVE));
    x
}

/// One closed-form `y` minimizer of `⟨u, y⟩ + 2‖d‖∞⟨A x, y²⟩` over the box.
fn y_step(u: ArrayView1<'_, f64>, ax: &Array1<f64>, d_inf: f64) -> Array1<f64> {
    u.iter()
        .zip(ax.iter())
        .map(|(&ui, &ai)| {
            let denom = 4.0 * d_inf * ai;
            if denom == 0.0 {
                if ui == 0.0 {
                    0.0
                } else {
                    -ui.signum()
                }
            } else {
                (-ui / denom).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Alternating minimization for `min ⟨v, x⟩ + ⟨u, y⟩ + r(x, y)`, started
/// from `x` uniform and `y = 0`.
pub fn am_prox(
    m: usize,
    v: ArrayView1<'_, f64>,
    u: ArrayView1<'_, f64>,
    np: &NormalizedProblem,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if m == 0 {
        return Err(PotError::InvalidParameter("prox iteration count must be at least 1".into()));
    }
    if !(np.d_inf > 0.0) {
        return Err(PotError::InvalidParameter("prox steps need a nonzero cost matrix".into()));
    }
    let dim = np.primal_dim();
    let mut x = Array1::from_elem(dim, 1.0 / dim as f64);
    let mut y = Array1::zeros(np.dual_dim());
    let scale = 1.0 / (20.0 * np.d_inf);
    for _ in 0..m {
        let y2 = y.mapv(|v: f64| v * v);
        let zeta = &v * scale + &(np.apply_at(y2.view()) * 0.1);
        x = softmax_neg(&zeta);
        let ax = np.apply_a(x.view());
        y = y_step(u, &ax, np.d_inf);
    }
    Ok((x, y))
}

/// `r(x, y) = 2‖d‖∞ (10⟨x, log x⟩ + xᵀAᵀ(y²))`, with `0 log 0 = 0`.
pub fn regularizer_value(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, np: &NormalizedProblem) -> f64 {
    let neg_entropy: f64 = x.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum();
    let ax = np.apply_a(x);
    let quad: f64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b * b).sum();
    2.0 * np.d_inf * (10.0 * neg_entropy + quad)
}

/// `max_y F(x̄, y) − min_x F(x, ȳ)` in closed form, where
/// `F(x, y) = dᵀx + 23‖d‖∞ yᵀ(A x − b)`.
pub fn duality_gap(x_bar: ArrayView1<'_, f64>, y_bar: ArrayView1<'_, f64>, np: &NormalizedProblem) -> f64 {
    let w = PENALTY * np.d_inf;
    let residual: f64 = (np.apply_a(x_bar) - &np.b_norm).mapv(f64::abs).sum();
    let upper = np.d.dot(&x_bar) + w * residual;
    let coeff = &np.d + &(np.apply_at(y_bar) * w);
    let lower = coeff.iter().fold(f64::INFINITY, |m, &v| m.min(v)) - w * y_bar.dot(&np.b_norm);
    upper - lower
}

/// `dᵀx + 23‖d‖∞‖A x − b‖₁`, the penalized objective on the simplex.
pub fn penalized_objective(x: ArrayView1<'_, f64>, np: &NormalizedProblem) -> f64 {
    let residual: f64 = (np.apply_a(x) - &np.b_norm).mapv(f64::abs).sum();
    np.d.dot(&x) + PENALTY * np.d_inf * residual
}

/// Constants resolved for one solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeSchedule {
    pub eps_norm: f64,
    pub theta: f64,
    /// Outer iterations `T = ⌈36Θ/ε⌉`.
    pub iterations: u64,
    /// Alternating-minimization steps per prox call.
    pub prox_steps: usize,
    /// Unclamped value of the prox-step formula.
    pub prox_steps_raw: f64,
}

impl DeSchedule {
    pub fn new(np: &NormalizedProblem, eps_norm: f64, prox_cap: usize) -> Self {
        let d_inf = np.d_inf;
        let theta = 60.0 * d_inf * (np.n as f64).ln() + 6.0 * d_inf;
        let iterations = (36.0 * theta / eps_norm).ceil().max(1.0) as u64;
        let inner = (840.0 * d_inf / (eps_norm * eps_norm) + 6.0 / eps_norm) * theta + 1336.0 * d_inf / 9.0;
        let prox_steps_raw = 24.0 * inner.ln();
        let prox_steps = prox_steps_raw.ceil().clamp(1.0, prox_cap as f64) as usize;
        DeSchedule { eps_norm, theta, iterations, prox_steps, prox_steps_raw }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DeOptions {
    /// Refuse to start when `T` exceeds this.
    pub iteration_cap: u64,
    pub prox_cap: usize,
    /// Overrides `T` (for experiments); the schedule value is still reported.
    pub iterations: Option<u64>,
    pub trace: TraceOptions,
    /// Record the normalized gap of the running average every iteration.
    pub gap_history: bool,
}

impl Default for DeOptions {
    fn default() -> Self {
        DeOptions {
            iteration_cap: DEFAULT_ITERATION_CAP,
            prox_cap: DEFAULT_PROX_CAP,
            iterations: None,
            trace: TraceOptions::off(),
            gap_history: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeOutput {
    pub state: SaddleState,
    pub schedule: DeSchedule,
    pub iterations: u64,
    /// Normalized duality gap of `(w̄x, w̄y)`.
    pub gap: f64,
    pub gap_history: Vec<f64>,
}

/// Runs the extrapolation loop on a normalized instance. `observe` gets
/// the running average `w̄x` at the iterations `wants` selects.
fn de_loop(
    np: &NormalizedProblem,
    eps_norm: f64,
    opts: &DeOptions,
    wants: &dyn Fn(usize) -> bool,
    observe: &mut dyn FnMut(usize, &Array1<f64>) -> Result<()>,
) -> Result<DeOutput> {
    let schedule = DeSchedule::new(np, eps_norm, opts.prox_cap);
    let total = opts.iterations.unwrap_or(schedule.iterations);
    if total > opts.iteration_cap {
        return Err(PotError::IterationBudgetExceeded { required: total, cap: opts.iteration_cap });
    }
    let dim = np.primal_dim();
    let grad_rx = 20.0 * np.d_inf * (1.0 - (dim as f64).ln());
    let mut st = SaddleState {
        sx: Array1::zeros(dim),
        sy: Array1::zeros(np.dual_dim()),
        zx: Array1::zeros(dim),
        zy: Array1::zeros(np.dual_dim()),
        wx: Array1::zeros(dim),
        wy: Array1::zeros(np.dual_dim()),
        wx_bar: Array1::zeros(dim),
        wy_bar: Array1::zeros(np.dual_dim()),
    };
    let mut sum_x = Array1::<f64>::zeros(dim);
    let mut sum_y = Array1::<f64>::zeros(np.dual_dim());
    let mut gap_history = Vec::new();
    let m = schedule.prox_steps;

    for t in 1..=total {
        let mut v = st.sx.mapv(|s| s - grad_rx);
        let mut u = st.sy.clone();
        let (zx, zy) = am_prox(m, v.view(), u.view(), np)?;
        let (gx, gy) = saddle_gradient(zx.view(), zy.view(), np);
        v.scaled_add(1.0 / KAPPA, &gx);
        u.scaled_add(1.0 / KAPPA, &gy);
        let (wx, wy) = am_prox(m, v.view(), u.view(), np)?;
        let (gx, gy) = saddle_gradient(wx.view(), wy.view(), np);
        st.sx.scaled_add(0.5 / KAPPA, &gx);
        st.sy.scaled_add(0.5 / KAPPA, &gy);
        sum_x += &wx;
        sum_y += &wy;
        st.zx = zx;
        st.zy = zy;
        st.wx = wx;
        st.wy = wy;

        let tracing = wants(t as usize);
        if opts.gap_history || tracing {
            let ax = &sum_x / t as f64;
            if opts.gap_history {
                let ay = &sum_y / t as f64;
                gap_history.push(duality_gap(ax.view(), ay.view(), np));
            }
            if tracing {
                observe(t as usize, &ax)?;
            }
        }
    }
    st.wx_bar = &sum_x / total as f64;
    st.wy_bar = &sum_y / total as f64;
    let gap = duality_gap(st.wx_bar.view(), st.wy_bar.view(), np);
    Ok(DeOutput { state: st, schedule, iterations: total, gap, gap_history })
}

/// Runs the loop on an already normalized instance.
pub fn de_run(np: &NormalizedProblem, eps_norm: f64, opts: &DeOptions) -> Result<DeOutput> {
    if !(eps_norm > 0.0) || !eps_norm.is_finite() {
        return Err(PotError::InvalidParameter(format!("eps must be positive, got {eps_norm}")));
    }
    de_loop(np, eps_norm, opts, &|_| false, &mut |_, _| Ok(()))
}

pub fn de_solve(problem: &PotProblem, eps: f64) -> Result<SolveReport> {
    de_solve_with(problem, eps, DeOptions::default())
}

/// Normalizes, runs the extrapolation loop at `ε/D`, scales the averaged
/// primal iterate back by `D` and rounds it.
pub fn de_solve_with(problem: &PotProblem, eps: f64, opts: DeOptions) -> Result<SolveReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(PotError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let np = normalize(problem)?;
    let eps_norm = eps / np.d_total;
    let n = problem.n();

    if np.d_inf == 0.0 {
        // Every feasible plan is optimal; round the uniform point.
        let uniform = Array1::from_elem(np.primal_dim(), np.d_total / np.primal_dim() as f64);
        let rounded = round_pot(&PrimalPoint::from_vec(n, uniform.view())?, problem)?;
        return Ok(SolveReport::new(rounded.rounded, problem, 0)
            .diagnostic("gap_normalized", 0.0)
            .diagnostic("gap", 0.0)
            .diagnostic("d_total", np.d_total));
    }

    let mut recorder = TraceRecorder::new(opts.trace);
    let mut records = Vec::new();
    let out = {
        let wants = |k| recorder.wants(k);
        de_loop(&np, eps_norm, &opts, &wants, &mut |k, avg| {
            let point = PrimalPoint::from_vec(n, (avg * np.d_total).view())?;
            let violation = constraint_violation(&point, problem);
            let rounded = round_pot(&point, problem)?;
            records.push((k, pot_objective(rounded.rounded.x.view(), problem.cost()), violation));
            Ok(())
        })?
    };
    for (k, obj, viol) in records {
        recorder.push(k, obj, viol);
    }

    let point = PrimalPoint::from_vec(n, (&out.state.wx_bar * np.d_total).view())?;
    let pre_violation = constraint_violation(&point, problem);
    let rounded = round_pot(&point, problem)?;
    let sched = out.schedule;
    Ok(SolveReport::new(rounded.rounded, problem, out.iterations as usize)
        .with_trace(recorder.finish())
        .diagnostic("gap_normalized", out.gap)
        .diagnostic("gap", out.gap * np.d_total)
        .diagnostic("eps_norm", eps_norm)
        .diagnostic("d_total", np.d_total)
        .diagnostic("theta", sched.theta)
        .diagnostic("kappa", KAPPA)
        .diagnostic("schedule_iterations", sched.iterations as f64)
        .diagnostic("prox_steps", sched.prox_steps as f64)
        .diagnostic("prox_steps_raw", sched.prox_steps_raw)
        .diagnostic("pre_rounding_violation", pre_violation)
        .diagnostic("rounding_moved_l1", rounded.moved_l1))
}
