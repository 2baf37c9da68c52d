//! Adaptive primal-dual accelerated gradient descent on the entropic dual.
//!
//! The entropic problem is `min ⟨C, X⟩ + γ⟨x, log x⟩` subject to
//! `A x = b`, `x ≥ 0`. Its dual `φ(λ) = ⟨λ, b⟩ + γ‖x(λ)‖₁` is smooth, and
//! the minimizing primal point `x(λ)` has a closed form.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{PotError, Result};
use crate::problem::{apply_a, pot_objective, ConstraintImage, PotProblem, PrimalPoint, SolveReport, TraceOptions, TraceRecorder};
use crate::rounding::round_pot;
use crate::sinkhorn::entropic_gamma;

/// Exponents above this are treated as overflow.
const MAX_EXPONENT: f64 = 700.0;
/// Line search gives up once the smoothness estimate passes this.
const MAX_SMOOTHNESS: f64 = 1e30;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Dual variable `λ = (y, z, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint {
    pub y: Array1<f64>,
    pub z: Array1<f64>,
    pub t: f64,
}

impl DualPoint {
    pub fn zeros(n: usize) -> Self {
        DualPoint { y: Array1::zeros(n), z: Array1::zeros(n), t: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Stacked `(y, z, t)`.
    pub fn to_vec(&self) -> Array1<f64> {
        self.y.iter().chain(self.z.iter()).copied().chain(std::iter::once(self.t)).collect()
    }

    pub fn from_vec(v: ArrayView1<'_, f64>) -> Result<Self> {
        if v.len() % 2 != 1 {
            return Err(PotError::DimensionMismatch { what: "dual vector", got: v.len(), expected: v.len() + 1 });
        }
        let n = v.len() / 2;
        Ok(DualPoint {
            y: v.slice(ndarray::s![..n]).to_owned(),
            z: v.slice(ndarray::s![n..2 * n]).to_owned(),
            t: v[2 * n],
        })
    }

    /// Reparameterization `u = −y/γ − 1`, `v = −z/γ − 1`, `w = −t/γ + 1`,
    /// under which `X = exp(−C/γ + u 1ᵀ + 1 vᵀ + w)` and `p = exp(u)`.
    pub fn transformed(&self, gamma: f64) -> (Array1<f64>, Array1<f64>, f64) {
        (self.y.mapv(|y| -y / gamma - 1.0), self.z.mapv(|z| -z / gamma - 1.0), -self.t / gamma + 1.0)
    }
}

/// Parameters of one approximation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropicConfig {
    pub gamma: f64,
    pub eps: f64,
    pub eps_tilde: f64,
}

impl EntropicConfig {
    /// `γ = ε/(4 log n)` and `ε̃ = ε/(8‖C‖max)`, the latter capped so the
    /// smoothed marginals still carry mass `s`.
    pub fn for_problem(problem: &PotProblem, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(PotError::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let c_max = problem.cost_max();
        let mut eps_tilde = if c_max > 0.0 { eps / (8.0 * c_max) } else { eps.min(1.0) };
        for mass in [problem.r_mass(), problem.c_mass()] {
            if mass > 1.0 {
                eps_tilde = eps_tilde.min(8.0 * (mass - problem.s()) / (mass - 1.0));
            }
        }
        Ok(EntropicConfig { gamma: entropic_gamma(eps, problem.n()), eps, eps_tilde })
    }

    /// Exit tolerances `(eps_f, eps_eq) = (ε/2, ε̃/2)`. When the caps force
    /// `ε̃ = 0`, `eps_eq` falls back to `ε/(16‖C‖max)`.
    pub fn tolerances(&self, problem: &PotProblem) -> (f64, f64) {
        let eps_eq = if self.eps_tilde > 0.0 {
            self.eps_tilde / 2.0
        } else {
            self.eps / (16.0 * problem.cost_max().max(f64::MIN_POSITIVE))
        };
        (self.eps / 2.0, eps_eq)
    }
}

/// State of the accelerated loop after an accepted step.
#[derive(Clone, Debug)]
pub struct ApdagdState {
    pub lambda_: DualPoint,
    pub eta: DualPoint,
    pub zeta: DualPoint,
    pub alpha: f64,
    pub beta: f64,
    pub m: f64,
    pub x_hat: PrimalPoint,
}

/// Per-iteration record kept by [`apdagd_loop`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApdagdStep {
    pub iter: usize,
    pub beta: f64,
    pub tau: f64,
    pub m: f64,
    /// `f(x̂) + φ(η)`.
    pub gap: f64,
    pub residual_l1: f64,
    pub residual_l2: f64,
}

#[derive(Clone, Debug)]
pub struct ApdagdOutput {
    pub x_hat: PrimalPoint,
    pub eta: DualPoint,
    pub state: ApdagdState,
    pub steps: Vec<ApdagdStep>,
    pub converged: bool,
}

/// `x(λ)` in log form; `None` on overflow.
fn primal_checked(lam: &DualPoint, problem: &PotProblem, gamma: f64) -> Option<PrimalPoint> {
    let cost = problem.cost();
    let n = problem.n();
    let mut overflow = false;
    let mut expo = |e: f64| {
        if !(e <= MAX_EXPONENT) {
            overflow = true;
        }
        e.exp()
    };
    let mut x = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            x[[i, j]] = expo(-(cost[[i, j]] + lam.y[i] + lam.z[j] + lam.t) / gamma - 1.0);
        }
    }
    let p = lam.y.mapv(|y| expo(-y / gamma - 1.0));
    let q = lam.z.mapv(|z| expo(-z / gamma - 1.0));
    if overflow {
        None
    } else {
        Some(PrimalPoint::new(x, p, q))
    }
}

/// Closed-form maximizer of the Lagrangian:
/// `X_ij = exp(−(C_ij + y_i + z_j + t)/γ − 1)`, `p_i = exp(−y_i/γ − 1)`,
/// `q_j = exp(−z_j/γ − 1)`.
pub fn primal_from_dual(lambda_: &DualPoint, problem: &PotProblem, gamma: f64) -> Result<PrimalPoint> {
    check_gamma(gamma)?;
    if lambda_.n() != problem.n() {
        return Err(PotError::DimensionMismatch { what: "dual y", got: lambda_.n(), expected: problem.n() });
    }
    primal_checked(lambda_, problem, gamma).ok_or(PotError::NonFinite { what: "primal map exponent" })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(PotError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

struct DualEval {
    value: f64,
    grad: Array1<f64>,
    primal: PrimalPoint,
}

fn evaluate(lam: &DualPoint, problem: &PotProblem, b: &Array1<f64>, gamma: f64) -> Option<DualEval> {
    let primal = primal_checked(lam, problem, gamma)?;
    let value = lam.to_vec().dot(b) + gamma * primal.l1_norm();
    let grad = b - &apply_a(&primal).to_vec();
    if !value.is_finite() {
        return None;
    }
    Some(DualEval { value, grad, primal })
}

/// `φ(λ) = ⟨λ, b⟩ + γ‖x(λ)‖₁` and `∇φ(λ) = b − A x(λ)`.
pub fn dual_value_grad(lambda_: &DualPoint, problem: &PotProblem, gamma: f64) -> Result<(f64, DualPoint)> {
    check_gamma(gamma)?;
    if lambda_.n() != problem.n() {
        return Err(PotError::DimensionMismatch { what: "dual y", got: lambda_.n(), expected: problem.n() });
    }
    let b = ConstraintImage::rhs(problem).to_vec();
    let ev = evaluate(lambda_, problem, &b, gamma).ok_or(PotError::NonFinite { what: "dual objective" })?;
    Ok((ev.value, DualPoint::from_vec(ev.grad.view())?))
}

/// Entropic primal objective `⟨C, X⟩ + γ⟨x, log x⟩` with `0 log 0 = 0`.
pub fn entropic_objective(point: &PrimalPoint, problem: &PotProblem, gamma: f64) -> f64 {
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let entropy: f64 = point.x.iter().chain(point.p.iter()).chain(point.q.iter()).map(|&v| xlogx(v)).sum();
    pot_objective(point.x.view(), problem.cost()) + gamma * entropy
}

fn combine(a: f64, u: &DualPoint, b: f64, v: &DualPoint) -> DualPoint {
    DualPoint { y: &u.y * a + &v.y * b, z: &u.z * a + &v.z * b, t: a * u.t + b * v.t }
}

fn axpy_primal(a: f64, u: &PrimalPoint, b: f64, v: &PrimalPoint) -> PrimalPoint {
    PrimalPoint::new(&u.x * a + &v.x * b, &u.p * a + &v.p * b, &u.q * a + &v.q * b)
}

/// The accelerated loop with adaptive smoothness estimate. Stops when
/// `f(x̂) + φ(η) ≤ eps_f` and `‖A x̂ − b‖₁ ≤ eps_eq`.
pub fn apdagd_loop(
    problem: &PotProblem,
    gamma: f64,
    eps_f: f64,
    eps_eq: f64,
    l0: f64,
    max_iter: usize,
) -> Result<ApdagdOutput> {
    apdagd_loop_observed(problem, gamma, eps_f, eps_eq, l0, max_iter, &|_| false, &mut |_, _| Ok(()))
}

#[allow(clippy::too_many_arguments)]
fn apdagd_loop_observed(
    problem: &PotProblem,
    gamma: f64,
    eps_f: f64,
    eps_eq: f64,
    l0: f64,
    max_iter: usize,
    wants: &dyn Fn(usize) -> bool,
    observe: &mut dyn FnMut(usize, &PrimalPoint) -> Result<()>,
) -> Result<ApdagdOutput> {
    check_gamma(gamma)?;
    if !(l0 > 0.0) || !(eps_f > 0.0) || !(eps_eq > 0.0) {
        return Err(PotError::InvalidParameter(format!(
            "need L0, eps_f, eps_eq > 0, got {l0}, {eps_f}, {eps_eq}"
        )));
    }
    let n = problem.n();
    let b = ConstraintImage::rhs(problem).to_vec();

    let mut state = ApdagdState {
        lambda_: DualPoint::zeros(n),
        eta: DualPoint::zeros(n),
        zeta: DualPoint::zeros(n),
        alpha: 0.0,
        beta: 0.0,
        m: l0,
        x_hat: PrimalPoint::zeros(n),
    };
    let mut smoothness = l0;
    let mut steps = Vec::new();

    for k in 1..=max_iter {
        let mut m = smoothness;
        let (alpha, tau, lam, eval_lam, eta_new, phi_eta_new, zeta_new) = loop {
            if m > MAX_SMOOTHNESS {
                return Err(PotError::LineSearchStall { m });
            }
            let alpha = (1.0 + (1.0 + 4.0 * m * state.beta).sqrt()) / (2.0 * m);
            let tau = alpha / (state.beta + alpha);
            let lam = combine(tau, &state.zeta, 1.0 - tau, &state.eta);
            let Some(eval_lam) = evaluate(&lam, problem, &b, gamma) else {
                m *= 2.0;
                continue;
            };
            let grad = DualPoint::from_vec(eval_lam.grad.view())?;
            let zeta_new = combine(1.0, &state.zeta, -alpha, &grad);
            let eta_new = combine(tau, &zeta_new, 1.0 - tau, &state.eta);
            let Some(eval_eta) = evaluate(&eta_new, problem, &b, gamma) else {
                m *= 2.0;
                continue;
            };
            let diff = eta_new.to_vec() - lam.to_vec();
            let bound = eval_lam.value + eval_lam.grad.dot(&diff) + 0.5 * m * diff.dot(&diff);
            let slack = 1e-14 * eval_lam.value.abs().max(1.0);
            if eval_eta.value <= bound + slack {
                break (alpha, tau, lam, eval_lam, eta_new, eval_eta.value, zeta_new);
            }
            m *= 2.0;
        };

        state.x_hat = if k == 1 {
            eval_lam.primal
        } else {
            axpy_primal(tau, &eval_lam.primal, 1.0 - tau, &state.x_hat)
        };
        state.lambda_ = lam;
        state.eta = eta_new;
        state.zeta = zeta_new;
        state.alpha = alpha;
        state.beta += alpha;
        state.m = m;
        smoothness = m / 2.0;

        let residual = apply_a(&state.x_hat).to_vec() - &b;
        let residual_l1 = residual.mapv(f64::abs).sum();
        let residual_l2 = residual.dot(&residual).sqrt();
        let gap = entropic_objective(&state.x_hat, problem, gamma) + phi_eta_new;
        steps.push(ApdagdStep { iter: k, beta: state.beta, tau, m, gap, residual_l1, residual_l2 });

        let done = gap <= eps_f && residual_l1 <= eps_eq;
        if wants(k) || (done && wants(usize::MAX)) {
            observe(k, &state.x_hat)?;
        }
        if done {
            return Ok(ApdagdOutput { x_hat: state.x_hat.clone(), eta: state.eta.clone(), state, steps, converged: true });
        }
    }
    Ok(ApdagdOutput { x_hat: state.x_hat.clone(), eta: state.eta.clone(), state, steps, converged: false })
}

/// Options for [`approx_pot_apdagd_with`].
#[derive(Clone, Copy, Debug)]
pub struct ApdagdOptions {
    pub max_iter: usize,
    pub l0: f64,
    pub trace: TraceOptions,
}

impl Default for ApdagdOptions {
    fn default() -> Self {
        ApdagdOptions { max_iter: DEFAULT_MAX_ITER, l0: 1.0, trace: TraceOptions::off() }
    }
}

/// `(1 − ε̃/8) m + ε̃/(8n)`.
pub fn smooth_marginal(m: ArrayView1<'_, f64>, eps_tilde: f64) -> Array1<f64> {
    let n = m.len() as f64;
    m.mapv(|v| (1.0 - eps_tilde / 8.0) * v + eps_tilde / (8.0 * n))
}

/// Approximates POT: smooth the marginals, run the accelerated loop on the
/// entropic problem, then round against the original constraints.
pub fn approx_pot_apdagd(problem: &PotProblem, eps: f64) -> Result<SolveReport> {
    approx_pot_apdagd_with(problem, eps, ApdagdOptions::default())
}

pub fn approx_pot_apdagd_with(problem: &PotProblem, eps: f64, opts: ApdagdOptions) -> Result<SolveReport> {
    let cfg = EntropicConfig::for_problem(problem, eps)?;
    let smoothed = problem.with_marginals(
        smooth_marginal(problem.r(), cfg.eps_tilde),
        smooth_marginal(problem.c(), cfg.eps_tilde),
    )?;
    let (eps_f, eps_eq) = cfg.tolerances(problem);

    let mut recorder = TraceRecorder::new(opts.trace);
    let mut records = Vec::new();
    let out = {
        let wants = |k| recorder.wants(k);
        apdagd_loop_observed(&smoothed, cfg.gamma, eps_f, eps_eq, opts.l0, opts.max_iter, &wants, &mut |k, x_hat| {
            let violation = crate::problem::constraint_violation(x_hat, problem);
            let rounded = round_pot(x_hat, problem)?;
            records.push((k, pot_objective(rounded.rounded.x.view(), problem.cost()), violation));
            Ok(())
        })?
    };
    for (k, obj, viol) in records {
        recorder.push(k, obj, viol);
    }

    let last = out.steps.last().copied();
    let rounded = round_pot(&out.x_hat, problem)?;
    let mut report = SolveReport::new(rounded.rounded, problem, out.steps.len())
        .with_trace(recorder.finish())
        .diagnostic("gamma", cfg.gamma)
        .diagnostic("eps_tilde", cfg.eps_tilde)
        .diagnostic("eps_f", eps_f)
        .diagnostic("eps_eq", eps_eq)
        .diagnostic("l0", opts.l0)
        .diagnostic("rounding_moved_l1", rounded.moved_l1);
    if let Some(step) = last {
        report = report
            .diagnostic("final_smoothness", step.m)
            .diagnostic("dual_gap", step.gap)
            .diagnostic("residual_l1", step.residual_l1)
            .diagnostic("residual_l2", step.residual_l2);
    }
    if out.converged {
        Ok(report)
    } else {
        report.converged = false;
        let residual = last.map_or(f64::INFINITY, |s| s.residual_l1);
        Err(PotError::NotConverged { iterations: report.iterations, residual, report: Some(Box::new(report)) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> PotProblem {
        let r: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let c: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s = rng.random_range(0.1..0.9) * r.sum().min(c.sum());
        let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
        PotProblem::new(r, c, s, cost).unwrap()
    }

    fn random_dual(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DualPoint {
        DualPoint {
            y: (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
            z: (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
            t: rng.random_range(-scale..scale),
        }
    }

    #[test]
    fn zero_dual_unit_problem() {
        let p = PotProblem::new(array![1.0], array![1.0], 1.0, array![[0.0]]).unwrap();
        let x = primal_from_dual(&DualPoint::zeros(1), &p, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(x.x[[0, 0]], e);
        assert_eq!(x.p[0], e);
        assert_eq!(x.q[0], e);
        let (phi, _) = dual_value_grad(&DualPoint::zeros(1), &p, 1.0).unwrap();
        assert!((phi - 3.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn homogeneity_with_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PotProblem::new(array![0.5, 0.5], array![0.5, 0.5], 0.5, Array2::zeros((2, 2))).unwrap();
        let lam = random_dual(&mut rng, 2, 1.0);
        let doubled = DualPoint { y: &lam.y * 2.0, z: &lam.z * 2.0, t: lam.t * 2.0 };
        let a = primal_from_dual(&lam, &p, 0.3).unwrap();
        let b = primal_from_dual(&doubled, &p, 0.6).unwrap();
        assert!(a.l1_distance(&b) < 1e-14);
    }

    #[test]
    fn primal_map_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_problem(&mut rng, 3);
        let lam = random_dual(&mut rng, 3, 0.5);
        let gamma = 0.2;
        let x = primal_from_dual(&lam, &p, gamma).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = (-(p.cost()[[i, j]] + lam.y[i] + lam.z[j] + lam.t) / gamma - 1.0).exp();
                assert!((x.x[[i, j]] - e).abs() <= 1e-14 * e.max(1.0));
            }
            assert!((x.p[i] - (-lam.y[i] / gamma - 1.0).exp()).abs() < 1e-14);
            assert!((x.q[i] - (-lam.z[i] / gamma - 1.0).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let p = PotProblem::new(array![1.0], array![1.0], 0.5, array![[0.0]]).unwrap();
        let lam = DualPoint { y: array![-1000.0], z: array![0.0], t: 0.0 };
        assert!(matches!(primal_from_dual(&lam, &p, 1.0), Err(PotError::NonFinite { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..=6);
            let p = random_problem(&mut rng, n);
            let gamma = rng.random_range(0.1..1.0);
            let lam = random_dual(&mut rng, n, 0.5);
            let (_, grad) = dual_value_grad(&lam, &p, gamma).unwrap();
            let g = grad.to_vec();
            let base = lam.to_vec();
            for k in 0..base.len() {
                let h = 1e-5 * (1.0 + base[k].abs());
                let mut plus = base.clone();
                plus[k] += h;
                let mut minus = base.clone();
                minus[k] -= h;
                let fp = dual_value_grad(&DualPoint::from_vec(plus.view()).unwrap(), &p, gamma).unwrap().0;
                let fm = dual_value_grad(&DualPoint::from_vec(minus.view()).unwrap(), &p, gamma).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn dual_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(1..=5);
            let p = random_problem(&mut rng, n);
            let a = random_dual(&mut rng, n, 1.0);
            let b = random_dual(&mut rng, n, 1.0);
            let mid = combine(0.5, &a, 0.5, &b);
            let f = |l: &DualPoint| dual_value_grad(l, &p, 0.5).unwrap().0;
            assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-12);
        }
    }

    #[test]
    fn primal_is_strongly_convex_in_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.random_range(1..=5);
            let p = random_problem(&mut rng, n);
            let gamma = rng.random_range(0.01..1.0);
            let budget = p.feasible_l1();
            let draw = |rng: &mut ChaCha8Rng| {
                let v: Array1<f64> = (0..n * n + 2 * n).map(|_| rng.random_range(1e-3..1.0)).collect();
                let total = v.sum();
                let scale = rng.random_range(0.1..1.0) * budget / total;
                PrimalPoint::from_vec(n, (v * scale).view()).unwrap()
            };
            let x = draw(&mut rng).to_vec();
            let x2 = draw(&mut rng).to_vec();
            // ∇f(x) − ∇f(x') = γ(log x − log x'); the cost term cancels.
            let lhs: f64 = x.iter().zip(x2.iter()).map(|(a, b)| gamma * (a.ln() - b.ln()) * (a - b)).sum();
            let dist: f64 = x.iter().zip(x2.iter()).map(|(a, b)| (a - b).abs()).sum();
            assert!(lhs >= gamma / budget * dist * dist - 1e-10);
        }
    }

    #[test]
    fn loop_terminates_on_small_instance() {
        let p = PotProblem::new(array![0.6, 0.5], array![0.4, 0.7], 0.8, array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let gamma = 0.05;
        let out = apdagd_loop(&p, gamma, 1e-4, 1e-4, 1.0, 200_000).unwrap();
        assert!(out.converged);
        let last = out.steps.last().unwrap();
        assert!(last.gap <= 1e-4 && last.residual_l1 <= 1e-4);
        let mut prev_beta = 0.0;
        for s in &out.steps {
            assert!(s.beta > prev_beta);
            assert!(s.tau > 0.0 && s.tau <= 1.0);
            prev_beta = s.beta;
        }
    }

    /// `φ(η) ≥ −f(x) − ⟨η, A x − b⟩` for every `x > 0`, so the surrogate is
    /// bounded below by `⟨η, b − A x̂⟩`. It is not nonnegative on its own
    /// while `x̂` is still infeasible.
    #[test]
    fn surrogate_respects_lagrangian_bound() {
        let p = PotProblem::new(array![0.6, 0.5], array![0.4, 0.7], 0.8, array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let b = ConstraintImage::rhs(&p).to_vec();
        let mut saw_negative = false;
        for k in 1..=80 {
            let out = apdagd_loop(&p, 0.05, 1e-12, 1e-12, 1.0, k).unwrap();
            let step = out.steps.last().unwrap();
            let floor = out.eta.to_vec().dot(&(&b - &apply_a(&out.x_hat).to_vec()));
            assert!(step.gap >= floor - 1e-12, "iter {k}: {} < {floor}", step.gap);
            saw_negative |= step.gap < 0.0;
        }
        assert!(saw_negative);
    }

    #[test]
    fn converged_dual_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let n = rng.random_range(2..=4);
            let p = random_problem(&mut rng, n);
            let cfg = EntropicConfig::for_problem(&p, 0.5).unwrap();
            let sm = p
                .with_marginals(smooth_marginal(p.r(), cfg.eps_tilde), smooth_marginal(p.c(), cfg.eps_tilde))
                .unwrap();
            let out = apdagd_loop(&sm, cfg.gamma, 1e-9, 1e-9, 1.0, 500_000).unwrap();
            assert!(out.converged);
            let (u, v, w) = out.eta.transformed(cfg.gamma);
            let norm = u.iter().chain(v.iter()).chain(std::iter::once(&w)).fold(0.0f64, |m, x| m.max(x.abs()));
            let big = sm.r_mass().max(sm.c_mass());
            let small = sm.r().iter().chain(sm.c().iter()).fold(f64::INFINITY, |m, &x| m.min(x));
            let bound = sm.cost_max() * big / (cfg.gamma * (big - sm.s())) - small.ln();
            assert!(norm <= bound, "{norm} > {bound}");
        }
    }

    #[test]
    fn smoothed_marginals_keep_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let r: Array1<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let c: Array1<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let s = rng.random_range(0.0..=1.0) * r.sum().min(c.sum());
            let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1e-2));
            let p = PotProblem::new(r, c, s, cost).unwrap();
            let cfg = EntropicConfig::for_problem(&p, 1.0).unwrap();
            assert!(smooth_marginal(p.r(), cfg.eps_tilde).sum() >= s - 1e-12);
            assert!(smooth_marginal(p.c(), cfg.eps_tilde).sum() >= s - 1e-12);
        }
    }

    #[test]
    fn approximation_is_feasible_and_close() {
        let p = PotProblem::new(
            array![0.4, 0.3, 0.5],
            array![0.2, 0.6, 0.3],
            0.6,
            array![[0.0, 0.4, 1.0], [0.4, 0.0, 0.4], [1.0, 0.4, 0.0]],
        )
        .unwrap();
        let report = approx_pot_apdagd(&p, 1e-2).unwrap();
        assert!(report.is_feasible(&p));
        let exact = crate::reference::solve_exact(&p).unwrap();
        assert!(report.objective - exact.value <= 1e-2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dual_vector_roundtrip(v in proptest::collection::vec(-5.0f64..5.0, 1..=4usize).prop_map(|v| {
            let n = v.len();
            let mut full = v.clone();
            full.extend(v.iter().map(|x| x * 0.5));
            full.push(n as f64);
            full
        })) {
            let a = Array1::from(v);
            let d = DualPoint::from_vec(a.view()).unwrap();
            prop_assert_eq!(d.to_vec(), a);
        }
    }
}
