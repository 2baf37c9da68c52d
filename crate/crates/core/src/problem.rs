//! Problem model shared by every solver.
//!
//! A partial transport instance is `(r, c, s, C)`. Plans are written with
//! explicit slacks `x = (vec(X), p, q)` so that the feasible set becomes the
//! linear system `A x = b` with `b = (r, c, s)`:
//!
//! ```text
//! A x = (X 1 + p, Xᵀ 1 + q, 1ᵀ X 1)
//! ```
//!
//! `A` is never materialized. [`apply_a`] and [`apply_a_transpose`] evaluate
//! it through row and column sums in `O(n²)`. `vec(X)` is row-major, which is
//! also the memory order of the `ndarray` matrices used here.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{PotError, Result};

/// A validated partial optimal transport instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PotProblem {
    r: Array1<f64>,
    c: Array1<f64>,
    s: f64,
    cost: Array2<f64>,
}

impl PotProblem {
    pub fn new(r: Array1<f64>, c: Array1<f64>, s: f64, cost: Array2<f64>) -> Result<Self> {
        validate_problem(r, c, s, cost)
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn r(&self) -> ArrayView1<'_, f64> {
        self.r.view()
    }

    pub fn c(&self) -> ArrayView1<'_, f64> {
        self.c.view()
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn cost(&self) -> ArrayView2<'_, f64> {
        self.cost.view()
    }

    pub fn r_mass(&self) -> f64 {
        self.r.iter().sum()
    }

    pub fn c_mass(&self) -> f64 {
        self.c.iter().sum()
    }

    /// `‖C‖max`, the largest cost entry.
    pub fn cost_max(&self) -> f64 {
        self.cost.iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// `‖b‖₁ = ‖r‖₁ + ‖c‖₁ + s`.
    pub fn b_l1(&self) -> f64 {
        self.r_mass() + self.c_mass() + self.s
    }

    /// `‖x‖₁` of any feasible point: `‖r‖₁ + ‖c‖₁ − s`.
    pub fn feasible_l1(&self) -> f64 {
        self.r_mass() + self.c_mass() - self.s
    }

    /// Absolute tolerance under which a point counts as exactly feasible.
    pub fn feasibility_tol(&self) -> f64 {
        1e-9 * self.b_l1().max(1.0)
    }

    /// Same instance with different marginals; used by solvers that work on
    /// perturbed marginals. The mass bound is re-checked.
    pub fn with_marginals(&self, r: Array1<f64>, c: Array1<f64>) -> Result<Self> {
        validate_problem(r, c, self.s, self.cost.clone())
    }
}

/// Checks raw inputs and builds a [`PotProblem`].
pub fn validate_problem(
    r: Array1<f64>,
    c: Array1<f64>,
    s: f64,
    cost: Array2<f64>,
) -> Result<PotProblem> {
    let n = r.len();
    if n == 0 {
        return Err(PotError::InvalidParameter("problem size must be at least 1".into()));
    }
    if c.len() != n {
        return Err(PotError::DimensionMismatch { what: "c", got: c.len(), expected: n });
    }
    if cost.nrows() != n {
        return Err(PotError::DimensionMismatch { what: "cost rows", got: cost.nrows(), expected: n });
    }
    if cost.ncols() != n {
        return Err(PotError::DimensionMismatch { what: "cost columns", got: cost.ncols(), expected: n });
    }
    check_entries("r", r.iter())?;
    check_entries("c", c.iter())?;
    check_entries("cost", cost.iter())?;
    if !s.is_finite() {
        return Err(PotError::NonFinite { what: "s" });
    }
    let limit = r.sum().min(c.sum());
    if s < 0.0 || s > limit {
        return Err(PotError::MassOutOfRange { s, limit });
    }
    Ok(PotProblem { r, c, s, cost })
}

fn check_entries<'a>(what: &'static str, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for (index, &value) in values.enumerate() {
        if !value.is_finite() {
            return Err(PotError::NonFinite { what });
        }
        if value < 0.0 {
            return Err(PotError::NegativeEntry { what, index, value });
        }
    }
    Ok(())
}

/// A point `x = (vec(X), p, q)`. Only nonnegativity is expected; feasibility
/// is measured by [`constraint_violation`].
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalPoint {
    pub x: Array2<f64>,
    pub p: Array1<f64>,
    pub q: Array1<f64>,
}

impl PrimalPoint {
    pub fn new(x: Array2<f64>, p: Array1<f64>, q: Array1<f64>) -> Self {
        PrimalPoint { x, p, q }
    }

    pub fn zeros(n: usize) -> Self {
        PrimalPoint {
            x: Array2::zeros((n, n)),
            p: Array1::zeros(n),
            q: Array1::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    /// Length of the stacked vector, `n² + 2n`.
    pub fn dim(&self) -> usize {
        let n = self.n();
        n * n + 2 * n
    }

    /// `‖x‖₁` over all three blocks.
    pub fn l1_norm(&self) -> f64 {
        self.x.iter().map(|v| v.abs()).sum::<f64>()
            + self.p.iter().map(|v| v.abs()).sum::<f64>()
            + self.q.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `‖self − other‖₁` over all three blocks.
    pub fn l1_distance(&self, other: &PrimalPoint) -> f64 {
        let dx: f64 = self.x.iter().zip(other.x.iter()).map(|(a, b)| (a - b).abs()).sum();
        let dp: f64 = self.p.iter().zip(other.p.iter()).map(|(a, b)| (a - b).abs()).sum();
        let dq: f64 = self.q.iter().zip(other.q.iter()).map(|(a, b)| (a - b).abs()).sum();
        dx + dp + dq
    }

    /// Stacked row-major vector `(vec(X), p, q)`.
    pub fn to_vec(&self) -> Array1<f64> {
        self.x.iter().chain(self.p.iter()).chain(self.q.iter()).copied().collect()
    }

    /// Inverse of [`PrimalPoint::to_vec`].
    pub fn from_vec(n: usize, v: ArrayView1<'_, f64>) -> Result<Self> {
        if v.len() != n * n + 2 * n {
            return Err(PotError::DimensionMismatch { what: "stacked point", got: v.len(), expected: n * n + 2 * n });
        }
        let flat: Vec<f64> = v.iter().copied().collect();
        let x = Array2::from_shape_vec((n, n), flat[..n * n].to_vec())
            .map_err(|e| PotError::Internal(e.to_string()))?;
        let p = Array1::from(flat[n * n..n * n + n].to_vec());
        let q = Array1::from(flat[n * n + n..].to_vec());
        Ok(PrimalPoint { x, p, q })
    }

    pub fn is_nonnegative(&self) -> bool {
        self.x.iter().chain(self.p.iter()).chain(self.q.iter()).all(|&v| v >= 0.0)
    }

    /// Multiplies every block by `factor`.
    pub fn scaled(&self, factor: f64) -> PrimalPoint {
        PrimalPoint {
            x: &self.x * factor,
            p: &self.p * factor,
            q: &self.q * factor,
        }
    }
}

/// Image `A x` of a primal point.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintImage {
    pub row: Array1<f64>,
    pub col: Array1<f64>,
    pub mass: f64,
}

impl ConstraintImage {
    /// The right-hand side `b = (r, c, s)` of a problem.
    pub fn rhs(problem: &PotProblem) -> Self {
        ConstraintImage {
            row: problem.r.clone(),
            col: problem.c.clone(),
            mass: problem.s,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.row.iter().map(|v| v.abs()).sum::<f64>()
            + self.col.iter().map(|v| v.abs()).sum::<f64>()
            + self.mass.abs()
    }

    /// Stacked vector `(row, col, mass)` of length `2n + 1`.
    pub fn to_vec(&self) -> Array1<f64> {
        self.row
            .iter()
            .chain(self.col.iter())
            .copied()
            .chain(std::iter::once(self.mass))
            .collect()
    }

    /// Componentwise `self − other`.
    pub fn sub(&self, other: &ConstraintImage) -> ConstraintImage {
        ConstraintImage {
            row: &self.row - &other.row,
            col: &self.col - &other.col,
            mass: self.mass - other.mass,
        }
    }
}

/// Row sums of a square matrix, accumulated left to right.
pub(crate) fn row_sums(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.rows().into_iter().map(|row| row.iter().sum::<f64>()).collect()
}

/// Column sums of a matrix, accumulated top to bottom.
pub(crate) fn col_sums(x: ArrayView2<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.ncols());
    for row in x.rows() {
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    out
}

/// Computes `A x` through row and column sums.
pub fn apply_a(point: &PrimalPoint) -> ConstraintImage {
    let rs = row_sums(point.x.view());
    let cs = col_sums(point.x.view());
    let mass = rs.iter().sum();
    ConstraintImage {
        row: rs + &point.p,
        col: cs + &point.q,
        mass,
    }
}

/// Computes `Aᵀ λ` for `λ = (y, z, t)`: the matrix block is
/// `y_i + z_j + t`, the slack blocks are `y` and `z`.
pub fn apply_a_transpose(y: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>, t: f64) -> PrimalPoint {
    let n = y.len();
    let x = Array2::from_shape_fn((n, n), |(i, j)| y[i] + z[j] + t);
    PrimalPoint {
        x,
        p: y.to_owned(),
        q: z.to_owned(),
    }
}

/// `‖A x − b‖₁ = ‖X1 + p − r‖₁ + ‖Xᵀ1 + q − c‖₁ + |1ᵀX1 − s|`.
pub fn constraint_violation(point: &PrimalPoint, problem: &PotProblem) -> f64 {
    apply_a(point).sub(&ConstraintImage::rhs(problem)).l1_norm()
}

/// `⟨C, X⟩`.
pub fn pot_objective(x: ArrayView2<'_, f64>, cost: ArrayView2<'_, f64>) -> f64 {
    x.iter().zip(cost.iter()).map(|(a, b)| a * b).sum()
}

/// One row of a convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub violation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_gap: Option<f64>,
    #[serde(rename = "elapsed_s")]
    pub elapsed: f64,
}

/// How often solvers emit [`IterationRecord`]s and which optimum to compare
/// against.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TraceOptions {
    /// Record every `every` iterations; 0 disables tracing.
    pub every: usize,
    /// Optimal value used to fill `primal_gap`.
    pub fstar: Option<f64>,
}

impl TraceOptions {
    pub fn off() -> Self {
        TraceOptions { every: 0, fstar: None }
    }

    pub fn every(every: usize) -> Self {
        TraceOptions { every, fstar: None }
    }

    pub fn with_fstar(mut self, fstar: f64) -> Self {
        self.fstar = Some(fstar);
        self
    }

    pub(crate) fn wants(&self, iter: usize) -> bool {
        self.every > 0 && iter % self.every == 0
    }
}

/// Accumulates trace rows with wall-clock offsets from solver start.
#[derive(Debug)]
pub(crate) struct TraceRecorder {
    opts: TraceOptions,
    start: Instant,
    records: Vec<IterationRecord>,
}

impl TraceRecorder {
    pub(crate) fn new(opts: TraceOptions) -> Self {
        TraceRecorder { opts, start: Instant::now(), records: Vec::new() }
    }

    pub(crate) fn wants(&self, iter: usize) -> bool {
        self.opts.wants(iter)
    }

    pub(crate) fn push(&mut self, iter: usize, objective: f64, violation: f64) {
        if self.records.last().is_some_and(|r| r.iter >= iter) {
            return;
        }
        self.records.push(IterationRecord {
            iter,
            objective,
            violation,
            primal_gap: self.opts.fstar.map(|f| objective - f),
            elapsed: self.start.elapsed().as_secs_f64(),
        });
    }

    pub(crate) fn finish(self) -> Vec<IterationRecord> {
        self.records
    }
}

/// Final result of a solver run.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub plan: PrimalPoint,
    pub objective: f64,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    /// Resolved constants and end-of-run diagnostics (γ, ε̃, A, Θ, T, gaps...).
    pub diagnostics: BTreeMap<String, f64>,
}

impl SolveReport {
    pub fn new(plan: PrimalPoint, problem: &PotProblem, iterations: usize) -> Self {
        let objective = pot_objective(plan.x.view(), problem.cost());
        let violation = constraint_violation(&plan, problem);
        SolveReport {
            plan,
            objective,
            violation,
            iterations,
            converged: true,
            trace: Vec::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_trace(mut self, trace: Vec<IterationRecord>) -> Self {
        self.trace = trace;
        self
    }

    pub fn diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn is_feasible(&self, problem: &PotProblem) -> bool {
        self.violation <= problem.feasibility_tol()
    }
}
