//! Exact LP oracle for small instances.
//!
//! Solves `min ⟨C, X⟩` subject to `X1 + p = r`, `Xᵀ1 + q = c`, `1ᵀX1 = s`
//! with a dense two-phase tableau simplex. The slacks `p`, `q` give an
//! initial basis for the first `2n` rows; only the mass row needs an
//! artificial variable.
//!
//! Pivoting uses Dantzig's rule and falls back to Bland's rule after a run
//! of degenerate pivots, so the method is deterministic and cannot cycle.
//! The final basis is re-solved with an LU factorization to clean up
//! accumulated tableau error and to produce dual multipliers.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{PotError, Result};
use crate::problem::{pot_objective, PotProblem, PrimalPoint};

/// Largest `n` accepted by [`solve_exact`].
pub const DEFAULT_SIZE_LIMIT: usize = 64;

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    pub plan: PrimalPoint,
    /// `f* = ⟨C, X⟩` of the returned plan.
    pub value: f64,
    pub status: ExactStatus,
    /// Dual multipliers `(y, z, t)` for the `2n + 1` equality rows, when the
    /// final basis could be factorized.
    pub duals: Option<Array1<f64>>,
    pub pivots: usize,
}

/// Solves the instance exactly; `n` is limited to [`DEFAULT_SIZE_LIMIT`].
pub fn solve_exact(problem: &PotProblem) -> Result<ExactSolution> {
    solve_exact_with_limit(problem, DEFAULT_SIZE_LIMIT)
}

/// As [`solve_exact`] with a caller-chosen size guard.
pub fn solve_exact_with_limit(problem: &PotProblem, limit: usize) -> Result<ExactSolution> {
    let n = problem.n();
    if n > limit {
        return Err(PotError::SizeLimitExceeded { n, limit });
    }
    if problem.s() == 0.0 {
        let plan = PrimalPoint::new(Array2::zeros((n, n)), problem.r().to_owned(), problem.c().to_owned());
        return Ok(ExactSolution { plan, value: 0.0, status: ExactStatus::Optimal, duals: None, pivots: 0 });
    }
    Tableau::new(problem).solve(problem)
}

/// Dense tableau over the columns `vec(X)`, `p`, `q`, artificial, rhs.
struct Tableau {
    n: usize,
    rows: usize,
    /// Structural columns, `n² + 2n`.
    cols: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn new(problem: &PotProblem) -> Self {
        let n = problem.n();
        let rows = 2 * n + 1;
        let cols = n * n + 2 * n;
        let width = cols + 2;
        let mut data = vec![0.0; rows * width];
        for i in 0..n {
            for j in 0..n {
                let col = i * n + j;
                data[i * width + col] = 1.0;
                data[(n + j) * width + col] = 1.0;
                data[2 * n * width + col] = 1.0;
            }
            data[i * width + n * n + i] = 1.0;
            data[(n + i) * width + n * n + n + i] = 1.0;
            data[i * width + width - 1] = problem.r()[i];
            data[(n + i) * width + width - 1] = problem.c()[i];
        }
        data[2 * n * width + cols] = 1.0;
        data[2 * n * width + width - 1] = problem.s();
        let basis = (0..2 * n).map(|k| n * n + k).chain(std::iter::once(cols)).collect();
        Tableau { n, rows, cols, width, data, basis, pivots: 0 }
    }

    fn artificial(&self) -> usize {
        self.cols
    }

    fn rhs(&self, row: usize) -> f64 {
        self.data[row * self.width + self.width - 1]
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Reduced-cost row `c − c_Bᵀ T` (last entry is `−c_Bᵀ x_B`).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut z = cost.to_vec();
        z.push(0.0);
        for (row, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            let start = row * self.width;
            for (zj, &t) in z.iter_mut().zip(&self.data[start..start + self.width]) {
                *zj -= cb * t;
            }
        }
        z
    }

    fn pivot(&mut self, z: &mut [f64], row: usize, col: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[row * w + col];
        let pivot_row: Vec<f64> = self.data[row * w..(row + 1) * w].iter().map(|v| v * inv).collect();
        let support: Vec<usize> = pivot_row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect();
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let f = self.data[r * w + col];
            if f == 0.0 {
                continue;
            }
            let base = r * w;
            for &k in &support {
                self.data[base + k] -= f * pivot_row[k];
            }
            self.data[base + col] = 0.0;
        }
        let f = z[col];
        if f != 0.0 {
            for &k in &support {
                z[k] -= f * pivot_row[k];
            }
            z[col] = 0.0;
        }
        self.data[row * w..(row + 1) * w].copy_from_slice(&pivot_row);
        self.data[row * w + col] = 1.0;
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the reduced-cost row `z`. Columns at or
    /// beyond `allowed` never enter. Returns `false` when the iteration cap
    /// is hit.
    fn optimize(&mut self, z: &mut [f64], allowed: usize, max_pivots: usize) -> bool {
        let mut degenerate_run = 0;
        for _ in 0..max_pivots {
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let entering = if bland {
                (0..allowed).find(|&j| z[j] < -PIVOT_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for (j, &zj) in z.iter().enumerate().take(allowed) {
                    if zj < -PIVOT_TOL && best.is_none_or(|(_, b)| zj < b) {
                        best = Some((j, zj));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(col) = entering else { return true };

            let mut leave: Option<(usize, f64)> = None;
            for row in 0..self.rows {
                let a = self.at(row, col);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(row).max(0.0) / a;
                leave = match leave {
                    None => Some((row, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-14 || (ratio <= lratio + 1e-14 && self.basis[row] < self.basis[lr]) {
                            Some((row, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            // The feasible region is bounded, so an unbounded ray means the
            // tableau has drifted; treat it like a stall.
            let Some((row, ratio)) = leave else { return false };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(z, row, col);
        }
        false
    }

    fn solve(mut self, problem: &PotProblem) -> Result<ExactSolution> {
        let n = self.n;
        let max_pivots = 50 * (self.rows + self.cols);
        let scale = problem.b_l1().max(1.0);

        // Phase 1: drive the mass-row artificial to zero.
        let mut phase1 = vec![0.0; self.cols + 1];
        phase1[self.artificial()] = 1.0;
        let mut z = self.reduced_costs(&phase1);
        if !self.optimize(&mut z, self.cols, max_pivots) {
            return Ok(self.failure(problem, ExactStatus::NumericalFailure));
        }
        if -z[self.width - 1] > 1e-9 * scale {
            return Ok(self.failure(problem, ExactStatus::Infeasible));
        }
        if let Some(row) = self.basis.iter().position(|&b| b == self.artificial()) {
            if let Some(col) = (0..self.cols).find(|&j| self.at(row, j).abs() > 1e-9) {
                self.pivot(&mut z, row, col);
            }
        }

        // Phase 2 on the true costs.
        let mut cost: Vec<f64> = problem.cost().iter().copied().collect();
        cost.extend(std::iter::repeat_n(0.0, 2 * n + 1));
        let mut z = self.reduced_costs(&cost);
        if !self.optimize(&mut z, self.cols, max_pivots) {
            return Ok(self.failure(problem, ExactStatus::NumericalFailure));
        }

        match self.refine(problem, &cost) {
            Some((plan, duals)) => {
                let value = pot_objective(plan.x.view(), problem.cost());
                Ok(ExactSolution { plan, value, status: ExactStatus::Optimal, duals, pivots: self.pivots })
            }
            None => Ok(self.failure(problem, ExactStatus::NumericalFailure)),
        }
    }

    /// Re-solves `B x_B = b` and `Bᵀ y = c_B` for the final basis.
    fn refine(&self, problem: &PotProblem, cost: &[f64]) -> Option<(PrimalPoint, Option<Array1<f64>>)> {
        let n = self.n;
        let m = self.rows;
        let column = |col: usize| -> Vec<(usize, f64)> {
            if col < n * n {
                let (i, j) = (col / n, col % n);
                vec![(i, 1.0), (n + j, 1.0), (2 * n, 1.0)]
            } else if col < n * n + 2 * n {
                vec![(col - n * n, 1.0)]
            } else {
                vec![(2 * n, 1.0)]
            }
        };
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (k, &col) in self.basis.iter().enumerate() {
            for (row, v) in column(col) {
                bmat[(row, k)] = v;
            }
        }
        let b = DVector::from_iterator(
            m,
            problem.r().iter().chain(problem.c().iter()).copied().chain(std::iter::once(problem.s())),
        );
        let scale = problem.b_l1().max(1.0);
        let lu = bmat.clone().lu();
        let mut values = vec![0.0; self.cols + 1];
        let solved = lu.solve(&b);
        for (k, &col) in self.basis.iter().enumerate() {
            let v = match &solved {
                Some(sol) => sol[k],
                None => self.rhs(k),
            };
            if v < -1e-9 * scale || !v.is_finite() {
                return None;
            }
            values[col] = v.max(0.0);
        }
        if values[self.artificial()] > 1e-9 * scale {
            return None;
        }
        let plan = PrimalPoint::from_vec(n, Array1::from(values[..self.cols].to_vec()).view()).ok()?;
        let duals = if solved.is_some() {
            let cb = DVector::from_iterator(m, self.basis.iter().map(|&b| cost[b]));
            bmat.transpose().lu().solve(&cb).map(|y| Array1::from_iter(y.iter().copied()))
        } else {
            None
        };
        Some((plan, duals))
    }

    fn failure(&self, problem: &PotProblem, status: ExactStatus) -> ExactSolution {
        let n = self.n;
        let mut values = vec![0.0; self.cols];
        for (row, &b) in self.basis.iter().enumerate() {
            if b < self.cols {
                values[b] = self.rhs(row).max(0.0);
            }
        }
        let plan = PrimalPoint::from_vec(n, Array1::from(values).view())
            .unwrap_or_else(|_| PrimalPoint::zeros(n));
        let value = pot_objective(plan.x.view(), problem.cost());
        ExactSolution { plan, value, status, duals: None, pivots: self.pivots }
    }
}

/// Reduced costs `c − Aᵀ y` for dual multipliers `y = (y, z, t)`.
pub fn reduced_costs(problem: &PotProblem, duals: &Array1<f64>) -> PrimalPoint {
    let n = problem.n();
    let y = duals.slice(ndarray::s![..n]);
    let z = duals.slice(ndarray::s![n..2 * n]);
    let t = duals[2 * n];
    let x = Array2::from_shape_fn((n, n), |(i, j)| problem.cost()[[i, j]] - y[i] - z[j] - t);
    PrimalPoint::new(x, y.mapv(|v| -v), z.mapv(|v| -v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::constraint_violation;
    use ndarray::array;

    fn solve(r: Array1<f64>, c: Array1<f64>, s: f64, cost: Array2<f64>) -> ExactSolution {
        let problem = PotProblem::new(r, c, s, cost).unwrap();
        let sol = solve_exact(&problem).unwrap();
        assert_eq!(sol.status, ExactStatus::Optimal);
        assert!(constraint_violation(&sol.plan, &problem) <= problem.feasibility_tol());
        sol
    }

    #[test]
    fn zero_cost_diagonal() {
        let sol = solve(array![1.0, 1.0], array![1.0, 1.0], 1.0, array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(sol.value.abs() < 1e-12);
    }

    #[test]
    fn cheapest_cell_carries_all_mass() {
        let sol = solve(array![1.0, 1.0], array![1.0, 1.0], 1.0, array![[1.0, 2.0], [3.0, 4.0]]);
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!((sol.plan.x[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_cost_is_constant() {
        let sol = solve(array![1.0, 1.0], array![1.0, 1.0], 2.0, array![[1.0, 2.0], [3.0, 4.0]]);
        assert!((sol.value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_closed_form() {
        let sol = solve(array![0.5, 1.0], array![1.0, 0.2], 0.0, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.pivots, 0);
        assert_eq!(sol.plan.p, array![0.5, 1.0]);
    }

    #[test]
    fn size_guard() {
        let n = DEFAULT_SIZE_LIMIT + 1;
        let problem = PotProblem::new(Array1::ones(n), Array1::ones(n), 1.0, Array2::zeros((n, n))).unwrap();
        assert!(matches!(solve_exact(&problem), Err(PotError::SizeLimitExceeded { .. })));
    }

    #[test]
    fn duals_certify_optimality() {
        let problem = PotProblem::new(
            array![0.3, 0.5, 0.4],
            array![0.6, 0.2, 0.3],
            0.7,
            array![[0.2, 0.9, 0.4], [0.5, 0.1, 0.8], [0.7, 0.3, 0.6]],
        )
        .unwrap();
        let sol = solve_exact(&problem).unwrap();
        let duals = sol.duals.clone().unwrap();
        let rc = reduced_costs(&problem, &duals);
        for (&x, &d) in sol.plan.to_vec().iter().zip(rc.to_vec().iter()) {
            assert!(d >= -1e-8, "negative reduced cost {d}");
            assert!((x * d).abs() <= 1e-8);
        }
        // Strong duality: bᵀy equals the primal value.
        let b: Array1<f64> = problem.r().iter().chain(problem.c().iter()).copied().chain([problem.s()]).collect();
        assert!((b.dot(&duals) - sol.value).abs() < 1e-9);
    }
}
