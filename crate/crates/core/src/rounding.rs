//! Round-POT: projects any nonnegative approximate point onto the exact
//! feasible set `A x = b` in `O(n²)`, moving it by at most `23 δ` in ℓ1
//! where `δ = ‖A x − b‖₁`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{PotError, Result};
use crate::problem::{col_sums, constraint_violation, row_sums, PotProblem, PrimalPoint};

/// Output of [`round_pot`].
#[derive(Clone, Debug, PartialEq)]
pub struct RoundingOutcome {
    pub rounded: PrimalPoint,
    /// `‖x − x̄‖₁`.
    pub moved_l1: f64,
    /// `‖A x − b‖₁` of the input.
    pub input_violation: f64,
}

/// Residuals more negative than this (relative to the problem scale) are
/// treated as a bug rather than floating-point noise.
const RESIDUAL_NOISE: f64 = 1e-12;

/// Enforcing procedure: returns `p̄` with `0 ≤ p̄ ≤ r` and
/// `‖p̄‖₁ = ‖r‖₁ − s`.
///
/// The input is clipped to `r`, then either scaled down onto the target
/// mass, or (when it is short of mass) filled to `r` index by index until
/// the target is crossed, with the overshoot taken back from the last
/// filled index.
pub fn enforce_slack(r: ArrayView1<'_, f64>, s: f64, p: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if p.len() != r.len() {
        return Err(PotError::DimensionMismatch { what: "slack", got: p.len(), expected: r.len() });
    }
    let r_mass: f64 = r.iter().sum();
    if !(0.0..=r_mass).contains(&s) {
        return Err(PotError::MassOutOfRange { s, limit: r_mass });
    }
    let target = r_mass - s;

    let mut out: Array1<f64> = p.iter().zip(r.iter()).map(|(&pi, &ri)| pi.max(0.0).min(ri)).collect();
    let clipped_mass: f64 = out.iter().sum();

    // α = min(1, target / ‖p'‖₁), with target / 0 read as +∞.
    if clipped_mass > target {
        let alpha = target / clipped_mass;
        out.mapv_inplace(|v| v * alpha);
        return Ok(out);
    }

    let n = out.len();
    let mut mass = clipped_mass;
    let mut last = 0;
    let mut i = 0;
    while mass <= target && i < n {
        mass += r[i] - out[i];
        out[i] = r[i];
        last = i;
        i += 1;
    }
    let excess = mass - target;
    out[last] = (out[last] - excess).clamp(0.0, r[last]);
    Ok(out)
}

/// Round-POT. The input must be entrywise nonnegative.
pub fn round_pot(point: &PrimalPoint, problem: &PotProblem) -> Result<RoundingOutcome> {
    let n = problem.n();
    if point.n() != n || point.x.nrows() != n || point.x.ncols() != n || point.q.len() != n {
        return Err(PotError::DimensionMismatch { what: "point", got: point.n(), expected: n });
    }
    if let Some((index, &value)) = point
        .x
        .iter()
        .chain(point.p.iter())
        .chain(point.q.iter())
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0))
    {
        if !value.is_finite() {
            return Err(PotError::NonFinite { what: "point" });
        }
        return Err(PotError::NegativeEntry { what: "point", index, value });
    }

    let input_violation = constraint_violation(point, problem);
    let p_bar = enforce_slack(problem.r(), problem.s(), point.p.view())?;
    let q_bar = enforce_slack(problem.c(), problem.s(), point.q.view())?;
    let row_target = &problem.r() - &p_bar;
    let col_target = &problem.c() - &q_bar;

    let scale = problem.b_l1().max(1.0);
    let x_bar = fit_marginals(point.x.view(), row_target.view(), col_target.view(), false, scale)?;

    let rounded = PrimalPoint::new(x_bar, p_bar, q_bar);
    let moved_l1 = point.l1_distance(&rounded);
    Ok(RoundingOutcome { rounded, moved_l1, input_violation })
}

/// Shrinks rows and columns of `x` so its sums do not exceed the targets,
/// then adds the rank-one fill `e₁e₂ᵀ/‖e₁‖₁` built from the remaining
/// deficits.
///
/// With `sequential = false` both scalings are computed from the input
/// sums (Round-POT). With `sequential = true` the column scaling is computed
/// after the row scaling has been applied (the classic OT rounding).
pub(crate) fn fit_marginals(
    x: ArrayView2<'_, f64>,
    row_target: ArrayView1<'_, f64>,
    col_target: ArrayView1<'_, f64>,
    sequential: bool,
    scale: f64,
) -> Result<Array2<f64>> {
    let ratio = |target: f64, sum: f64| if sum > 0.0 { (target / sum).min(1.0) } else { 1.0 };

    let rs = row_sums(x);
    let g: Array1<f64> = row_target.iter().zip(rs.iter()).map(|(&t, &s)| ratio(t, s)).collect();
    let mut out = x.to_owned();
    for (mut row, &gi) in out.rows_mut().into_iter().zip(g.iter()) {
        row.mapv_inplace(|v| v * gi);
    }
    let cs = if sequential { col_sums(out.view()) } else { col_sums(x) };
    let h: Array1<f64> = col_target.iter().zip(cs.iter()).map(|(&t, &s)| ratio(t, s)).collect();
    for mut row in out.rows_mut() {
        for (v, &hj) in row.iter_mut().zip(h.iter()) {
            *v *= hj;
        }
    }

    let e1 = residual(row_target, row_sums(out.view()).view(), scale)?;
    let e2 = residual(col_target, col_sums(out.view()).view(), scale)?;
    let n1: f64 = e1.iter().sum();
    let n2: f64 = e2.iter().sum();
    if (n1 - n2).abs() > 1e-8 * scale {
        return Err(PotError::Internal(format!(
            "row and column deficits disagree: {n1:e} vs {n2:e}"
        )));
    }
    if n1 > 0.0 {
        for (mut row, &a) in out.rows_mut().into_iter().zip(e1.iter()) {
            if a == 0.0 {
                continue;
            }
            let w = a / n1;
            for (v, &b) in row.iter_mut().zip(e2.iter()) {
                *v += w * b;
            }
        }
    }
    Ok(out)
}

/// `target − sums`, clamping rounding noise at zero.
fn residual(target: ArrayView1<'_, f64>, sums: ArrayView1<'_, f64>, scale: f64) -> Result<Array1<f64>> {
    target
        .iter()
        .zip(sums.iter())
        .map(|(&t, &s)| {
            let e = t - s;
            if e >= 0.0 {
                Ok(e)
            } else if e > -RESIDUAL_NOISE * scale {
                Ok(0.0)
            } else {
                Err(PotError::Internal(format!("negative marginal residual {e:e}")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::apply_a;
    use ndarray::array;
    use proptest::prelude::*;

    fn unit_problem(s: f64) -> PotProblem {
        PotProblem::new(array![1.0, 1.0], array![1.0, 1.0], s, array![[0.0, 1.0], [1.0, 0.0]]).unwrap()
    }

    #[test]
    fn enforce_slack_golden_cases() {
        let r = array![1.0, 1.0];
        assert_eq!(enforce_slack(r.view(), 1.5, array![2.0, 0.0].view()).unwrap(), array![0.5, 0.0]);
        assert_eq!(enforce_slack(r.view(), 1.0, array![0.5, 0.5].view()).unwrap(), array![0.5, 0.5]);
        assert_eq!(enforce_slack(r.view(), 1.0, array![1.0, 0.0].view()).unwrap(), array![1.0, 0.0]);
    }

    #[test]
    fn enforce_slack_zero_input_fills_from_r() {
        let r = array![0.25, 0.5, 1.0];
        let out = enforce_slack(r.view(), 1.0, array![0.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(out, array![0.25, 0.5, 0.0]);
    }

    #[test]
    fn enforce_slack_zero_mass_returns_r() {
        let r = array![0.25, 0.5];
        let out = enforce_slack(r.view(), 0.0, array![0.25, 0.5].view()).unwrap();
        assert_eq!(out, r);
        let out = enforce_slack(r.view(), 0.0, array![0.0, 0.0].view()).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn enforce_slack_rejects_excess_mass() {
        let err = enforce_slack(array![1.0, 1.0].view(), 2.5, array![0.0, 0.0].view()).unwrap_err();
        assert!(matches!(err, PotError::MassOutOfRange { .. }));
    }

    #[test]
    fn round_pot_keeps_feasible_point() {
        let problem = unit_problem(1.0);
        let pt = PrimalPoint::new(array![[0.5, 0.0], [0.0, 0.5]], array![0.5, 0.5], array![0.5, 0.5]);
        let out = round_pot(&pt, &problem).unwrap();
        assert_eq!(out.rounded, pt);
        assert_eq!(out.moved_l1, 0.0);
        assert_eq!(out.input_violation, 0.0);
    }

    #[test]
    fn round_pot_identity_plan_hand_trace() {
        let problem = unit_problem(1.0);
        let pt = PrimalPoint::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0], array![0.0, 0.0]);
        let out = round_pot(&pt, &problem).unwrap();
        assert_eq!(out.rounded.x, array![[0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(out.rounded.p, array![1.0, 0.0]);
        assert_eq!(out.rounded.q, array![1.0, 0.0]);
        assert_eq!(out.input_violation, 1.0);
        assert_eq!(out.moved_l1, 3.0);
    }

    #[test]
    fn round_pot_empty_plan_rank_one_fill() {
        let problem = unit_problem(1.0);
        let out = round_pot(&PrimalPoint::zeros(2), &problem).unwrap();
        assert_eq!(out.rounded.x, array![[0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(out.input_violation, 5.0);
        assert!(out.moved_l1 <= 115.0);
        assert_eq!(constraint_violation(&out.rounded, &problem), 0.0);
    }

    #[test]
    fn round_pot_rejects_negative_input() {
        let problem = unit_problem(1.0);
        let pt = PrimalPoint::new(array![[-1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0], array![0.0, 0.0]);
        assert!(matches!(round_pot(&pt, &problem), Err(PotError::NegativeEntry { .. })));
    }

    #[test]
    fn sequential_fit_matches_classic_rounding() {
        let x = array![[0.6, 0.0], [0.0, 0.6]];
        let t = array![0.5, 0.5];
        let out = fit_marginals(x.view(), t.view(), t.view(), true, 1.0).unwrap();
        assert!((out[[0, 0]] - 0.5).abs() < 1e-15 && (out[[1, 1]] - 0.5).abs() < 1e-15);
        assert_eq!(out[[0, 1]], 0.0);
    }

    fn arb_case() -> impl Strategy<Value = (PotProblem, PrimalPoint)> {
        (2usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..2.0, n),
                proptest::collection::vec(0.0f64..2.0, n),
                0.0f64..1.0,
                proptest::collection::vec(0.0f64..1.5, n * n + 2 * n),
            )
                .prop_map(move |(r, c, frac, x)| {
                    let r = Array1::from(r);
                    let c = Array1::from(c);
                    let s = frac * r.sum().min(c.sum());
                    let problem = PotProblem::new(r, c, s, Array2::zeros((n, n))).unwrap();
                    let point = PrimalPoint::from_vec(n, Array1::from(x).view()).unwrap();
                    (problem, point)
                })
        })
    }

    proptest! {
        #[test]
        fn round_pot_is_feasible_and_close((problem, point) in arb_case()) {
            let out = round_pot(&point, &problem).unwrap();
            prop_assert!(out.rounded.is_nonnegative());
            prop_assert!(constraint_violation(&out.rounded, &problem) <= problem.feasibility_tol());
            prop_assert!(out.moved_l1 <= 23.0 * out.input_violation + 1e-9);
        }

        #[test]
        fn round_pot_is_idempotent((problem, point) in arb_case()) {
            let once = round_pot(&point, &problem).unwrap();
            let twice = round_pot(&once.rounded, &problem).unwrap();
            prop_assert!(twice.moved_l1 <= 1e-9);
        }

        #[test]
        fn enforce_slack_guarantees(
            r in proptest::collection::vec(0.0f64..3.0, 1..20),
            frac in 0.0f64..=1.0,
            p_scale in 0.0f64..4.0,
            seed in proptest::collection::vec(0.0f64..1.0, 20),
        ) {
            let r = Array1::from(r);
            let s = frac * r.sum();
            let p: Array1<f64> = (0..r.len()).map(|i| seed[i] * p_scale).collect();
            let out = enforce_slack(r.view(), s, p.view()).unwrap();
            for (&o, &ri) in out.iter().zip(r.iter()) {
                prop_assert!(o >= 0.0 && o <= ri + 1e-12);
            }
            prop_assert!((out.sum() - (r.sum() - s)).abs() <= 1e-9);
        }
    }

    #[test]
    fn rounded_point_matches_marginals_exactly() {
        let problem = PotProblem::new(array![0.4, 0.9, 0.2], array![0.5, 0.3, 0.6], 0.7, Array2::zeros((3, 3))).unwrap();
        let pt = PrimalPoint::new(
            array![[0.3, 0.1, 0.0], [0.2, 0.2, 0.4], [0.0, 0.05, 0.1]],
            array![0.1, 0.0, 0.3],
            array![0.0, 0.2, 0.1],
        );
        let out = round_pot(&pt, &problem).unwrap();
        let img = apply_a(&out.rounded);
        for (a, b) in img.row.iter().zip(problem.r().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((img.mass - 0.7).abs() < 1e-12);
    }
}
