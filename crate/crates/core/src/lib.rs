//! Solvers for partial optimal transport (POT): move exactly `s` units of
//! mass between two nonnegative histograms `r` and `c` of possibly different
//! total mass, at minimum linear cost.
//!
//! Modules:
//!
//! - [`problem`]: instance validation, the implicit constraint operator and
//!   feasibility metrics.
//! - [`rounding`]: Round-POT, the projection onto the exact feasible set.
//! - [`sinkhorn`]: dummy-point reduction to balanced OT, log-domain Sinkhorn,
//!   and the infeasible and feasible POT procedures built on it.
//! - [`apdagd`]: entropic dual, adaptive accelerated gradient loop and the
//!   ε-approximation wrapper.
//! - [`dualextra`]: dual extrapolation over the simplex/box saddle problem.
//! - [`reference`]: exact dense simplex oracle for small instances.
//! - [`harness`]: generators, file formats, experiment runner, scaling study.

pub mod apdagd;
pub mod dualextra;
pub mod error;
pub mod harness;
pub mod problem;
pub mod reference;
pub mod rounding;
pub mod sinkhorn;

pub use error::{PotError, Result};
pub use problem::{
    apply_a, apply_a_transpose, constraint_violation, pot_objective, validate_problem,
    ConstraintImage, IterationRecord, PotProblem, PrimalPoint, SolveReport, TraceOptions,
};
pub use rounding::{enforce_slack, round_pot, RoundingOutcome};
