//! Problem generators, file formats, the experiment runner and the scaling
//! study behind the `pot` command-line tool.

pub mod experiment;
pub mod generate;
pub mod io;
pub mod scaling;

pub use experiment::{run_experiment, solve_problem, Algo, ExperimentResult, RunConfig, SolverSettings};
pub use generate::{gen_gaussian_mixture, gen_random_histogram, generate, GeneratorKind, GeneratorSpec};
pub use scaling::{loglog_slope, scaling_study, ScalingRow, ScalingStudy};
