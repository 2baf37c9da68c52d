use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apdagd::approx_pot_apdagd;
use crate::error::{PotError, Result};
use crate::harness::generate::{generate, GeneratorSpec};

/// Wall time of one APDAGD solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub seconds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub eps: f64,
    pub seed: u64,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log(seconds)` against `log(n)`; `None` with
    /// fewer than two distinct sizes.
    pub slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let k = logs.len() as f64;
    if logs.len() < 2 {
        return None;
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Times APDAGD on default mixture instances of each size, one after the
/// other.
pub fn scaling_study(n_list: &[usize], eps: f64, seed: u64) -> Result<ScalingStudy> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let problem = generate(&GeneratorSpec { n, seed, ..GeneratorSpec::default() })?;
        let start = Instant::now();
        let (report, converged) = match approx_pot_apdagd(&problem, eps) {
            Ok(r) => (r, true),
            Err(e @ PotError::NotConverged { .. }) => match e.into_partial_report() {
                Some(r) => (r, false),
                None => return Err(PotError::Internal("missing partial report".into())),
            },
            Err(e) => return Err(e),
        };
        rows.push(ScalingRow {
            n,
            seconds: start.elapsed().as_secs_f64(),
            iterations: report.iterations,
            converged,
            objective: report.objective,
        });
    }
    let slope = loglog_slope(&rows.iter().map(|r| (r.n as f64, r.seconds)).collect::<Vec<_>>());
    Ok(ScalingStudy { eps, seed, rows, slope })
}
