use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PotError, Result};
use crate::problem::PotProblem;

/// Added to every mixture bin so marginals stay strictly positive.
const MIXTURE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Two-component Gaussian mixtures on a line, squared-distance cost.
    GaussianMixture,
    /// Uniform random histograms on a square pixel grid, squared Euclidean
    /// cost. Stands in for downscaled image histograms.
    RandomHistogram,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::GaussianMixture => "gaussian_mixture",
            GeneratorKind::RandomHistogram => "random_histogram",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = PotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mixture" => Ok(GeneratorKind::GaussianMixture),
            "random_histogram" => Ok(GeneratorKind::RandomHistogram),
            other => Err(PotError::InvalidParameter(format!("unknown generator kind {other:?}"))),
        }
    }
}

/// Inputs of a synthetic instance. The same spec always yields the same
/// bytes; the random source is ChaCha8 seeded from `seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub mass_r: f64,
    pub mass_c: f64,
    pub s_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { kind: GeneratorKind::GaussianMixture, n: 100, mass_r: 5.0, mass_c: 3.0, s_fraction: 0.9, seed: 0 }
    }
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(PotError::InvalidParameter(format!("generator needs n >= 2, got {}", self.n)));
        }
        if !(self.mass_r > 0.0 && self.mass_r.is_finite() && self.mass_c > 0.0 && self.mass_c.is_finite()) {
            return Err(PotError::InvalidParameter("generator masses must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.s_fraction) {
            return Err(PotError::InvalidParameter(format!("s fraction {} outside [0, 1]", self.s_fraction)));
        }
        Ok(())
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<PotProblem> {
    match spec.kind {
        GeneratorKind::GaussianMixture => gen_gaussian_mixture(spec),
        GeneratorKind::RandomHistogram => gen_random_histogram(spec),
    }
}

fn scale_to(mut h: Array1<f64>, mass: f64) -> Array1<f64> {
    let total = h.sum();
    h.mapv_inplace(|v| v * mass / total);
    h
}

fn mixture(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let span = (n - 1) as f64;
    let comps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            let mean = rng.random_range(0.0..=span);
            let width = rng.random_range(0.05..0.2) * span.max(1.0);
            let weight = rng.random_range(0.3..1.0);
            (mean, width, weight)
        })
        .collect();
    (0..n)
        .map(|i| {
            let x = i as f64;
            let dens: f64 = comps
                .iter()
                .map(|&(m, w, a)| a * (-(x - m) * (x - m) / (2.0 * w * w)).exp())
                .sum();
            dens + MIXTURE_FLOOR
        })
        .collect()
}

fn finish(r: Array1<f64>, c: Array1<f64>, s_fraction: f64, cost: Array2<f64>) -> Result<PotProblem> {
    let s = s_fraction * r.sum().min(c.sum());
    PotProblem::new(r, c, s, cost)
}

/// Mixture marginals scaled to `mass_r` and `mass_c`,
/// `s = s_fraction · min(mass)`, and `C_ij = (i − j)² / (n − 1)²`.
pub fn gen_gaussian_mixture(spec: &GeneratorSpec) -> Result<PotProblem> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = scale_to(mixture(&mut rng, n), spec.mass_r);
    let c = scale_to(mixture(&mut rng, n), spec.mass_c);
    let denom = ((n - 1) * (n - 1)) as f64;
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        let d = i as f64 - j as f64;
        d * d / denom
    });
    finish(r, c, spec.s_fraction, cost)
}

/// Bins laid out row by row on a `⌈√n⌉`-wide grid; the cost is the squared
/// Euclidean distance divided by its maximum.
pub fn gen_random_histogram(spec: &GeneratorSpec) -> Result<PotProblem> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |mass| scale_to((0..n).map(|_| rng.random_range(MIXTURE_FLOOR..1.0)).collect(), mass);
    let r = draw(spec.mass_r);
    let c = draw(spec.mass_c);
    let side = (n as f64).sqrt().ceil() as usize;
    let pos = |k: usize| ((k / side) as f64, (k % side) as f64);
    let mut cost = Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (pos(i), pos(j));
        (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
    });
    let max = cost.iter().fold(0.0f64, |m, &v| m.max(v));
    cost.mapv_inplace(|v| v / max);
    finish(r, c, spec.s_fraction, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn defaults_match_synthetic_setup() {
        let p = generate(&GeneratorSpec::default()).unwrap();
        assert_eq!(p.n(), 100);
        assert!((p.r_mass() - 5.0).abs() < 1e-12);
        assert!((p.c_mass() - 3.0).abs() < 1e-12);
        assert!((p.s() - 2.7).abs() < 1e-12);
        assert_eq!(p.cost_max(), 1.0);
        assert!(p.r().iter().chain(p.c().iter()).all(|&v| v > 0.0));
    }

    #[test]
    fn same_seed_same_instance() {
        for kind in [GeneratorKind::GaussianMixture, GeneratorKind::RandomHistogram] {
            let spec = GeneratorSpec { kind, n: 17, seed: 42, ..GeneratorSpec::default() };
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
            let other = GeneratorSpec { seed: 43, ..spec };
            assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
        }
    }

    #[test]
    fn two_bins_cost() {
        let p = generate(&GeneratorSpec { n: 2, ..GeneratorSpec::default() }).unwrap();
        assert_eq!(p.cost().to_owned(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn histogram_cost_is_normalized_grid_distance() {
        let spec = GeneratorSpec { kind: GeneratorKind::RandomHistogram, n: 4, ..GeneratorSpec::default() };
        let p = generate(&spec).unwrap();
        // 2×2 grid: neighbours at 1, the diagonal at 2.
        assert_eq!(p.cost()[[0, 3]], 1.0);
        assert_eq!(p.cost()[[0, 1]], 0.5);
        assert_eq!(p.cost()[[1, 2]], 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&GeneratorSpec { n: 1, ..GeneratorSpec::default() }).is_err());
        assert!(generate(&GeneratorSpec { mass_r: 0.0, ..GeneratorSpec::default() }).is_err());
        assert!(generate(&GeneratorSpec { s_fraction: 1.5, ..GeneratorSpec::default() }).is_err());
        assert!("nope".parse::<GeneratorKind>().is_err());
        assert_eq!("random_histogram".parse::<GeneratorKind>().unwrap(), GeneratorKind::RandomHistogram);
    }
}
