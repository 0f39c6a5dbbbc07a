//! Laplace-transform solvers for the Smoluchowski equation with coagulation rate
//! `a(t) = 1/(t + delta)` and mass depletion `x' = -psi(x)`.
//!
//! Two routes: a finite-difference grid in the Feller case ([`solve_laplace_pde`]) and the exact
//! Monte Carlo representation through the time-inhomogeneous Yule tree ([`mc_weak_solution`]).

mod grid;
mod tree;

pub use grid::{solve_laplace_pde, solve_with_error, GridProbe, GridSpec, LaplaceGrid, PdeSolution};
pub use tree::{
    degenerate_tree_bounds, propagate_marks, random_tree, sample_inhomogeneous_yule, MarkedTree,
};

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::{BranchingMechanism, Mass};
use crate::rng::{replicate, Streams};
use crate::stats::{mean_of, MeanEstimate};

/// Initial mass distribution `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass { at: f64 },
    Exponential { mean: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialLaw::PointMass { at } => at >= 0.0 && at.is_finite(),
            InitialLaw::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            InitialLaw::Gamma { shape, scale } => shape > 0.0 && scale > 0.0 && (shape * scale).is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid initial law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { at } => at,
            InitialLaw::Exponential { mean } => mean,
            InitialLaw::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Law of `factor * W`.
    pub fn scaled(&self, factor: f64) -> InitialLaw {
        match *self {
            InitialLaw::PointMass { at } => InitialLaw::PointMass { at: factor * at },
            InitialLaw::Exponential { mean } => InitialLaw::Exponential { mean: factor * mean },
            InitialLaw::Gamma { shape, scale } => InitialLaw::Gamma { shape, scale: factor * scale },
        }
    }

    /// `E exp(-lambda W)`.
    pub fn laplace(&self, lambda: f64) -> f64 {
        match *self {
            InitialLaw::PointMass { at } => (-lambda * at).exp(),
            InitialLaw::Exponential { mean } => 1.0 / (1.0 + mean * lambda),
            InitialLaw::Gamma { shape, scale } => (1.0 + scale * lambda).powf(-shape),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialLaw::PointMass { at } => at,
            InitialLaw::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            InitialLaw::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated").sample(rng),
        }
    }
}

/// Samples of `mu_T` with Laplace estimates at the probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakSolutionSample {
    pub horizon: f64,
    pub samples: Vec<f64>,
    pub estimates: Vec<(f64, MeanEstimate)>,
}

impl WeakSolutionSample {
    fn from_samples(horizon: f64, samples: Vec<f64>, probes: &[f64]) -> Result<Self> {
        let estimates = probes
            .iter()
            .map(|&l| Ok((l, mean_of(&samples, |x| (-l * x).exp())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(WeakSolutionSample { horizon, samples, estimates })
    }

    pub fn estimate(&self, lambda: f64) -> Option<MeanEstimate> {
        self.estimates.iter().find(|(l, _)| *l == lambda).map(|(_, e)| *e)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "replicate,value")?;
        for (i, x) in self.samples.iter().enumerate() {
            writeln!(w, "{i},{x}")?;
        }
        Ok(())
    }
}

/// Monte Carlo of the finite-population weak solution at time `horizon`: each replicate samples a
/// Yule tree with split rate `1/(horizon - t + delta)`, iid leaf marks from `nu`, and records the
/// propagated root mark.
pub fn mc_weak_solution(
    horizon: f64,
    delta: f64,
    nu: &InitialLaw,
    m: &BranchingMechanism,
    probes: &[f64],
    replicates: usize,
    streams: &Streams,
) -> Result<WeakSolutionSample> {
    nu.validate()?;
    if replicates < 2 {
        return Err(Error::Precondition(format!("need at least 2 replicates, got {replicates}")));
    }
    let flow = m.flow();
    let purpose = format!("mc-weak/{horizon}/{delta}");
    let values = replicate(streams, &purpose, replicates, |_, rng| -> Result<f64> {
        let tree = sample_inhomogeneous_yule(horizon, delta, rng)?;
        let marks: Vec<Mass> = (0..tree.leaf_count()).map(|_| Mass::Finite(nu.sample(rng))).collect();
        Ok(propagate_marks(&tree, &marks, &flow)?.to_f64())
    });
    let samples = values.into_iter().collect::<Result<Vec<_>>>()?;
    WeakSolutionSample::from_samples(horizon, samples, probes)
}

/// Proper infinite-population solution at `horizon` through self-similarity: `mu_T` is the law
/// of `T^-beta Upsilon`, estimated from a bank of `Upsilon` samples.
pub fn infinite_pop_weak_solution(
    horizon: f64,
    m: &BranchingMechanism,
    probes: &[f64],
    upsilon_bank: &[f64],
) -> Result<WeakSolutionSample> {
    if upsilon_bank.len() < 2 {
        return Err(Error::Precondition(format!(
            "the Upsilon bank holds {} samples; produce one with `upsilon-bank`",
            upsilon_bank.len()
        )));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(domain(format!("horizon must be positive and finite, got {horizon}")));
    }
    let scale = horizon.powf(-m.beta());
    let samples = upsilon_bank.iter().map(|y| scale * y).collect();
    WeakSolutionSample::from_samples(horizon, samples, probes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_law_transforms() {
        let mut rng = Streams::new(3).get("nu", 0);
        for law in [
            InitialLaw::PointMass { at: 1.0 },
            InitialLaw::Exponential { mean: 3.0 },
            InitialLaw::Gamma { shape: 2.0, scale: 0.5 },
        ] {
            let xs: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng)).collect();
            let e = mean_of(&xs, |x| (-0.7 * x).exp()).unwrap();
            assert!((e.mean - law.laplace(0.7)).abs() < 4.0 * e.stderr + 1e-12, "{law:?}");
        }
        assert!(InitialLaw::Exponential { mean: 0.0 }.validate().is_err());
    }

    #[test]
    fn without_coagulation_the_mark_is_the_flow() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let s = mc_weak_solution(1.5, f64::INFINITY, &InitialLaw::PointMass { at: 2.0 }, &m, &[1.0], 10, &Streams::new(1)).unwrap();
        let f = m.flow().flow(Mass::Finite(2.0), 1.5).unwrap();
        assert!(s.samples.iter().all(|&x| (x - f).abs() < 1e-15));
    }

    #[test]
    fn time_zero_returns_the_initial_law() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let s = mc_weak_solution(0.0, 1.0, &InitialLaw::PointMass { at: 2.0 }, &m, &[1.0], 10, &Streams::new(1)).unwrap();
        assert!(s.samples.iter().all(|&x| x == 2.0));
    }

    #[test]
    fn infinite_population_scaling() {
        let m = BranchingMechanism::quadratic(0.5).unwrap();
        let bank = [0.5, 1.0, 2.0, 4.0];
        let a = infinite_pop_weak_solution(4.0, &m, &[0.0, 2.0], &bank).unwrap();
        let b = infinite_pop_weak_solution(1.0, &m, &[0.25 * 2.0], &bank).unwrap();
        assert_eq!(a.estimate(0.0).unwrap().mean, 1.0);
        assert!((a.estimate(2.0).unwrap().mean - b.estimate(0.5).unwrap().mean).abs() < 1e-15);
        assert!(infinite_pop_weak_solution(1.0, &m, &[1.0], &[]).is_err());
    }
}
