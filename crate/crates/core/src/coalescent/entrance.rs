//! Finite proxies for a nested coalescent started from infinitely many species.
//!
//! Both proxies start the simulation at the (random) time `u0` at which the species coalescent
//! reaches `warm_species` blocks, and differ in the gene content of those blocks.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::composition::GeneticComposition;
use super::kingman;
use crate::error::{domain, Result};

/// How gene lineages of the minimal proxy are treated before the warm start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmGenes {
    /// No gene merger before `u0`: an upper bracket of the true gene count.
    Lossless,
    /// All genes of a block merge as one Kingman coalescent from time 0: a lower bracket.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntranceProxy {
    /// `warm_species` species at `u0`, each carrying `cap` genes (infinitely many, in effect).
    Maximal { warm_species: u64, cap: u64 },
    /// `initial_species` species with one gene each at time 0. The species coalescent is
    /// fast-forwarded to `warm_species` blocks, whose sizes form a uniform random composition.
    Minimal {
        initial_species: u64,
        warm_species: u64,
        warm_genes: WarmGenes,
    },
}

/// Warm-start species per rescaling unit `n`.
pub const DEFAULT_WARM_FACTOR: u64 = 200;
/// `cap = CAP_FACTOR * n / (c * t_min)` keeps the capped descent within 1e-3 of the descent
/// from infinity at the first snapshot `t_min / n`.
pub const CAP_FACTOR: f64 = 2000.0;
/// Minimal proxy: initial species per `n^2`.
pub const MINIMAL_MASS_FACTOR: f64 = 1e7;

impl EntranceProxy {
    pub fn maximal(n: u64, gene_rate: f64, t_min: f64) -> Result<Self> {
        if n == 0 || !(gene_rate > 0.0) || !(t_min > 0.0) {
            return Err(domain("maximal proxy needs n, c, t_min > 0"));
        }
        let cap = (CAP_FACTOR * n as f64 / (gene_rate * t_min)).ceil();
        Ok(EntranceProxy::Maximal {
            warm_species: DEFAULT_WARM_FACTOR * n,
            cap: cap.min(1e15) as u64,
        })
    }

    pub fn minimal(n: u64, warm_genes: WarmGenes) -> Result<Self> {
        if n == 0 {
            return Err(domain("minimal proxy needs n > 0"));
        }
        let initial = (MINIMAL_MASS_FACTOR * (n as f64).powi(2)).min(1e17);
        Ok(EntranceProxy::Minimal {
            initial_species: initial as u64,
            warm_species: DEFAULT_WARM_FACTOR * n,
            warm_genes,
        })
    }

    pub fn warm_species(&self) -> u64 {
        match *self {
            EntranceProxy::Maximal { warm_species, .. }
            | EntranceProxy::Minimal { warm_species, .. } => warm_species,
        }
    }

    /// Samples the warm-start time and composition.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        gene_rate: f64,
        fast: Option<u64>,
        rng: &mut R,
    ) -> Result<(f64, GeneticComposition)> {
        match *self {
            EntranceProxy::Maximal { warm_species, cap } => {
                if warm_species == 0 || cap == 0 {
                    return Err(domain("maximal proxy needs positive species and cap"));
                }
                let u0 = kingman::hitting_time(None, warm_species, 1.0, rng);
                Ok((u0, GeneticComposition::uniform(warm_species, cap)?))
            }
            EntranceProxy::Minimal { initial_species, warm_species, warm_genes } => {
                if warm_species == 0 || initial_species < warm_species {
                    return Err(domain("minimal proxy needs initial_species >= warm_species > 0"));
                }
                let u0 = kingman::hitting_time(Some(initial_species), warm_species, 1.0, rng);
                let sizes = uniform_composition(initial_species, warm_species, rng);
                let genes = match warm_genes {
                    WarmGenes::Lossless => sizes,
                    WarmGenes::Pooled => sizes
                        .into_iter()
                        .map(|m| kingman::descent(m, gene_rate, u0, fast, rng))
                        .collect(),
                };
                Ok((u0, GeneticComposition::new(genes)?))
            }
        }
    }
}

/// Random composition of `total` into `parts` positive integers, approximately uniform:
/// Dirichlet(1, ..., 1) proportions rounded down, with the remainder spread one unit at a time.
pub fn uniform_composition<R: Rng + ?Sized>(total: u64, parts: u64, rng: &mut R) -> Vec<u64> {
    let free = (total - parts) as f64;
    let e: Vec<f64> = (0..parts).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = e.iter().sum();
    let mut sizes: Vec<u64> = e.iter().map(|x| 1 + (free * x / sum).floor() as u64).collect();
    let assigned: u64 = sizes.iter().sum();
    let mut remainder = total.saturating_sub(assigned);
    while remainder > 0 {
        let i = rng.random_range(0..parts as usize);
        sizes[i] += 1;
        remainder -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    #[test]
    fn composition_sums_to_total() {
        let mut rng = Streams::new(2).get("c", 0);
        for &(t, p) in &[(10u64, 10u64), (1000, 7), (1_000_000_000_000, 5000)] {
            let c = uniform_composition(t, p, &mut rng);
            assert_eq!(c.len() as u64, p);
            assert_eq!(c.iter().sum::<u64>(), t);
            assert!(c.iter().all(|&x| x >= 1));
        }
    }

    #[test]
    fn proxies_bracket_gene_counts() {
        let s = Streams::new(9);
        let lossless = EntranceProxy::minimal(50, WarmGenes::Lossless).unwrap();
        let pooled = EntranceProxy::minimal(50, WarmGenes::Pooled).unwrap();
        let (u_a, a) = lossless.sample(1.0, Some(1024), &mut s.get("p", 0)).unwrap();
        let (u_b, b) = pooled.sample(1.0, Some(1024), &mut s.get("p", 0)).unwrap();
        assert_eq!(u_a, u_b);
        assert_eq!(a.species_count(), b.species_count());
        assert!(b.total_genes() < a.total_genes());
        assert!((u_a * 10_000.0 / 2.0 - 1.0).abs() < 0.05);
    }
}
