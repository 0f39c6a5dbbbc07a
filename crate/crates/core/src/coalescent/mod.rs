//! Nested Kingman coalescent: species pairs merge at rate 1 and pool their gene lineages; gene
//! pairs inside a species merge at the gene rate `c`.

mod composition;
mod engine;
mod entrance;
pub mod kingman;

pub use composition::{empirical, EmpiricalMeasure, GeneticComposition};
pub use engine::{
    first_species_merger, run, run_to_absorption, simulate_nested, Engine, InitialGenes, Snapshot,
    TrajectoryRecord,
};
pub use entrance::{uniform_composition, EntranceProxy, WarmGenes};

use crate::error::{domain, Error, Result};
use crate::rng::{replicate, Streams};
use crate::stats::{mean_stderr, MeanEstimate};

/// Divides every atom mass by `n`.
pub fn rescale(m: &EmpiricalMeasure, n: u64) -> Result<EmpiricalMeasure> {
    m.rescale(n)
}

/// Monte Carlo estimate of `rho_{t/n} / n^2`, the rescaled gene count of a nested coalescent
/// coming down from infinity, using the given entrance proxy and the lazy engine.
pub fn cdi_speed_estimate(
    n: u64,
    t: f64,
    gene_rate: f64,
    proxy: &EntranceProxy,
    engine: Engine,
    replicates: usize,
    streams: &Streams,
) -> Result<MeanEstimate> {
    if replicates < 2 {
        return Err(Error::Precondition(format!(
            "the standard error needs at least 2 replicates, got {replicates}"
        )));
    }
    if n == 0 || !(t > 0.0) {
        return Err(domain("cdi speed needs n > 0 and t > 0"));
    }
    let fast = match engine {
        Engine::Lazy { fast_threshold } => fast_threshold,
        Engine::Direct => None,
    };
    let target = t / n as f64;
    let results = replicate(streams, "cdi-speed", replicates, |_, rng| -> Result<f64> {
        let (u0, start) = proxy.sample(gene_rate, fast, rng)?;
        if u0 >= target {
            return Err(Error::Precondition(format!(
                "warm start at {u0:e} is after the snapshot {target:e}; increase warm_species"
            )));
        }
        let rec = run(engine, &start, gene_rate, u0, &[target], rng)?;
        Ok(rec.snapshots[0].genes as f64 / (n as f64).powi(2))
    });
    let values = results.into_iter().collect::<Result<Vec<_>>>()?;
    mean_stderr(&values)
}
