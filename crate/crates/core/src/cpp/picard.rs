//! Picard iteration for the finite-population McKean-Vlasov equation
//!
//! `dx = -psi(x) dt + v_t dJ_t`, `J` Poisson with rate `1/(t + delta)`, `v_t ~ L(x_t)`.
//!
//! Each iterate is an ensemble of exact paths: jump times and post-jump values, with the flow
//! in between. Jump sizes of iterate `k` are read off a uniformly chosen path of iterate `k - 1`
//! at the exact jump time.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, FlowEvaluator, Mass};
use crate::rng::{replicate, Streams};
use crate::smoluchowski::InitialLaw;
use crate::stats::wasserstein1;

/// Smallest ensemble accepted: the empirical marginal drives every jump of the next iterate.
pub const MIN_ENSEMBLE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McKeanPath {
    /// `(time, value right after the event)`, starting with `(0, x_0)`.
    pub events: Vec<(f64, f64)>,
}

impl McKeanPath {
    pub fn at(&self, t: f64, flow: &FlowEvaluator) -> f64 {
        let k = self.events.partition_point(|e| e.0 <= t).max(1) - 1;
        let (s, x) = self.events[k];
        flow.flow_finite(x, t - s)
    }

    pub fn jumps(&self) -> usize {
        self.events.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardEnsemble {
    pub mechanism: BranchingMechanism,
    pub delta: f64,
    pub horizon: f64,
    pub iterations: usize,
    pub paths: Vec<McKeanPath>,
    /// W1 distance between the time-`horizon` marginals of iterates `k` and `k + 1`.
    pub w1_history: Vec<f64>,
}

impl PicardEnsemble {
    pub fn marginal(&self, t: f64) -> Vec<f64> {
        let flow = self.mechanism.flow();
        self.paths.iter().map(|p| p.at(t, &flow)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, times: &[f64]) -> Result<()> {
        let flow = self.mechanism.flow();
        writeln!(w, "replicate,t,m0")?;
        for (i, p) in self.paths.iter().enumerate() {
            for &t in times {
                writeln!(w, "{i},{t},{}", p.at(t, &flow))?;
            }
        }
        Ok(())
    }
}

fn sample_path<R: Rng + ?Sized>(
    nu: &InitialLaw,
    delta: f64,
    horizon: f64,
    flow: &FlowEvaluator,
    previous: Option<&[McKeanPath]>,
    rng: &mut R,
) -> McKeanPath {
    let mut x = nu.sample(rng);
    let mut s = 0.0;
    let mut events = vec![(0.0, x)];
    let Some(prev) = previous else {
        return McKeanPath { events };
    };
    loop {
        // Integrated rate from s to s' is ln((s' + delta) / (s + delta)).
        let e: f64 = Exp1.sample(rng);
        let next = (s + delta) * e.exp() - delta;
        if next > horizon {
            break;
        }
        let donor = &prev[rng.random_range(0..prev.len())];
        x = flow.flow_unchecked(Mass::Finite(x), next - s) + donor.at(next, flow);
        s = next;
        events.push((s, x));
    }
    McKeanPath { events }
}

/// Runs `iterations` Picard steps from the jump-free iterate and returns the last ensemble.
pub fn picard_mkv(
    nu: &InitialLaw,
    delta: f64,
    m: &BranchingMechanism,
    horizon: f64,
    ensemble: usize,
    iterations: usize,
    streams: &Streams,
) -> Result<PicardEnsemble> {
    nu.validate()?;
    if ensemble < MIN_ENSEMBLE {
        return Err(Error::Precondition(format!(
            "ensemble of {ensemble} paths is too small to estimate marginals; use at least {MIN_ENSEMBLE}"
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(crate::error::domain(format!(
            "picard needs delta > 0 and a finite horizon, got delta={delta}, T={horizon}"
        )));
    }
    if iterations == 0 {
        return Err(crate::error::domain("picard needs at least one iteration"));
    }
    let flow = m.flow();
    let mut paths = replicate(streams, "picard/0", ensemble, |_, rng| {
        sample_path(nu, delta, horizon, &flow, None, rng)
    });
    let mut w1_history = Vec::with_capacity(iterations);
    let mut last: Vec<f64> = paths.iter().map(|p| p.at(horizon, &flow)).collect();
    for k in 1..=iterations {
        let prev = &paths;
        let next = replicate(streams, &format!("picard/{k}"), ensemble, |_, rng| {
            sample_path(nu, delta, horizon, &flow, Some(prev), rng)
        });
        let marg: Vec<f64> = next.iter().map(|p| p.at(horizon, &flow)).collect();
        w1_history.push(wasserstein1(&last, &marg)?);
        last = marg;
        paths = next;
    }
    Ok(PicardEnsemble { mechanism: *m, delta, horizon, iterations, paths, w1_history })
}
