//! Limits of partial markings as the starting level goes to 0: the maximal marking (infinite
//! initial marks), whose eternal branch at time 1 is a sample of `Upsilon`, and dust solutions
//! (initial marks `delta_k X`).

use serde::{Deserialize, Serialize};

use super::{eternal_branch_mark, sample_cpp, MarkInit};
use crate::error::{domain, Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::rng::{replicate, Streams};
use crate::smoluchowski::InitialLaw;
use crate::stats::{mean_stderr, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalConfig {
    /// First level; level `k` is `delta0 2^-k`.
    pub delta0: f64,
    pub max_levels: usize,
    /// Successive levels must agree to this relative tolerance at every grid time.
    pub tol_rel: f64,
    /// Initial window length, as a multiple of the last grid time.
    pub window_factor: f64,
}

impl Default for MaximalConfig {
    fn default() -> Self {
        MaximalConfig { delta0: 0.1, max_levels: 24, tol_rel: 1e-3, window_factor: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalMarking {
    pub mechanism: BranchingMechanism,
    pub times: Vec<f64>,
    /// `m_0^+(t)` on `times`, one row per converged replicate.
    pub values: Vec<Vec<f64>>,
    /// Finest level used by each converged replicate.
    pub levels: Vec<usize>,
    /// Replicates that did not converge within `max_levels`; excluded from `values`.
    pub flagged: usize,
}

impl MaximalMarking {
    pub fn flagged_rate(&self) -> f64 {
        self.flagged as f64 / (self.flagged + self.values.len()).max(1) as f64
    }

    /// Samples of `t^beta m_0^+(t)`, which are distributed as `Upsilon` for every grid time `t`.
    pub fn rescaled_at(&self, t: f64) -> Result<Vec<f64>> {
        let j = self
            .times
            .iter()
            .position(|&s| s == t)
            .ok_or_else(|| domain(format!("t={t} is not on the marking grid")))?;
        let f = t.powf(self.mechanism.beta());
        Ok(self.values.iter().map(|row| f * row[j]).collect())
    }

    /// The `Upsilon` bank: `m_0^+(1)`.
    pub fn upsilon(&self) -> Result<Vec<f64>> {
        self.rescaled_at(1.0)
    }
}

/// Writes a bank as CSV with a single `sample` column.
pub fn write_bank<W: std::io::Write>(mut w: W, bank: &[f64]) -> Result<()> {
    writeln!(w, "sample")?;
    for x in bank {
        writeln!(w, "{x}")?;
    }
    Ok(())
}

/// Per replicate: one CPP realization, refined level by level; the marking from `+inf` at level
/// `delta_k` decreases in `k`, and the first level that agrees with its predecessor to `tol_rel`
/// at every grid time is kept.
pub fn maximal_marking_upsilon(
    m: &BranchingMechanism,
    cfg: &MaximalConfig,
    times: &[f64],
    replicates: usize,
    streams: &Streams,
) -> Result<MaximalMarking> {
    if !(cfg.delta0 > 0.0) || !(cfg.tol_rel > 0.0) || !(cfg.window_factor > 0.0) {
        return Err(domain(format!("invalid maximal-marking configuration {cfg:?}")));
    }
    if times.is_empty() || !(times[0] > cfg.delta0) {
        return Err(domain(format!("grid times must exceed the first level {}", cfg.delta0)));
    }
    let flow = m.flow();
    let horizon = *times.last().expect("nonempty");
    let results = replicate(streams, "maximal", replicates, |_, rng| -> Result<Option<(Vec<f64>, usize)>> {
        let mut cpp = sample_cpp(cfg.window_factor * horizon, cfg.delta0, rng)?;
        cpp.ensure_window(horizon, rng)?;
        let mut prev = eternal_branch_mark(&cpp, cfg.delta0, &MarkInit::Infinite, &flow, times, rng)?.m0;
        for k in 1..=cfg.max_levels {
            let delta = cfg.delta0 * 0.5f64.powi(k as i32);
            cpp.refine(delta, rng)?;
            let cur = eternal_branch_mark(&cpp, delta, &MarkInit::Infinite, &flow, times, rng)?.m0;
            let done = prev.iter().zip(&cur).all(|(a, b)| (a - b).abs() <= cfg.tol_rel * b);
            if done {
                return Ok(Some((cur, k)));
            }
            prev = cur;
        }
        Ok(None)
    });
    let mut values = Vec::new();
    let mut levels = Vec::new();
    let mut flagged = 0;
    for r in results {
        match r? {
            Some((v, k)) => {
                values.push(v);
                levels.push(k);
            }
            None => flagged += 1,
        }
    }
    Ok(MaximalMarking { mechanism: *m, times: times.to_vec(), values, levels, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DustRow {
    pub t: f64,
    pub mean: MeanEstimate,
    /// Empirical `P(m_0(t) > threshold)`.
    pub exceed: f64,
    pub zeros: usize,
    /// `E(X) t`: the upper envelope when the exponential limit has mean `t`.
    pub upper_bound: f64,
    /// `E(X) / t`: the upper envelope when the exponential limit has rate `t`.
    pub upper_bound_rate: f64,
    /// `E[(c (gamma-1) t + (E(X) e)^(1-gamma))^(-beta)]` with `e` exponential of mean `t`.
    pub lower_bound: f64,
    /// Same with `e` exponential of rate `t`.
    pub lower_bound_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DustReport {
    pub law: InitialLaw,
    pub deltas: Vec<f64>,
    pub threshold: f64,
    pub rows: Vec<DustRow>,
    /// `mean_by_delta[k][j]`: mean of `m_0(times[j])` at level `deltas[k]`.
    pub mean_by_delta: Vec<Vec<f64>>,
    /// Samples at the finest level, one row per grid time.
    pub samples: Vec<Vec<f64>>,
}

impl DustReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean,upper_bound,lower_bound")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.t, r.mean.mean, r.upper_bound, r.lower_bound)?;
        }
        Ok(())
    }

    /// Which candidate upper envelope holds at every grid time (mean of `m_0` below it).
    pub fn envelopes_holding(&self) -> (bool, bool) {
        let mean_t = self.rows.iter().all(|r| r.mean.mean <= r.upper_bound);
        let rate_t = self.rows.iter().all(|r| r.mean.mean <= r.upper_bound_rate);
        (mean_t, rate_t)
    }
}

fn lower_envelope(m: &BranchingMechanism, ex: f64, t: f64, mean_e: f64, streams: &Streams) -> Result<f64> {
    let flow = m.flow();
    let draws = replicate(streams, &format!("dust-envelope/{t}/{mean_e}"), 20_000, |_, rng| {
        let e: f64 = rand_distr::Distribution::sample(&rand_distr::Exp1, rng);
        flow.flow_finite(ex * mean_e * e, t)
    });
    Ok(mean_stderr(&draws)?.mean)
}

/// Partial markings with initial marks `delta_k X` on a shared CPP per replicate, for every
/// level in `deltas` (decreasing). Statistics are reported for the finest level.
pub fn dust_solution(
    x_law: &InitialLaw,
    deltas: &[f64],
    m: &BranchingMechanism,
    times: &[f64],
    replicates: usize,
    threshold: f64,
    streams: &Streams,
) -> Result<DustReport> {
    x_law.validate()?;
    let ex = x_law.mean();
    if !(ex > 0.0) {
        return Err(domain("the dust construction needs E(X) > 0"));
    }
    if deltas.is_empty() || deltas.windows(2).any(|w| !(w[1] < w[0])) || !(deltas[deltas.len() - 1] > 0.0) {
        return Err(domain("levels must be positive and decreasing"));
    }
    if times.is_empty() || !(times[0] >= deltas[0]) {
        return Err(domain("grid times must not be below the first level"));
    }
    if replicates < 2 {
        return Err(Error::Precondition("need at least 2 replicates".into()));
    }
    let flow = m.flow();
    let horizon = *times.last().expect("nonempty");
    let runs = replicate(streams, &format!("dust/{ex}"), replicates, |_, rng| -> Result<Vec<Vec<f64>>> {
        let mut cpp = sample_cpp(4.0 * horizon, deltas[0], rng)?;
        cpp.ensure_window(horizon, rng)?;
        let mut out = Vec::with_capacity(deltas.len());
        for &d in deltas {
            cpp.refine(d, rng)?;
            let init = MarkInit::Law(x_law.scaled(d));
            out.push(eternal_branch_mark(&cpp, d, &init, &flow, times, rng)?.m0);
        }
        Ok(out)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let finest = deltas.len() - 1;
    let mean_by_delta = (0..deltas.len())
        .map(|k| {
            (0..times.len())
                .map(|j| runs.iter().map(|r| r[k][j]).sum::<f64>() / replicates as f64)
                .collect()
        })
        .collect();
    let samples: Vec<Vec<f64>> =
        (0..times.len()).map(|j| runs.iter().map(|r| r[finest][j]).collect()).collect();
    let mut rows = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let xs = &samples[j];
        rows.push(DustRow {
            t,
            mean: mean_stderr(xs)?,
            exceed: xs.iter().filter(|&&x| x > threshold).count() as f64 / xs.len() as f64,
            zeros: xs.iter().filter(|&&x| x == 0.0).count(),
            upper_bound: ex * t,
            upper_bound_rate: ex / t,
            lower_bound: lower_envelope(m, ex, t, t, streams)?,
            lower_bound_rate: lower_envelope(m, ex, t, 1.0 / t, streams)?,
        });
    }
    Ok(DustReport { law: *x_law, deltas: deltas.to_vec(), threshold, rows, mean_by_delta, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpp::CppSample;
    use crate::mechanism::Mass;

    #[test]
    fn levels_decrease_pathwise() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let f = m.flow();
        let s = Streams::new(12);
        let times = [0.5, 1.0, 2.0];
        for i in 0..50 {
            let mut rng = s.get("mono", i);
            let mut cpp = sample_cpp(8.0, 0.1, &mut rng).unwrap();
            cpp.ensure_window(2.0, &mut rng).unwrap();
            let mut prev = eternal_branch_mark(&cpp, 0.1, &MarkInit::Infinite, &f, &times, &mut rng).unwrap().m0;
            for k in 1..8 {
                let d = 0.1 * 0.5f64.powi(k);
                cpp.refine(d, &mut rng).unwrap();
                let cur = eternal_branch_mark(&cpp, d, &MarkInit::Infinite, &f, &times, &mut rng).unwrap().m0;
                for (a, b) in prev.iter().zip(&cur) {
                    assert!(*b <= *a * (1.0 + 1e-12), "level {k}: {b} > {a}");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn coupled_scaling_is_pathwise() {
        let m = BranchingMechanism::stable(0.7, 1.5).unwrap();
        let f = m.flow();
        let mut rng = Streams::new(5).get("scale", 0);
        let mut cpp = sample_cpp(6.0, 0.05, &mut rng).unwrap();
        cpp.ensure_window(2.0, &mut rng).unwrap();
        let tau = 3.0;
        let big: CppSample = cpp.scaled(tau).unwrap();
        let times = [0.2, 1.0, 2.0];
        let scaled_times: Vec<f64> = times.iter().map(|t| tau * t).collect();
        let a = eternal_branch_mark(&cpp, 0.05, &MarkInit::Infinite, &f, &times, &mut rng).unwrap();
        let b = eternal_branch_mark(&big, 0.05 * tau, &MarkInit::Infinite, &f, &scaled_times, &mut rng).unwrap();
        let k = tau.powf(-m.beta());
        for (x, y) in a.m0.iter().zip(&b.m0) {
            assert!((k * x - y).abs() <= 1e-12 * y, "{x} {y}");
        }
    }

    #[test]
    fn upsilon_respects_growth() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let cfg = MaximalConfig::default();
        let mk = maximal_marking_upsilon(&m, &cfg, &[1.0], 40, &Streams::new(9)).unwrap();
        assert_eq!(mk.flagged, 0);
        let phi1 = m.flow().flow(Mass::Infinite, 1.0).unwrap();
        assert!(mk.upsilon().unwrap().iter().all(|&y| y >= phi1));
    }

    #[test]
    fn dust_is_positive_and_ordered() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let deltas = [1e-2, 2.5e-3];
        let times = [0.1, 0.5];
        let lo = dust_solution(&InitialLaw::PointMass { at: 1.0 }, &deltas, &m, &times, 200, 0.1, &Streams::new(1)).unwrap();
        let hi = dust_solution(&InitialLaw::PointMass { at: 3.0 }, &deltas, &m, &times, 200, 0.1, &Streams::new(1)).unwrap();
        for r in lo.rows.iter().chain(&hi.rows) {
            assert_eq!(r.zeros, 0);
            assert!(r.lower_bound <= r.upper_bound);
        }
        assert!(hi.rows[1].mean.mean > lo.rows[1].mean.mean);
    }
}
