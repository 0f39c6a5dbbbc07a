//! Brownian coalescent point process and its markings.
//!
//! A CPP sample holds the points `(l, t)` of a Poisson process with intensity `dl dt / t^2` on
//! `(0, L] x [floor, inf)`, sorted by `l`. The vertical branch at `l` lives up to height `t` and
//! then merges into the nearest branch on its left that is still alive; the eternal branch sits at
//! `l = 0`.
//!
//! Marks start at level `delta`, follow `x' = -psi(x)` along branches and add up at merges. The
//! mark carried by a branch when it dies only depends on the points between it and the next point
//! to its right that is higher, so all death marks come out of one right-to-left scan with a
//! monotone stack. The eternal branch absorbs the left-to-right height records.

mod maximal;
mod picard;

pub use maximal::{
    dust_solution, maximal_marking_upsilon, write_bank, DustReport, DustRow, MaximalConfig,
    MaximalMarking,
};
pub use picard::{picard_mkv, McKeanPath, PicardEnsemble, MIN_ENSEMBLE};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::{BranchingMechanism, FlowEvaluator, Mass};
use crate::rng::{replicate, Streams};
use crate::smoluchowski::InitialLaw;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppSample {
    length: f64,
    floor: f64,
    l: Vec<f64>,
    t: Vec<f64>,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as usize
    }
}

/// Exact sample: `Poisson(L / floor)` points, `l` uniform on `(0, L]`, `t = floor / U`.
pub fn sample_cpp<R: Rng + ?Sized>(length: f64, floor: f64, rng: &mut R) -> Result<CppSample> {
    if !(length > 0.0) || !length.is_finite() || !(floor > 0.0) || !floor.is_finite() {
        return Err(domain(format!("cpp needs L > 0 and floor > 0, got L={length}, floor={floor}")));
    }
    let mut s = CppSample { length: 0.0, floor, l: Vec::new(), t: Vec::new() };
    s.extend(length, rng)?;
    Ok(s)
}

impl CppSample {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.l.iter().copied().zip(self.t.iter().copied())
    }

    /// Grows the window to `(0, length]`, keeping the existing points.
    pub fn extend<R: Rng + ?Sized>(&mut self, length: f64, rng: &mut R) -> Result<()> {
        if !(length >= self.length) || !length.is_finite() {
            return Err(domain(format!("cannot shrink the window from {} to {length}", self.length)));
        }
        let n = poisson((length - self.length) / self.floor, rng);
        let mut new: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let l = length - (length - self.length) * rng.random::<f64>();
                let u = 1.0 - rng.random::<f64>();
                (l, self.floor / u)
            })
            .collect();
        new.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (l, t) in new {
            self.l.push(l);
            self.t.push(t);
        }
        self.length = length;
        Ok(())
    }

    /// Lowers the floor to `floor`, adding the points with heights in `[floor, old floor)`.
    pub fn refine<R: Rng + ?Sized>(&mut self, floor: f64, rng: &mut R) -> Result<()> {
        if !(floor > 0.0 && floor <= self.floor) {
            return Err(domain(format!("cannot raise the floor from {} to {floor}", self.floor)));
        }
        let (lo, hi) = (1.0 / self.floor, 1.0 / floor);
        let n = poisson(self.length * (hi - lo), rng);
        let mut new: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let l = self.length * (1.0 - rng.random::<f64>());
                // 1/t is uniform on (1/old, 1/floor]
                let inv = hi - (hi - lo) * rng.random::<f64>();
                (l, 1.0 / inv)
            })
            .collect();
        new.sort_by(|a, b| a.0.total_cmp(&b.0));
        let old: Vec<(f64, f64)> = self.points().collect();
        let (mut i, mut j) = (0, 0);
        self.l.clear();
        self.t.clear();
        while i < old.len() || j < new.len() {
            let take_old = j == new.len() || (i < old.len() && old[i].0 <= new[j].0);
            let (l, t) = if take_old { i += 1; old[i - 1] } else { j += 1; new[j - 1] };
            self.l.push(l);
            self.t.push(t);
        }
        self.floor = floor;
        Ok(())
    }

    /// Image under `(l, t) -> (tau l, tau t)`.
    pub fn scaled(&self, tau: f64) -> Result<CppSample> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(domain(format!("scaling factor must be positive, got {tau}")));
        }
        Ok(CppSample {
            length: tau * self.length,
            floor: tau * self.floor,
            l: self.l.iter().map(|x| tau * x).collect(),
            t: self.t.iter().map(|x| tau * x).collect(),
        })
    }

    /// Index of the left-most point higher than `horizon`: the eternal branch's subtree up to
    /// `horizon` lies strictly to its left.
    pub fn guard(&self, horizon: f64) -> Option<usize> {
        self.t.iter().position(|&t| t > horizon)
    }

    /// Doubles the window until it contains a point higher than `horizon`.
    pub fn ensure_window<R: Rng + ?Sized>(&mut self, horizon: f64, rng: &mut R) -> Result<()> {
        while self.guard(horizon).is_none() {
            if self.length > 1e12 * horizon.max(self.floor) {
                return Err(Error::WindowExhausted { length: self.length, horizon });
            }
            self.extend(2.0 * self.length, rng)?;
        }
        Ok(())
    }
}

/// Initial marks at level `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkInit {
    Infinite,
    Law(InitialLaw),
}

impl MarkInit {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Mass {
        match self {
            MarkInit::Infinite => Mass::Infinite,
            MarkInit::Law(law) => Mass::Finite(law.sample(rng)),
        }
    }
}

/// Eternal-branch trajectory of a partial marking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marking {
    pub delta: f64,
    pub times: Vec<f64>,
    /// `m_0(t)` on `times`; `+inf` only at `t = delta` with infinite initial marks.
    pub m0: Vec<f64>,
    /// Times at which the eternal branch absorbed another branch, up to the last grid time.
    pub events: Vec<f64>,
}

#[inline]
fn advance(flow: &FlowEvaluator, m: Mass, dt: f64) -> Mass {
    if dt <= 0.0 {
        m
    } else {
        Mass::Finite(flow.flow_unchecked(m, dt))
    }
}

/// Marks the CPP above level `delta` and returns the eternal branch on `times` (sorted, in
/// `[delta, inf)`). Initial marks are drawn on demand: eternal branch first, then right to left.
pub fn eternal_branch_mark<R: Rng + ?Sized>(
    cpp: &CppSample,
    delta: f64,
    init: &MarkInit,
    flow: &FlowEvaluator,
    times: &[f64],
    rng: &mut R,
) -> Result<Marking> {
    if !(delta >= cpp.floor) || !delta.is_finite() {
        return Err(domain(format!("marking level {delta} is below the sample floor {}", cpp.floor)));
    }
    if let MarkInit::Law(law) = init {
        law.validate()?;
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] >= w[0])) || !(times[0] >= delta) {
        return Err(domain("grid times must be sorted and not below the marking level"));
    }
    let horizon = *times.last().expect("nonempty");
    let guard = cpp.guard(horizon).ok_or(Error::WindowExhausted { length: cpp.length, horizon })?;

    let w0 = init.draw(rng);
    // Stack of (death time, death mark); from the top, death times increase.
    let mut stack: Vec<(f64, Mass)> = Vec::new();
    for i in (0..guard).rev() {
        let ti = cpp.t[i];
        if ti < delta {
            continue;
        }
        let mut cur = init.draw(rng);
        let mut prev = delta;
        while let Some(&(h, m)) = stack.last() {
            if h >= ti {
                break;
            }
            stack.pop();
            cur = advance(flow, cur, h - prev) + m;
            prev = h;
        }
        stack.push((ti, advance(flow, cur, ti - prev)));
    }

    let mut m0 = Vec::with_capacity(times.len());
    let mut cur = w0;
    let mut prev = delta;
    let mut events = Vec::new();
    let mut next = stack.len();
    for &t in times {
        while next > 0 && stack[next - 1].0 <= t {
            let (h, m) = stack[next - 1];
            cur = advance(flow, cur, h - prev) + m;
            prev = h;
            events.push(h);
            next -= 1;
        }
        cur = advance(flow, cur, t - prev);
        prev = t;
        m0.push(cur.to_f64());
    }
    Ok(Marking { delta, times: times.to_vec(), m0, events })
}

/// `m_0` on `times` for `replicates` independent CPP samples marked from level `delta`.
pub fn mark_replicates(
    delta: f64,
    init: &MarkInit,
    m: &BranchingMechanism,
    times: &[f64],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<Vec<f64>>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(domain(format!("marking level must be positive and finite, got {delta}")));
    }
    let horizon = *times.last().ok_or_else(|| domain("empty time grid"))?;
    let flow = m.flow();
    let runs = replicate(streams, &format!("cpp-mark/{delta}"), replicates, |_, rng| -> Result<Vec<f64>> {
        let mut cpp = sample_cpp(4.0 * horizon, delta, rng)?;
        cpp.ensure_window(horizon, rng)?;
        Ok(eternal_branch_mark(&cpp, delta, init, &flow, times, rng)?.m0)
    });
    runs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::BranchingMechanism;
    use crate::rng::Streams;
    use crate::stats::{ks_one_sample, mean_stderr};

    fn quad() -> FlowEvaluator {
        BranchingMechanism::quadratic(1.0).unwrap().flow()
    }

    #[test]
    fn point_counts_and_heights() {
        let s = Streams::new(1);
        let mut rng = s.get("cpp", 0);
        let mut counts = Vec::new();
        let mut above = 0usize;
        let mut total = 0usize;
        for _ in 0..2000 {
            let c = sample_cpp(10.0, 0.1, &mut rng).unwrap();
            counts.push(c.len() as f64);
            above += c.points().filter(|p| p.1 > 0.2).count();
            total += c.len();
            assert!(c.points().all(|p| p.1 >= 0.1 && p.0 > 0.0 && p.0 <= 10.0));
        }
        let m = mean_stderr(&counts).unwrap();
        assert!((m.mean - 100.0).abs() < 4.0 * m.stderr);
        let frac = above as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!(sample_cpp(1.0, 1e9, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn refine_and_extend_keep_order() {
        let mut rng = Streams::new(2).get("cpp", 0);
        let mut c = sample_cpp(3.0, 0.5, &mut rng).unwrap();
        let before: Vec<_> = c.points().collect();
        c.refine(0.05, &mut rng).unwrap();
        c.extend(6.0, &mut rng).unwrap();
        let pts: Vec<_> = c.points().collect();
        assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(before.iter().all(|p| pts.contains(p)));
        assert!(pts.iter().all(|p| p.1 >= 0.05));
    }

    #[test]
    fn no_points_means_pure_transport() {
        let c = CppSample { length: 1.0, floor: 0.1, l: vec![0.5], t: vec![100.0] };
        let mut rng = Streams::new(0).get("m", 0);
        let init = MarkInit::Law(InitialLaw::PointMass { at: 2.0 });
        let mk = eternal_branch_mark(&c, 0.5, &init, &quad(), &[0.5, 1.0, 3.0], &mut rng).unwrap();
        for (t, m) in mk.times.iter().zip(&mk.m0) {
            assert!((m - quad().flow(Mass::Finite(2.0), t - 0.5).unwrap()).abs() < 1e-15);
        }
        assert!(mk.events.is_empty());
    }

    #[test]
    fn hand_built_tree() {
        // Points: a (0.1, 1.0), b (0.2, 0.5), guard (0.3, 10). b merges into a at 0.5,
        // a merges into the eternal branch at 1.0.
        let c = CppSample { length: 1.0, floor: 0.1, l: vec![0.1, 0.2, 0.3], t: vec![1.0, 0.5, 10.0] };
        let f = quad();
        let mut rng = Streams::new(0).get("m", 0);
        let init = MarkInit::Law(InitialLaw::PointMass { at: 1.0 });
        let mk = eternal_branch_mark(&c, 0.25, &init, &f, &[2.0], &mut rng).unwrap();
        let fl = |x: f64, t: f64| f.flow(Mass::Finite(x), t).unwrap();
        let b = fl(1.0, 0.25);
        let a = fl(fl(1.0, 0.25) + b, 0.5);
        let expect = fl(fl(1.0, 0.75) + a, 1.0);
        assert!((mk.m0[0] - expect).abs() < 1e-14);
        assert_eq!(mk.events, vec![1.0]);
    }

    #[test]
    fn window_exhaustion_is_reported() {
        let c = CppSample { length: 1.0, floor: 0.1, l: vec![0.5], t: vec![0.3] };
        let mut rng = Streams::new(0).get("m", 0);
        let r = eternal_branch_mark(&c, 0.1, &MarkInit::Infinite, &quad(), &[1.0], &mut rng);
        assert!(matches!(r, Err(Error::WindowExhausted { .. })));
    }

    #[test]
    fn infinite_init_growth_and_jump_clock() {
        let s = Streams::new(7);
        let f = quad();
        let mut log_gaps = Vec::new();
        for i in 0..400 {
            let mut rng = s.get("g", i);
            let mut c = sample_cpp(4.0, 0.01, &mut rng).unwrap();
            c.ensure_window(50.0, &mut rng).unwrap();
            let times: Vec<f64> = (1..=50).map(|k| k as f64).collect();
            let mk = eternal_branch_mark(&c, 0.01, &MarkInit::Infinite, &f, &times, &mut rng).unwrap();
            for (t, m) in times.iter().zip(&mk.m0) {
                assert!(*m >= f.phi(t - 0.01).unwrap() * (1.0 - 1e-12));
            }
            // Only the first two gaps: later ones are censored by the horizon.
            let mut prev = 0.01;
            for &e in mk.events.iter().take(2) {
                log_gaps.push((e / prev).ln());
                prev = e;
            }
        }
        // Absorption events form a Poisson process with rate 1/t on [delta, inf): log-gaps are
        // Exp(1). Censoring at t = 50 affects the first two gaps with probability below 0.3%.
        let ks = ks_one_sample(&log_gaps, |x| 1.0 - (-x).exp()).unwrap();
        assert!(!ks.rejected_at(0.01), "{ks:?}");
    }
}
