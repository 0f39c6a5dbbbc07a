//! Block-counting kernels for a Kingman coalescent with pair rate `rate`.
//!
//! From level `k` the next merger happens after an Exp(rate k(k-1)/2) time. Descents over many
//! levels can optionally be bridged: above a threshold the hitting time of a level is drawn from a
//! moment-matched Gamma law, and the level reached after a given time from a Gaussian law with the
//! exact first-order mean and variance. Below the threshold every merger is sampled.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};

/// Default level above which descents are bridged instead of sampled merger by merger.
pub const DEFAULT_FAST_THRESHOLD: u64 = 1024;

/// Levels below which hitting times are always summed exactly.
const EXACT_TAIL: u64 = 64;

/// Trigamma function: asymptotic series for `x >= 16`, recurrence below.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 16.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

fn inv(level: Option<u64>) -> f64 {
    level.map_or(0.0, |k| 1.0 / k as f64)
}

/// Mean and variance of the time to descend from `from` (None = infinity) to `to`.
pub fn hitting_moments(from: Option<u64>, to: u64, rate: f64) -> (f64, f64) {
    debug_assert!(to >= 1);
    let a = to as f64;
    let mean = 2.0 / rate * (1.0 / a - inv(from));
    // sum_{i=to+1}^{from} (1/(i-1) - 1/i)^2
    let sq = |lo: f64, hi: Option<f64>| trigamma(lo) - hi.map_or(0.0, |h| trigamma(h + 1.0));
    let s = match from {
        Some(b) => {
            let b = b as f64;
            sq(a, Some(b - 1.0)) + sq(a + 1.0, Some(b)) - 2.0 * (1.0 / a - 1.0 / b)
        }
        None => sq(a, None) + sq(a + 1.0, None) - 2.0 / a,
    };
    (mean, 4.0 / (rate * rate) * s.max(0.0))
}

fn exact_hitting<R: Rng + ?Sized>(from: u64, to: u64, rate: f64, rng: &mut R) -> f64 {
    let mut t = 0.0;
    for i in (to + 1..=from).rev() {
        let r = rate * (i as f64) * ((i - 1) as f64) / 2.0;
        t += Exp::new(r).expect("positive rate").sample(rng);
    }
    t
}

fn gamma_with_moments<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    if var <= 0.0 {
        return mean;
    }
    let shape = mean * mean / var;
    Gamma::new(shape, var / mean).expect("valid gamma").sample(rng)
}

/// Time for the block count to go from `from` (None = infinity) down to `to`.
pub fn hitting_time<R: Rng + ?Sized>(from: Option<u64>, to: u64, rate: f64, rng: &mut R) -> f64 {
    let to = to.max(1);
    if let Some(k) = from {
        if k <= to {
            return 0.0;
        }
        if k - to <= EXACT_TAIL {
            return exact_hitting(k, to, rate, rng);
        }
    }
    let mid = to.max(EXACT_TAIL);
    let (mean, var) = hitting_moments(from, mid, rate);
    gamma_with_moments(mean, var, rng) + exact_hitting(mid, to, rate, rng)
}

/// Gaussian draw of the level reached after `duration` from `k`, given its deterministic
/// counterpart `nbar`, restricted to levels in `[floor, k]`.
fn bridged_level<R: Rng + ?Sized>(k: u64, nbar: f64, floor: u64, rng: &mut R) -> u64 {
    let frac = nbar / k as f64;
    let sd = (nbar / 3.0 * (1.0 - frac * frac * frac)).max(0.0).sqrt();
    let normal = Normal::new(nbar, sd).expect("finite parameters");
    loop {
        let x = normal.sample(rng).round();
        if x >= floor as f64 && x <= k as f64 {
            return x as u64;
        }
        if sd == 0.0 {
            return (nbar.round() as u64).clamp(floor, k);
        }
    }
}

/// Block count after running a Kingman coalescent from `k` blocks for `duration`.
///
/// With `fast = None` every merger is sampled, which is exact. With `fast = Some(j)` descents
/// that stay above level `j` are bridged.
pub fn descent<R: Rng + ?Sized>(
    k: u64,
    rate: f64,
    duration: f64,
    fast: Option<u64>,
    rng: &mut R,
) -> u64 {
    let mut k = k;
    let mut remaining = duration;
    if k <= 1 || remaining <= 0.0 {
        return k;
    }
    if let Some(j) = fast {
        let j = j.max(EXACT_TAIL);
        if k > j {
            let nbar = 1.0 / (1.0 / k as f64 + rate * remaining / 2.0);
            if nbar >= j as f64 {
                return bridged_level(k, nbar, 1, rng);
            }
            let (mean, var) = hitting_moments(Some(k), j, rate);
            let t = gamma_with_moments(mean, var, rng);
            if t >= remaining {
                return bridged_level(k, nbar, j + 1, rng);
            }
            remaining -= t;
            k = j;
        }
    }
    while k > 1 {
        let r = rate * (k as f64) * ((k - 1) as f64) / 2.0;
        let dt = Exp::new(r).expect("positive rate").sample(rng);
        if dt > remaining {
            break;
        }
        remaining -= dt;
        k -= 1;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::stats::{ks_two_sample, mean_stderr};

    #[test]
    fn trigamma_reference() {
        // psi_1(1) = pi^2 / 6, psi_1(1/2) = pi^2 / 2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn hitting_moments_match_direct_sums() {
        for &(from, to, rate) in &[(Some(500u64), 70u64, 1.0), (Some(10_000), 100, 0.5), (None, 200, 2.0)] {
            let top = from.unwrap_or(2_000_000);
            let (mut m, mut v) = (0.0, 0.0);
            for i in (to + 1)..=top {
                let r = rate * (i as f64) * ((i - 1) as f64) / 2.0;
                m += 1.0 / r;
                v += 1.0 / (r * r);
            }
            if from.is_none() {
                // tail beyond the truncation point
                m += 2.0 / (rate * top as f64);
            }
            let (mean, var) = hitting_moments(from, to, rate);
            assert!((mean - m).abs() < 1e-6 * m, "{mean} {m}");
            assert!((var - v).abs() < 1e-5 * v, "{var} {v}");
        }
    }

    #[test]
    fn exact_descent_single_step_mean() {
        let s = Streams::new(11);
        let mut rng = s.get("t", 0);
        // P(still at 2 after t) = exp(-rate t)
        let stay = (0..20_000)
            .filter(|_| descent(2, 1.0, 0.7, None, &mut rng) == 2)
            .count() as f64
            / 20_000.0;
        assert!((stay - (-0.7f64).exp()).abs() < 0.015);
    }

    #[test]
    fn bridged_descent_matches_exact() {
        let s = Streams::new(5);
        for &(k, dur) in &[(100_000u64, 1e-3), (50_000, 1.6e-3), (400_000, 2e-5)] {
            let mut r1 = s.get("exact", k);
            let mut r2 = s.get("fast", k);
            let a: Vec<f64> = (0..400).map(|_| descent(k, 1.0, dur, None, &mut r1) as f64).collect();
            let b: Vec<f64> = (0..400)
                .map(|_| descent(k, 1.0, dur, Some(DEFAULT_FAST_THRESHOLD), &mut r2) as f64)
                .collect();
            let ks = ks_two_sample(&a, &b).unwrap();
            assert!(!ks.rejected_at(0.001), "k={k}: {ks:?}");
            let (ma, mb) = (mean_stderr(&a).unwrap(), mean_stderr(&b).unwrap());
            assert!((ma.mean - mb.mean).abs() < 4.0 * ma.stderr.hypot(mb.stderr));
        }
    }

    #[test]
    fn hitting_time_mean() {
        let s = Streams::new(3);
        let mut rng = s.get("h", 0);
        let xs: Vec<f64> = (0..4000).map(|_| hitting_time(None, 1000, 1.0, &mut rng)).collect();
        let m = mean_stderr(&xs).unwrap();
        assert!((m.mean - 2e-3).abs() < 4.0 * m.stderr);
        let xs: Vec<f64> = (0..4000).map(|_| hitting_time(Some(5000), 10, 1.0, &mut rng)).collect();
        let m = mean_stderr(&xs).unwrap();
        assert!((m.mean - 2.0 * (0.1 - 1.0 / 5000.0)).abs() < 4.0 * m.stderr);
    }
}
