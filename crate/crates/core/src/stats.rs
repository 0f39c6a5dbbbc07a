//! Monte Carlo summaries and distribution comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum sample size for the asymptotic KS p-value to be meaningful.
pub const KS_MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> Result<MeanEstimate> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "standard error needs at least 2 samples, got {n}"
        )));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        count: n,
    })
}

/// Mean of `f(x)` with its standard error.
pub fn mean_of<F: Fn(f64) -> f64>(xs: &[f64], f: F) -> Result<MeanEstimate> {
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    mean_stderr(&ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn rejected_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Survival function of the Kolmogorov distribution, P(K > x).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.27 {
        // The alternating series converges badly here; the probability is 1 to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted_finite(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::Precondition(format!("{what} contains NaN")));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn stephens_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < KS_MIN_SAMPLES || b.len() < KS_MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "KS needs at least {KS_MIN_SAMPLES} samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let a = sorted_finite(a, "first sample")?;
    let b = sorted_finite(b, "second sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: stephens_p(d, na * nb / (na + nb)),
    })
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> Result<KsResult> {
    if xs.len() < KS_MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "KS needs at least {KS_MIN_SAMPLES} samples, got {}",
            xs.len()
        )));
    }
    let v = sorted_finite(xs, "sample")?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: stephens_p(d, n),
    })
}

/// Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("Wasserstein distance of an empty sample".into()));
    }
    let a = sorted_finite(a, "first sample")?;
    let b = sorted_finite(b, "second sample")?;
    // Integrate |F_a - F_b| over the merged support.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        prev = x;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(total)
}

/// Empirical quantile with linear interpolation, `p` in [0, 1].
pub fn quantile(xs: &[f64], p: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Precondition("quantile of an empty sample".into()));
    }
    let v = sorted_finite(xs, "sample")?;
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}
