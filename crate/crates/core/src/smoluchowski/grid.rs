//! Explicit finite differences for the Laplace transform of a weak solution in the Feller case:
//!
//! `u_t = b lambda u_ll + a(t) (u^2 - u)`, `a(t) = 1 / (t + delta)`, `psi(x) = b x^2`.
//!
//! The grid is `lambda = 0` followed by log-spaced nodes on `[lambda_min, lambda_max]` with the
//! probe values inserted, so probes are read off without interpolation. `u(t, 0) = 1` is pinned.
//! At `lambda_max` the diffusion term is dropped and only the reaction acts (outflow boundary).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::BranchingMechanism;

/// Largest overshoot outside `[0, 1]` that is clipped silently.
const CLIP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Log-spaced nodes on `[lambda_min, lambda_max]`, before probes are inserted.
    pub points: usize,
    /// Fraction of the stability bound used as time step.
    pub safety: f64,
    pub probes: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lambda_min: 1e-2, lambda_max: 1e3, points: 400, safety: 0.5, probes: Vec::new() }
    }
}

impl GridSpec {
    pub fn nodes(&self) -> Result<Vec<f64>> {
        if !(self.lambda_min > 0.0 && self.lambda_max > self.lambda_min) || self.points < 3 {
            return Err(domain(format!(
                "grid needs 0 < lambda_min < lambda_max and at least 3 points, got [{}, {}] with {}",
                self.lambda_min, self.lambda_max, self.points
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(domain(format!("safety factor must lie in (0, 1], got {}", self.safety)));
        }
        let (lo, hi) = (self.lambda_min.ln(), self.lambda_max.ln());
        let step = (hi - lo) / (self.points - 1) as f64;
        let mut nodes: Vec<f64> = (0..self.points).map(|i| (lo + step * i as f64).exp()).collect();
        for &p in &self.probes {
            if !(p >= 0.0 && p <= self.lambda_max) {
                return Err(domain(format!("probe {p} lies outside [0, {}]", self.lambda_max)));
            }
            nodes.push(p);
        }
        nodes.push(0.0);
        nodes.sort_by(f64::total_cmp);
        // Drop near-duplicates, keeping exact probe values.
        let mut out: Vec<f64> = Vec::with_capacity(nodes.len());
        for x in nodes {
            match out.last_mut() {
                Some(last) if x - *last <= 1e-3 * step * x => {
                    if self.probes.contains(&x) {
                        *last = x;
                    }
                }
                _ => out.push(x),
            }
        }
        Ok(out)
    }

    /// Same range with twice the density.
    pub fn refined(&self) -> GridSpec {
        GridSpec { points: 2 * self.points - 1, ..self.clone() }
    }

    /// Same density with `lambda_max` multiplied by `factor`.
    pub fn extended(&self, factor: f64) -> GridSpec {
        let decades = (self.lambda_max / self.lambda_min).ln();
        let extra = ((self.points - 1) as f64 * factor.ln() / decades).round() as usize;
        GridSpec { lambda_max: self.lambda_max * factor, points: self.points + extra, ..self.clone() }
    }
}

/// State of the scheme: `u(time, lambda_j)` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceGrid {
    pub lambda: Vec<f64>,
    pub u: Vec<f64>,
    pub time: f64,
    pub delta: f64,
    pub safety: f64,
}

impl LaplaceGrid {
    /// Seeds the grid with `u(t0, lambda) = initial(lambda)`. With `delta = 0` the start time must
    /// be positive and `initial` must be the transform of an admissible solution at `t0`.
    pub fn new<F: Fn(f64) -> f64>(spec: &GridSpec, delta: f64, t0: f64, initial: F) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() || !(t0 >= 0.0) {
            return Err(domain(format!("need finite delta >= 0 and t0 >= 0, got {delta}, {t0}")));
        }
        if delta == 0.0 && t0 == 0.0 {
            return Err(domain(
                "delta = 0 needs a positive start time: the coagulation rate 1/t is singular at 0",
            ));
        }
        let lambda = spec.nodes()?;
        let u: Vec<f64> = lambda.iter().map(|&l| initial(l)).collect();
        if (u[0] - 1.0).abs() > 1e-12 {
            return Err(domain(format!("initial transform must be 1 at lambda = 0, got {}", u[0])));
        }
        if let Some(j) = (0..u.len()).find(|&j| !(u[j] >= 0.0 && u[j] <= 1.0)) {
            return Err(domain(format!("initial transform {} at lambda={} is not in [0, 1]", u[j], lambda[j])));
        }
        if let Some(j) = (1..u.len()).find(|&j| u[j] > u[j - 1] + 1e-12) {
            return Err(domain(format!("initial transform increases at lambda={}", lambda[j])));
        }
        Ok(LaplaceGrid { lambda, u, time: t0, delta, safety: spec.safety })
    }

    /// Largest violations of monotonicity (`u_{j+1} - u_j`, positive is bad) and of convexity
    /// (negative second divided difference, scaled to the local spacing).
    pub fn shape_violations(&self) -> (f64, f64) {
        let l = &self.lambda;
        let u = &self.u;
        let mono = u.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        let mut convex = 0.0f64;
        for j in 1..u.len() - 1 {
            let s1 = (u[j] - u[j - 1]) / (l[j] - l[j - 1]);
            let s2 = (u[j + 1] - u[j]) / (l[j + 1] - l[j]);
            convex = convex.max((s1 - s2) * (l[j + 1] - l[j - 1]) / 2.0);
        }
        (mono, convex)
    }
}

/// Time-step bound of the explicit scheme for `psi = b x^2` and reaction rate at most `a_max`.
fn stable_step(lambda: &[f64], b: f64, a_max: f64, safety: f64) -> f64 {
    let mut worst = a_max;
    for j in 1..lambda.len() - 1 {
        let (hm, hp) = (lambda[j] - lambda[j - 1], lambda[j + 1] - lambda[j]);
        worst = worst.max(2.0 * b * lambda[j] / (hm * hp) + a_max);
    }
    safety / worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub lambda: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j] = u(times[i], lambda[j])`.
    pub values: Vec<Vec<f64>>,
    pub dt: f64,
    pub steps: u64,
    /// Largest monotonicity and convexity violations seen at the recorded times.
    pub shape_violations: (f64, f64),
    /// Largest `|u(t, 0) - 1|` seen at the recorded times.
    pub mass_defect: f64,
}

impl PdeSolution {
    /// `u(t, lambda)` at a recorded time and a grid node (probes are grid nodes).
    pub fn value(&self, t: f64, lambda: f64) -> Result<f64> {
        let i = self.times.iter().position(|&s| s == t);
        let j = self.lambda.iter().position(|&l| l == lambda);
        match (i, j) {
            (Some(i), Some(j)) => Ok(self.values[i][j]),
            _ => Err(domain(format!("(t={t}, lambda={lambda}) is not a recorded grid point"))),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,lambda,u")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (l, u) in self.lambda.iter().zip(row) {
                writeln!(w, "{t},{l},{u}")?;
            }
        }
        Ok(())
    }
}

/// Advances `grid` with `psi = b x^2` and records `u` at each time of `record` (increasing, not
/// before the grid time).
pub fn solve_laplace_pde(grid: LaplaceGrid, m: &BranchingMechanism, record: &[f64]) -> Result<PdeSolution> {
    if !m.is_feller() {
        return Err(Error::Unsupported(format!(
            "the grid solver handles psi = b x^2 only, got gamma = {}",
            m.exponent()
        )));
    }
    if record.windows(2).any(|w| !(w[1] > w[0])) || record.first().is_some_and(|&t| t < grid.time) {
        return Err(domain("record times must increase and not precede the start time"));
    }
    let b = m.rate();
    let LaplaceGrid { lambda, mut u, mut time, delta, safety } = grid;
    let a_max = 1.0 / (time + delta);
    let dt = stable_step(&lambda, b, a_max, safety);
    let n = lambda.len();
    // Stencil weights of the nonuniform second difference, times b lambda.
    let weights: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            if j == 0 || j == n - 1 {
                return [0.0; 3];
            }
            let (hm, hp) = (lambda[j] - lambda[j - 1], lambda[j + 1] - lambda[j]);
            let k = 2.0 * b * lambda[j];
            [k / (hm * (hm + hp)), -k / (hm * hp), k / (hp * (hm + hp))]
        })
        .collect();
    let mut next = u.clone();
    let mut values = Vec::with_capacity(record.len());
    let mut steps = 0u64;
    let mut shape = (f64::NEG_INFINITY, 0.0f64);
    let mut mass_defect = 0.0f64;
    for &target in record {
        while time < target {
            let h = dt.min(target - time);
            let a = 1.0 / (time + delta);
            next[0] = 1.0;
            for j in 1..n {
                let diffusion = if j < n - 1 {
                    let w = &weights[j];
                    w[0] * u[j - 1] + w[1] * u[j] + w[2] * u[j + 1]
                } else {
                    0.0
                };
                let v = u[j] + h * (diffusion + a * (u[j] * u[j] - u[j]));
                next[j] = if (0.0..=1.0).contains(&v) {
                    v
                } else if (-CLIP_TOLERANCE..=1.0 + CLIP_TOLERANCE).contains(&v) {
                    v.clamp(0.0, 1.0)
                } else {
                    return Err(Error::Stability {
                        time: time + h,
                        lambda: lambda[j],
                        value: v,
                        advice: dt / 4.0,
                    });
                };
            }
            std::mem::swap(&mut u, &mut next);
            time = if target - time <= dt { target } else { time + h };
            steps += 1;
        }
        let view = LaplaceGrid { lambda: lambda.clone(), u: u.clone(), time, delta, safety };
        let (mono, convex) = view.shape_violations();
        shape = (shape.0.max(mono), shape.1.max(convex));
        mass_defect = mass_defect.max((u[0] - 1.0).abs());
        values.push(u.clone());
    }
    Ok(PdeSolution { lambda, times: record.to_vec(), values, dt, steps, shape_violations: shape, mass_defect })
}

/// Grid values at probes together with an error estimate: the spread between the grid and its
/// refinement plus the spread between `lambda_max` and `10 lambda_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProbe {
    pub t: f64,
    pub lambda: f64,
    pub u: f64,
    pub error: f64,
}

pub fn solve_with_error<F: Fn(f64) -> f64>(
    spec: &GridSpec,
    delta: f64,
    t0: f64,
    initial: F,
    m: &BranchingMechanism,
    record: &[f64],
) -> Result<(PdeSolution, Vec<GridProbe>)> {
    let fine_spec = spec.refined();
    let coarse = solve_laplace_pde(LaplaceGrid::new(spec, delta, t0, &initial)?, m, record)?;
    let fine = solve_laplace_pde(LaplaceGrid::new(&fine_spec, delta, t0, &initial)?, m, record)?;
    let wide = solve_laplace_pde(LaplaceGrid::new(&spec.extended(10.0), delta, t0, &initial)?, m, record)?;
    let mut probes = Vec::new();
    for &t in record {
        for &l in &spec.probes {
            let u = fine.value(t, l)?;
            let error = (coarse.value(t, l)? - u).abs() + (wide.value(t, l)? - coarse.value(t, l)?).abs();
            probes.push(GridProbe { t, lambda: l, u, error });
        }
    }
    Ok((fine, probes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(b: f64) -> BranchingMechanism {
        BranchingMechanism::quadratic(b).unwrap()
    }

    fn small() -> GridSpec {
        GridSpec { lambda_min: 0.05, lambda_max: 200.0, points: 120, probes: vec![1.0], ..GridSpec::default() }
    }

    #[test]
    fn dirac_at_zero_is_a_fixed_point() {
        let g = LaplaceGrid::new(&small(), 1.0, 0.0, |_| 1.0).unwrap();
        let sol = solve_laplace_pde(g, &quad(0.5), &[0.5, 1.0]).unwrap();
        assert!(sol.values.iter().flatten().all(|&u| (u - 1.0).abs() < 1e-14));
    }

    #[test]
    fn normalisation_and_shape() {
        let g = LaplaceGrid::new(&small(), 1.0, 0.0, |l| (-l).exp()).unwrap();
        let sol = solve_laplace_pde(g, &quad(0.5), &[0.25, 1.0]).unwrap();
        for row in &sol.values {
            assert_eq!(row[0], 1.0);
            assert!(row[1] > 0.8 && row[1] < 1.0);
        }
        assert!(sol.shape_violations.0 <= 0.0);
        assert!(sol.shape_violations.1 < 1e-8);
    }

    #[test]
    fn pure_transport_matches_the_flow() {
        // Huge delta switches coagulation off: u(t, l) = exp(-flow(1, t) l) for a point mass at 1.
        let spec = GridSpec { lambda_min: 1e-2, lambda_max: 100.0, points: 300, probes: vec![0.2, 1.0, 5.0], ..GridSpec::default() };
        let g = LaplaceGrid::new(&spec, 1e12, 0.0, |l| (-l).exp()).unwrap();
        let sol = solve_laplace_pde(g, &quad(0.5), &[1.0]).unwrap();
        let x = 1.0 / (1.0 + 0.5);
        for l in [0.2, 1.0, 5.0] {
            let err = (sol.value(1.0, l).unwrap() - (-x * l).exp()).abs();
            assert!(err < 5e-3, "lambda={l}: {err}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LaplaceGrid::new(&small(), 0.0, 0.0, |l| (-l).exp()).is_err());
        assert!(LaplaceGrid::new(&small(), 1.0, 0.0, |l| 0.5 * (-l).exp()).is_err());
        let g = LaplaceGrid::new(&small(), 1.0, 0.0, |l| (-l).exp()).unwrap();
        let m = BranchingMechanism::stable(1.0, 1.5).unwrap();
        assert!(matches!(solve_laplace_pde(g, &m, &[1.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn oversized_step_is_reported() {
        let mut g = LaplaceGrid::new(&small(), 1.0, 0.0, |l| (-l).exp()).unwrap();
        g.safety = 40.0;
        match solve_laplace_pde(g, &quad(0.5), &[1.0]) {
            Err(Error::Stability { advice, .. }) => assert!(advice > 0.0),
            other => panic!("expected a stability error, got {other:?}"),
        }
    }
}
