//! Continuous-state branching processes with stable mechanism `c x^gamma - r x`.
//!
//! Transitions are sampled exactly in the Feller case `gamma = 2`, where the Laplace exponent is
//! fractional linear, `u_t(l) = A l / (1 + B l)`, so `Z_t` given `Z_0 = x` is a Poisson(x A / B)
//! number of independent exponentials with mean `B`.

mod profile;

pub use profile::{profile_solve, ProfileSolution, ShootingDiagnostics};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::rng::{replicate, Streams};
use crate::smoluchowski::MarkedTree;
use crate::stats::mean_stderr;

/// Mechanism `psi(l) - r l` with a stable base `psi(l) = c l^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedMechanism {
    base: BranchingMechanism,
    shift: f64,
}

impl ShiftedMechanism {
    pub fn new(base: BranchingMechanism, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(domain(format!("shift must be finite, got {shift}")));
        }
        Ok(ShiftedMechanism { base, shift })
    }

    /// The unshifted CSBP.
    pub fn plain(base: BranchingMechanism) -> Self {
        ShiftedMechanism { base, shift: 0.0 }
    }

    /// Shift `r = beta`, the process driving the self-similar profile.
    pub fn self_similar(base: BranchingMechanism) -> Self {
        ShiftedMechanism { base, shift: base.beta() }
    }

    pub fn base(&self) -> BranchingMechanism {
        self.base
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    fn check_supported(&self) -> Result<()> {
        if self.base.exponent() <= 1.0 {
            return Err(Error::Unsupported(format!(
                "extinction formulas need gamma > 1, got {}",
                self.base.exponent()
            )));
        }
        Ok(())
    }

    fn require_feller(&self) -> Result<()> {
        if !self.base.is_feller() {
            return Err(Error::Unsupported(format!(
                "exact transitions are only available for gamma = 2, got {}",
                self.base.exponent()
            )));
        }
        Ok(())
    }

    /// `varphi_r(t)`: with `P_x(T_0 < t) = exp(-x varphi_r(t))`.
    pub fn extinction_rate(&self, t: f64) -> Result<f64> {
        self.check_supported()?;
        if !(t > 0.0) {
            return Err(domain(format!("time must be positive, got {t}")));
        }
        Ok(self.extinction_rate_unchecked(t))
    }

    fn extinction_rate_unchecked(&self, t: f64) -> f64 {
        let (c, beta, r) = (self.base.rate(), self.base.beta(), self.shift);
        if r == 0.0 {
            (beta / (c * t)).powf(beta)
        } else {
            ((r / c) / -(-r * t / beta).exp_m1()).powf(beta)
        }
    }

    /// `P_x(T_0 < infinity)`: `exp(-x (r/c)^beta)` for `r > 0`, one otherwise.
    pub fn extinction_probability(&self, x: f64) -> Result<f64> {
        self.check_supported()?;
        if !(x >= 0.0) {
            return Err(domain(format!("mass must be nonnegative, got {x}")));
        }
        Ok(if self.shift > 0.0 {
            (-x * (self.shift / self.base.rate()).powf(self.base.beta())).exp()
        } else {
            1.0
        })
    }

    /// Laplace exponent `u_t(l)`: `E_x exp(-l Z_t) = exp(-x u_t(l))`.
    pub fn laplace_exponent(&self, lambda: f64, t: f64) -> Result<f64> {
        self.check_supported()?;
        if !(lambda >= 0.0) || !(t >= 0.0) {
            return Err(domain("laplace exponent needs lambda, t >= 0"));
        }
        if lambda == 0.0 || t == 0.0 {
            return Ok(lambda);
        }
        if lambda.is_infinite() {
            return Ok(self.extinction_rate_unchecked(t));
        }
        let (c, g1, r) = (self.base.rate(), self.base.exponent() - 1.0, self.shift);
        let w = if r == 0.0 {
            lambda.powf(-g1) + c * g1 * t
        } else {
            let decay = (-r * g1 * t).exp();
            (c / r) * (1.0 - decay) + lambda.powf(-g1) * decay
        };
        Ok(w.powf(-1.0 / g1))
    }

    /// `(A, B)` with `u_t(l) = A l / (1 + B l)`, Feller case only.
    pub fn feller_params(&self, t: f64) -> Result<(f64, f64)> {
        self.require_feller()?;
        if !(t > 0.0) {
            return Err(domain(format!("time must be positive, got {t}")));
        }
        let (c, r) = (self.base.rate(), self.shift);
        Ok(if r == 0.0 {
            (1.0, c * t)
        } else {
            ((r * t).exp(), c * (r * t).exp_m1() / r)
        })
    }

    /// Samples `Z_t` given `Z_0 = x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, t: f64, rng: &mut R) -> Result<f64> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(domain(format!("mass must be finite and >= 0, got {x}")));
        }
        let (a, b) = self.feller_params(t)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let n = poisson(x * a / b, rng);
        Ok(gamma_sum(n, b, rng))
    }

    /// Samples `Z_t` conditioned on `Z_t > 0`; `None` when that event has probability below
    /// `1e-12`.
    pub fn sample_positive<R: Rng + ?Sized>(
        &self,
        x: f64,
        t: f64,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let (a, b) = self.feller_params(t)?;
        let mean = x * a / b;
        if -(-mean).exp_m1() < 1e-12 {
            return Ok(None);
        }
        let n = zero_truncated_poisson(mean, rng);
        Ok(Some(gamma_sum(n, b, rng)))
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

fn zero_truncated_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 1.0 {
        loop {
            let n = poisson(mean, rng);
            if n > 0 {
                return n;
            }
        }
    }
    // Inversion: P(N = k | N >= 1) = mean^k / (k! (e^mean - 1)).
    let mut u: f64 = rng.random::<f64>() * mean.exp_m1();
    let mut k = 1u64;
    let mut term = mean;
    loop {
        if u < term || term == 0.0 {
            return k;
        }
        u -= term;
        k += 1;
        term *= mean / k as f64;
    }
}

/// Sum of `n` independent exponentials with mean `scale`.
fn gamma_sum<R: Rng + ?Sized>(n: u64, scale: f64, rng: &mut R) -> f64 {
    match n {
        0 => 0.0,
        1 => scale * <Exp1 as Distribution<f64>>::sample(&Exp1, rng),
        _ => Gamma::new(n as f64, scale).expect("valid gamma").sample(rng),
    }
}

/// `P(T_0 < t)` for the shifted process started at `x`.
pub fn extinction_time_cdf(sm: &ShiftedMechanism, x: f64, t: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("mass must be nonnegative, got {x}")));
    }
    Ok((-x * sm.extinction_rate(t)?).exp())
}

/// Exact sample of `Z_t` given `Z_0 = x` in the Feller case.
pub fn feller_transition_sample<R: Rng + ?Sized>(
    sm: &ShiftedMechanism,
    x: f64,
    t: f64,
    rng: &mut R,
) -> Result<f64> {
    sm.sample(x, t, rng)
}

/// Masses at the leaves of `tree` for a particle system started from mass `x` at the root:
/// masses follow independent CSBPs along branches and are duplicated at branch points.
/// Leaves are returned in the order of [`MarkedTree::leaves`].
pub fn sample_tree_masses<R: Rng + ?Sized>(
    sm: &ShiftedMechanism,
    tree: &MarkedTree,
    x: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut at_end = vec![0.0; tree.node_count()];
    let mut stack = vec![(tree.root(), x)];
    while let Some((node, mass)) = stack.pop() {
        let len = tree.branch_length(node);
        let m = if mass == 0.0 || len == 0.0 { mass } else { sm.sample(mass, len, rng)? };
        at_end[node] = m;
        if let Some([a, b]) = tree.children(node) {
            stack.push((b, m));
            stack.push((a, m));
        }
    }
    Ok(tree.leaves().iter().map(|&l| at_end[l]).collect())
}

/// Three-valued outcome of a truncated branching exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Extinct,
    Undecided,
    Survived,
}

impl Outcome {
    fn and(self, other: Outcome) -> Outcome {
        use Outcome::*;
        match (self, other) {
            (Survived, _) | (_, Survived) => Survived,
            (Undecided, _) | (_, Undecided) => Undecided,
            _ => Extinct,
        }
    }
}

/// Bracketed estimate of the total-extinction probability `h(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionBracket {
    /// Undecided replicates scored as survival.
    pub lower: f64,
    /// Undecided replicates scored as extinction.
    pub upper: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub undecided: usize,
    /// Bracket wider than the requested tolerance.
    pub inconclusive: bool,
}

/// Above `x (r/c)^beta = MASS_CUTOFF` a subtree is scored as surviving; its extinction
/// probability is below `exp(-MASS_CUTOFF)`.
pub const MASS_CUTOFF: f64 = 40.0;
pub const DEFAULT_DEPTH_CAP: u32 = 60;

struct Frame {
    mass: f64,
    depth: u32,
    pending: u8,
    acc: Outcome,
}

fn explore<R: Rng + ?Sized>(
    sm: &ShiftedMechanism,
    x: f64,
    depth_cap: u32,
    cutoff_mass: f64,
    rng: &mut R,
) -> Result<Outcome> {
    let mut stack: Vec<Frame> = Vec::new();
    let mut current = (x, 0u32);
    loop {
        let (mass, depth) = current;
        let mut out = if mass > cutoff_mass {
            Outcome::Survived
        } else if depth >= depth_cap {
            Outcome::Undecided
        } else {
            let tau: f64 = Exp1.sample(rng);
            let p_alive = -(-mass * sm.extinction_rate_unchecked(tau)).exp_m1();
            if rng.random::<f64>() >= p_alive {
                Outcome::Extinct
            } else if let Some(y) = sm.sample_positive(mass, tau, rng)? {
                stack.push(Frame { mass: y, depth: depth + 1, pending: 2, acc: Outcome::Extinct });
                current = (y, depth + 1);
                continue;
            } else {
                Outcome::Extinct
            }
        };
        loop {
            let Some(frame) = stack.last_mut() else {
                return Ok(out);
            };
            frame.acc = frame.acc.and(out);
            frame.pending -= 1;
            if frame.acc == Outcome::Survived || frame.pending == 0 {
                out = frame.acc;
                stack.pop();
            } else {
                current = (frame.mass, frame.depth);
                break;
            }
        }
    }
}

/// Monte Carlo bracket for the probability that a branching CSBP (branch rate 1, masses
/// following the shifted Feller process) started from one particle of mass `x` eventually has
/// zero total mass.
pub fn branching_extinction_mc(
    sm: &ShiftedMechanism,
    x: f64,
    depth_cap: u32,
    replicates: usize,
    tolerance: f64,
    streams: &Streams,
) -> Result<ExtinctionBracket> {
    sm.require_feller()?;
    if depth_cap < 10 {
        return Err(domain(format!("depth cap must be at least 10, got {depth_cap}")));
    }
    if !(x > 0.0) || replicates < 2 {
        return Err(domain("need x > 0 and at least 2 replicates"));
    }
    let k = (sm.shift.max(0.0) / sm.base.rate()).powf(sm.base.beta());
    let cutoff = if k > 0.0 { MASS_CUTOFF / k } else { f64::INFINITY };
    let outcomes = replicate(streams, "branching-extinction", replicates, |_, rng| {
        explore(sm, x, depth_cap, cutoff, rng)
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let lower: Vec<f64> = outcomes.iter().map(|&o| (o == Outcome::Extinct) as u8 as f64).collect();
    let undecided = outcomes.iter().filter(|&&o| o == Outcome::Undecided).count();
    let lo = mean_stderr(&lower)?;
    let upper = lo.mean + undecided as f64 / replicates as f64;
    Ok(ExtinctionBracket {
        lower: lo.mean,
        upper,
        stderr: lo.stderr,
        replicates,
        undecided,
        inconclusive: upper - lo.mean > tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate_to, Dopri5};

    fn feller(c: f64, r: f64) -> ShiftedMechanism {
        ShiftedMechanism::new(BranchingMechanism::quadratic(c).unwrap(), r).unwrap()
    }

    #[test]
    fn extinction_cdf_examples() {
        let sm = feller(1.0, 0.0);
        assert!((extinction_time_cdf(&sm, 1.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((extinction_time_cdf(&sm, 1e-14, 3.0).unwrap() - 1.0).abs() < 1e-13);
        let ss = ShiftedMechanism::self_similar(BranchingMechanism::quadratic(1.0).unwrap());
        assert!((extinction_time_cdf(&ss, 1.0, 60.0).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((ss.extinction_probability(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stable_extinction_rate_is_flow_from_infinity() {
        let m = BranchingMechanism::stable(0.7, 1.6).unwrap();
        let sm = ShiftedMechanism::plain(m);
        for t in [0.1, 1.0, 4.0] {
            let a = sm.extinction_rate(t).unwrap();
            let b = m.flow().phi(t).unwrap();
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn laplace_exponent_matches_ode_oracle() {
        for &(c, gamma, r) in &[(1.0, 2.0, 0.0), (1.0, 2.0, 1.0), (0.5, 2.0, -0.7), (0.8, 1.5, 2.0)] {
            let sm = ShiftedMechanism::new(BranchingMechanism::stable(c, gamma).unwrap(), r).unwrap();
            for lambda in [0.2, 1.0, 5.0] {
                for t in [0.1, 1.0] {
                    let rhs = |_: f64, y: &[f64], d: &mut [f64]| d[0] = -(c * y[0].max(0.0).powf(gamma) - r * y[0]);
                    let oracle = integrate_to(&Dopri5::new(1e-12, 1e-15), rhs, 0.0, &[lambda], t).unwrap()[0];
                    let u = sm.laplace_exponent(lambda, t).unwrap();
                    assert!((u - oracle).abs() < 1e-9 * oracle, "{c} {gamma} {r} {lambda} {t}: {u} {oracle}");
                    if gamma == 2.0 {
                        let (a, b) = sm.feller_params(t).unwrap();
                        assert!((a * lambda / (1.0 + b * lambda) - oracle).abs() < 1e-9 * oracle);
                    }
                }
            }
        }
    }

    #[test]
    fn transition_examples() {
        let sm = feller(1.0, 0.0);
        let s = Streams::new(1);
        let mut rng = s.get("t", 0);
        assert_eq!(sm.sample(0.0, 1.0, &mut rng).unwrap(), 0.0);
        let xs: Vec<f64> = (0..100_000).map(|_| sm.sample(1.0, 1.0, &mut rng).unwrap()).collect();
        let zero = xs.iter().filter(|&&z| z == 0.0).count() as f64 / xs.len() as f64;
        assert!((zero - (-1.0f64).exp()).abs() < 4.0 * (0.37 * 0.63 / 1e5f64).sqrt());
        let lt = mean_stderr(&xs.iter().map(|z| (-z).exp()).collect::<Vec<_>>()).unwrap();
        assert!((lt.mean - (-0.5f64).exp()).abs() < 4.0 * lt.stderr);
    }

    #[test]
    fn non_feller_transitions_are_unsupported() {
        let sm = ShiftedMechanism::plain(BranchingMechanism::stable(1.0, 1.5).unwrap());
        let mut rng = Streams::new(0).get("x", 0);
        assert!(matches!(sm.sample(1.0, 1.0, &mut rng), Err(Error::Unsupported(_))));
        assert!(feller(1.0, 0.0).sample(1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn positive_conditioning_is_exact() {
        let sm = feller(1.0, 0.5);
        let s = Streams::new(2);
        let mut rng = s.get("p", 0);
        // E[exp(-Z) | Z > 0] from the unconditioned transform.
        let (x, t) = (0.3, 0.8);
        let p0 = extinction_time_cdf(&sm, x, t).unwrap();
        let full = (-x * sm.laplace_exponent(1.0, t).unwrap()).exp();
        let target = (full - p0) / (1.0 - p0);
        let v: Vec<f64> = (0..100_000)
            .map(|_| (-sm.sample_positive(x, t, &mut rng).unwrap().unwrap()).exp())
            .collect();
        let m = mean_stderr(&v).unwrap();
        assert!((m.mean - target).abs() < 4.0 * m.stderr, "{m:?} {target}");
    }

    #[test]
    fn outcome_logic() {
        use Outcome::*;
        assert_eq!(Extinct.and(Extinct), Extinct);
        assert_eq!(Extinct.and(Undecided), Undecided);
        assert_eq!(Undecided.and(Survived), Survived);
    }
}
