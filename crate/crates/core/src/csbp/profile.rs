//! Shooting solver for the self-similar profile `h(x) = E exp(-x Upsilon)` in the Feller case:
//!
//! `x (c h'' + beta h') + h^2 - h = 0`, `h(0) = 1`, `h` decreasing to 0.
//!
//! The equation is singular at 0; the solution is analytic there with `h'(0) = a` free, and the
//! power series `h = sum h_k x^k` obeys
//! `c k (k+1) h_{k+1} = -((beta k + 1) h_k + sum_{i=1}^{k-1} h_i h_{k-i})`.
//! Too shallow a slope makes `h` turn back up towards 1; too steep a slope makes it cross 0.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::ode::{integrate_to, integrate_with, Dopri5};

const SERIES_START: f64 = 1e-3;
const SERIES_TERMS: usize = 40;
const GRID_POINTS: usize = 8001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingDiagnostics {
    pub iterations: u32,
    /// Final bracket on `h'(0)`.
    pub slope_bracket: (f64, f64),
    /// Where the table stops: first sign of divergence, bracket endpoints more than 1% apart, or
    /// `x_max`.
    pub x_end: f64,
    pub h_end: f64,
    /// The accepted shot stayed admissible up to `x_max` before the bracket reached `tol`.
    pub reached_domain_end: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSolution {
    pub rate: f64,
    pub beta: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub dh: Vec<f64>,
    pub hprime0: f64,
    pub e_upsilon: f64,
    pub diagnostics: ShootingDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    /// `h` turned back up: the slope at 0 is not negative enough.
    Shallow,
    /// `h` crossed zero: the slope at 0 is too negative.
    Steep,
    /// Reached the end of the domain without deciding.
    Undecided,
}

fn series(a: f64, c: f64, beta: f64) -> Vec<f64> {
    let mut h = vec![0.0; SERIES_TERMS];
    h[0] = 1.0;
    h[1] = a;
    for k in 1..SERIES_TERMS - 1 {
        let conv: f64 = (1..k).map(|i| h[i] * h[k - i]).sum();
        h[k + 1] = -((beta * k as f64 + 1.0) * h[k] + conv) / (c * (k * (k + 1)) as f64);
    }
    h
}

fn series_eval(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for (k, &ck) in coeffs.iter().enumerate().rev() {
        v = v * x + ck;
        if k > 0 {
            d = d * x + k as f64 * ck;
        }
    }
    (v, d)
}

struct Problem {
    c: f64,
    beta: f64,
    x_max: f64,
    solver: Dopri5,
}

impl Problem {
    fn rhs(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        move |x, y, d| {
            d[0] = y[1];
            d[1] = (-self.beta * x * y[1] - y[0] * y[0] + y[0]) / (self.c * x);
        }
    }

    fn start(&self, a: f64) -> [f64; 2] {
        let (h, dh) = series_eval(&series(a, self.c, self.beta), SERIES_START);
        [h, dh]
    }

    fn shoot(&self, a: f64) -> Result<(Shot, f64)> {
        let mut verdict = Shot::Undecided;
        let (x, _) = integrate_with(
            &self.solver,
            self.rhs(),
            SERIES_START,
            &self.start(a),
            self.x_max,
            |_, y| {
                if y[0] < 0.0 {
                    verdict = Shot::Steep;
                    ControlFlow::Break(())
                } else if y[1] > 0.0 {
                    verdict = Shot::Shallow;
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            },
        )?;
        Ok((verdict, x))
    }
}

/// Solves the profile equation for a Feller mechanism `psi(x) = c x^2` on `[0, x_max]`.
///
/// `h'(0)` is bisected in `[-20 (beta/c)^beta, -(beta/c)^beta]` until the bracket is narrower than
/// `1e-3 tol` relative, or until a shot stays admissible on the whole domain. The accepted
/// trajectory must fall below `1e-6`. `E(Upsilon) = -h'(0)`.
pub fn profile_solve(m: &BranchingMechanism, x_max: f64, tol: f64) -> Result<ProfileSolution> {
    if !m.is_feller() {
        return Err(Error::Unsupported(format!(
            "the profile equation is second order only for gamma = 2, got {}",
            m.exponent()
        )));
    }
    if !(x_max > SERIES_START) || !(tol > 0.0) {
        return Err(domain("profile solve needs x_max > 0 and tol > 0"));
    }
    let (c, beta) = (m.rate(), m.beta());
    let k = (beta / c).powf(beta);
    let problem = Problem { c, beta, x_max, solver: Dopri5::new(1e-12, 1e-15) };

    let (mut shallow, mut steep) = (-k, -20.0 * k);
    let (s0, _) = problem.shoot(shallow)?;
    let (s1, _) = problem.shoot(steep)?;
    if s0 != Shot::Shallow || s1 != Shot::Steep {
        return Err(Error::Solver(format!(
            "no sign change for h'(0) in [{steep}, {shallow}]: endpoints classified {s1:?} and {s0:?}"
        )));
    }
    // Stops when the bracket is tight or when a shot survives the whole domain, in which case
    // x_max no longer separates the two failure modes.
    let mut iterations = 0;
    let mut reached_end = false;
    let mut a = 0.5 * (shallow + steep);
    while (shallow - steep).abs() > 1e-3 * tol * k && iterations < 200 {
        a = 0.5 * (shallow + steep);
        iterations += 1;
        match problem.shoot(a)?.0 {
            Shot::Shallow => shallow = a,
            Shot::Steep => steep = a,
            Shot::Undecided => {
                reached_end = true;
                break;
            }
        }
    }
    if !reached_end {
        a = 0.5 * (shallow + steep);
    }

    // Tabulate the accepted trajectory on a uniform grid. The two bracket endpoints are carried
    // along; once they disagree by more than 1% of h the tail is set by the growing mode rather
    // than by h'(0), and the table stops.
    let dx = x_max / (GRID_POINTS - 1) as f64;
    let mut xs = vec![0.0];
    let mut hs = vec![1.0];
    let mut dhs = vec![a];
    let slopes = [a, shallow, steep];
    let mut states = slopes.map(|s| problem.start(s));
    let mut x_prev = SERIES_START;
    for i in 1..GRID_POINTS {
        let x = i as f64 * dx;
        let mut ys = [[0.0; 2]; 3];
        for (k, &s) in slopes.iter().enumerate() {
            ys[k] = if x <= SERIES_START {
                let (h, d) = series_eval(&series(s, c, beta), x);
                [h, d]
            } else {
                let y = integrate_to(&problem.solver, problem.rhs(), x_prev, &states[k], x)?;
                states[k] = [y[0], y[1]];
                states[k]
            };
        }
        if x > SERIES_START {
            x_prev = x;
        }
        let y = ys[0];
        if y[0] < 0.0 || y[1] > 0.0 || (ys[1][0] - ys[2][0]).abs() > 1e-2 * y[0] {
            break;
        }
        xs.push(x);
        hs.push(y[0]);
        dhs.push(y[1]);
    }
    let x_end = *xs.last().expect("grid starts at 0");
    let h_end = *hs.last().expect("grid starts at 0");
    if h_end >= 1e-6 {
        return Err(Error::Solver(format!(
            "trajectory diverged at x={x_end} with h={h_end:e}; increase accuracy or x_max"
        )));
    }
    Ok(ProfileSolution {
        rate: c,
        beta,
        x: xs,
        h: hs,
        dh: dhs,
        hprime0: a,
        e_upsilon: -a,
        diagnostics: ShootingDiagnostics {
            iterations,
            slope_bracket: (steep, shallow),
            x_end,
            h_end,
            reached_domain_end: reached_end,
            tolerance: tol,
        },
    })
}

impl ProfileSolution {
    /// Linear interpolation of `h`; beyond the tabulated range `h` is below `h_end`.
    pub fn h_at(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain(format!("h is defined on [0, inf), got {x}")));
        }
        let dx = self.x[1] - self.x[0];
        let i = (x / dx).floor() as usize;
        if i + 1 >= self.x.len() {
            return Err(domain(format!(
                "x={x} lies beyond the tabulated range [0, {}]",
                self.diagnostics.x_end
            )));
        }
        let w = (x - self.x[i]) / dx;
        Ok(self.h[i] * (1.0 - w) + self.h[i + 1] * w)
    }

    /// ODE residual at interior grid points, with `h''` from central differences of `h'`.
    pub fn residuals(&self) -> Vec<(f64, f64)> {
        let dx = self.x[1] - self.x[0];
        (1..self.x.len() - 1)
            .map(|i| {
                let d2 = (self.dh[i + 1] - self.dh[i - 1]) / (2.0 * dx);
                let x = self.x[i];
                let h = self.h[i];
                (x, x * (self.rate * d2 + self.beta * self.dh[i]) + h * h - h)
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,h")?;
        for (x, h) in self.x.iter().zip(&self.h) {
            writeln!(w, "{x},{h}")?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rate": self.rate,
            "beta": self.beta,
            "e_upsilon": self.e_upsilon,
            "hprime0": self.hprime0,
            "shooting": self.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_satisfies_the_equation_near_zero() {
        let (c, beta, a) = (0.5, 1.0, -3.2);
        let coeffs = series(a, c, beta);
        let x = 0.01;
        let (h, d) = series_eval(&coeffs, x);
        let eps = 1e-5;
        let (_, dp) = series_eval(&coeffs, x + eps);
        let (_, dm) = series_eval(&coeffs, x - eps);
        let d2 = (dp - dm) / (2.0 * eps);
        let res = x * (c * d2 + beta * d) + h * h - h;
        assert!(res.abs() < 1e-9, "{res}");
    }

    #[test]
    fn profile_basic_properties() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let sol = profile_solve(&m, 20.0, 1e-8).unwrap();
        assert_eq!(sol.h[0], 1.0);
        let k = 1.0;
        for (x, h) in sol.x.iter().zip(&sol.h) {
            assert!(*h <= (-x * k).exp() + 1e-12, "x={x}: {h}");
        }
        assert!(sol.h.windows(2).all(|w| w[1] < w[0]));
        assert!(sol.e_upsilon > 1.0 && sol.e_upsilon < 20.0);
        let worst = sol.residuals().iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn rate_scaling() {
        // x = c y maps the c = 1 equation onto the rate-c one: h_c(x) = h_1(x / c).
        let one = profile_solve(&BranchingMechanism::quadratic(1.0).unwrap(), 20.0, 1e-8).unwrap();
        let half = profile_solve(&BranchingMechanism::quadratic(0.5).unwrap(), 10.0, 1e-8).unwrap();
        assert!((half.e_upsilon * 0.5 - one.e_upsilon).abs() < 1e-7 * one.e_upsilon);
        for x in [0.3, 1.0, 4.0] {
            assert!((half.h_at(0.5 * x).unwrap() - one.h_at(x).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_feller() {
        let m = BranchingMechanism::stable(1.0, 1.5).unwrap();
        assert!(matches!(profile_solve(&m, 10.0, 1e-8), Err(Error::Unsupported(_))));
    }
}
